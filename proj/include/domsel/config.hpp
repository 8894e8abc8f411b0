#pragma once

// Pipeline configuration: one JSON document, every key optional, unknown keys
// rejected. Stage seeds default to values derived from the global seed.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "domsel/adapt.hpp"
#include "domsel/corpus.hpp"
#include "domsel/downstream.hpp"
#include "domsel/embed.hpp"
#include "domsel/error.hpp"
#include "domsel/gbdt.hpp"
#include "domsel/simfeat.hpp"
#include "domsel/synth.hpp"
#include "domsel/util.hpp"

namespace domsel {

struct DomainSource {
  std::string name;
  std::filesystem::path path;
  CorpusFormat format = CorpusFormat::jsonl;
  std::optional<double> binarize_threshold;
};

struct SentenceConfig {
  SentenceMode mode = SentenceMode::mean_pooled;
  std::filesystem::path path;  // file_loaded only
  SkipgramParams skipgram{16, 5, 5, 5, 0.025, 0.0001, 0};
};

struct PipelineConfig {
  std::uint64_t seed = 1;
  std::vector<DomainSource> domains;
  std::optional<SyntheticSpec> synthetic;
  SplitRatios ratios;
  SkipgramParams embed;  // per-domain tables (f10)
  SentenceConfig sentence;
  int lm_min_count = 1;
  double lm_discount = 0.75;
  FeatureParams features;
  std::vector<AdaptVariant> variants = {AdaptVariant::none, AdaptVariant::sda, AdaptVariant::msdar};
  AdaptConfig sda = AdaptConfig::sda_defaults();
  AdaptConfig msda = [] {
    AdaptConfig c;
    c.variant = AdaptVariant::msda;
    return c;
  }();
  AdaptConfig msdar = AdaptConfig::msdar_defaults();
  ClassifierParams classifier;
  int downstream_runs = 3;
  double success_threshold = 0.8;
  std::vector<std::string> meta_modes = {"predictor", "ranker"};
  GbdtParams gbdt;
  int multisort_repeats = 11;
  std::vector<std::pair<std::string, std::string>> pca_pairs;  // empty: first two domains

  // Explicit per-stage seeds; stages without one derive theirs from `seed`.
  std::map<std::string, std::uint64_t> stage_seeds;

  std::uint64_t stage_seed(const std::string& stage) const {
    auto it = stage_seeds.find(stage);
    return it != stage_seeds.end() ? it->second : derive_seed(seed, "stage/" + stage);
  }

  /// --seed N: replaces the global seed and drops explicit stage seeds.
  void override_seed(std::uint64_t s) {
    seed = s;
    stage_seeds.clear();
  }

  const AdaptConfig& adapt_config(AdaptVariant v) const {
    switch (v) {
      case AdaptVariant::sda: return sda;
      case AdaptVariant::msda: return msda;
      case AdaptVariant::msdar: return msdar;
      case AdaptVariant::none: break;
    }
    throw ValidationError("dt has no adaptation config");
  }
  AdaptConfig& adapt_config(AdaptVariant v) {
    return const_cast<AdaptConfig&>(static_cast<const PipelineConfig&>(*this).adapt_config(v));
  }

  std::vector<std::uint64_t> downstream_seeds() const {
    std::vector<std::uint64_t> out;
    for (int k = 0; k < downstream_runs; ++k)
      out.push_back(derive_seed(stage_seed("downstream"), "run/" + std::to_string(k)));
    return out;
  }

  void validate() const;
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::vector<std::string>& allowed, const std::string& prefix) {
  if (!j.is_object()) throw ValidationError("config: '" + (prefix.empty() ? std::string("<root>") : prefix) + "' must be an object");
  for (const auto& [k, v] : j.items())
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw ValidationError("unknown config key '" + (prefix.empty() ? k : prefix + "." + k) + "'");
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& prefix) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError("config key '" + (prefix.empty() ? std::string(key) : prefix + "." + key) + "' has the wrong type");
  }
}

inline void read_seed(const nlohmann::json& j, const std::string& stage, PipelineConfig& cfg, const std::string& prefix) {
  if (!j.contains("seed")) return;
  std::uint64_t s = 0;
  read(j, "seed", s, prefix);
  cfg.stage_seeds[stage] = s;
}

inline void read_skipgram(const nlohmann::json& j, SkipgramParams& p, const std::string& prefix) {
  read(j, "dim", p.dim, prefix);
  read(j, "window", p.window, prefix);
  read(j, "negatives", p.negatives, prefix);
  read(j, "epochs", p.epochs, prefix);
  read(j, "alpha_start", p.alpha_start, prefix);
  read(j, "alpha_end", p.alpha_end, prefix);
}

inline nlohmann::ordered_json skipgram_json(const SkipgramParams& p) {
  return {{"dim", p.dim},           {"window", p.window},       {"negatives", p.negatives},
          {"epochs", p.epochs},     {"alpha_start", p.alpha_start}, {"alpha_end", p.alpha_end}};
}

inline void read_adapt(const nlohmann::json& j, AdaptConfig& c, const std::string& prefix) {
  const bool sda = c.variant == AdaptVariant::sda;
  if (sda)
    check_keys(j, {"layers", "noise_scale", "epochs", "batch", "step"}, prefix);
  else
    check_keys(j, {"layers", "dropout", "lambda", "R"}, prefix);
  read(j, "layers", c.layers, prefix);
  if (sda) {
    read(j, "noise_scale", c.noise_scale, prefix);
    read(j, "epochs", c.epochs, prefix);
    read(j, "batch", c.batch, prefix);
    read(j, "step", c.step, prefix);
  } else {
    read(j, "dropout", c.dropout, prefix);
    read(j, "lambda", c.lambda, prefix);
    read(j, "R", c.reg_target, prefix);
  }
}

inline nlohmann::ordered_json adapt_json(const AdaptConfig& c) {
  if (c.variant == AdaptVariant::sda)
    return {{"layers", c.layers}, {"noise_scale", c.noise_scale}, {"epochs", c.epochs}, {"batch", c.batch}, {"step", c.step}};
  return {{"layers", c.layers}, {"dropout", c.dropout}, {"lambda", c.lambda}, {"R", c.reg_target}};
}

}  // namespace detail

inline void PipelineConfig::validate() const {
  std::vector<std::string> names;
  for (const auto& d : domains) {
    if (!valid_identifier(d.name)) throw ValidationError("config: invalid domain name '" + d.name + "'");
    names.push_back(d.name);
  }
  if (synthetic) {
    domsel::validate(*synthetic);
    for (int i = 0; i < synthetic->domains; ++i) names.push_back(synthetic_domain_name(*synthetic, i));
  }
  auto sorted = names;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ValidationError("config: domain names must be unique");
  if (variants.empty()) throw ValidationError("config: adapt.variants is empty");
  for (auto v : variants)
    if (v != AdaptVariant::none) adapt_config(v).validate();
  if (downstream_runs < 1) throw ValidationError("config: downstream.runs must be >= 1");
  if (!(success_threshold > 0 && success_threshold <= 1)) throw ValidationError("config: downstream.threshold must lie in (0, 1]");
  for (const auto& m : meta_modes)
    if (m != "predictor" && m != "ranker") throw ValidationError("config: unknown meta mode '" + m + "'");
  if (multisort_repeats < 1) throw ValidationError("config: meta.repeats must be >= 1");
  if (gbdt.max_trees < 1 || gbdt.depth < 1 || gbdt.folds < 2 || !(gbdt.learning_rate > 0))
    throw ValidationError("config: meta GBDT settings out of range");
  if (sentence.mode == SentenceMode::file_loaded && sentence.path.empty())
    throw ValidationError("config: sentence.path is required for file_loaded mode");
  if (!(lm_discount > 0 && lm_discount < 1)) throw ValidationError("config: lm.discount must lie in (0, 1)");
}

/// Relative paths in the document resolve against `base_dir`.
inline PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  using detail::check_keys;
  using detail::read;
  PipelineConfig c;
  check_keys(j, {"seed", "domains", "synthetic", "split", "embed", "sentence", "lm", "features", "adapt", "downstream", "meta", "report"}, "");
  read(j, "seed", c.seed, "");

  if (j.contains("domains")) {
    if (!j["domains"].is_array()) throw ValidationError("config key 'domains' must be an array");
    for (std::size_t i = 0; i < j["domains"].size(); ++i) {
      const auto& d = j["domains"][i];
      const std::string p = "domains[" + std::to_string(i) + "]";
      check_keys(d, {"name", "path", "format", "binarize_threshold"}, p);
      DomainSource src;
      std::string path, format = "jsonl";
      read(d, "name", src.name, p);
      read(d, "path", path, p);
      read(d, "format", format, p);
      if (src.name.empty() || path.empty()) throw ValidationError("config: " + p + " needs name and path");
      src.path = std::filesystem::path(path).is_absolute() ? std::filesystem::path(path) : base_dir / path;
      src.format = parse_format(format);
      if (d.contains("binarize_threshold")) {
        double t = 0;
        read(d, "binarize_threshold", t, p);
        src.binarize_threshold = t;
      }
      c.domains.push_back(std::move(src));
    }
  }
  if (j.contains("synthetic")) {
    nlohmann::json s = j["synthetic"];
    if (s.is_object() && s.contains("seed")) {
      c.stage_seeds["synthetic"] = s["seed"].get<std::uint64_t>();
      s.erase("seed");
    }
    c.synthetic = synthetic_spec_from_json(s);
  }
  if (j.contains("split")) {
    const auto& s = j["split"];
    check_keys(s, {"ratios", "seed"}, "split");
    if (s.contains("ratios")) {
      std::vector<double> r;
      read(s, "ratios", r, "split");
      if (r.size() != 3) throw ValidationError("config key 'split.ratios' needs three values");
      c.ratios = {r[0], r[1], r[2]};
    }
    detail::read_seed(s, "split", c, "split");
  }
  if (j.contains("embed")) {
    const auto& s = j["embed"];
    check_keys(s, {"dim", "window", "negatives", "epochs", "alpha_start", "alpha_end", "seed"}, "embed");
    detail::read_skipgram(s, c.embed, "embed");
    detail::read_seed(s, "embed", c, "embed");
  }
  if (j.contains("sentence")) {
    const auto& s = j["sentence"];
    check_keys(s, {"mode", "path", "dim", "window", "negatives", "epochs", "alpha_start", "alpha_end", "seed"}, "sentence");
    std::string mode = "mean_pooled", path;
    read(s, "mode", mode, "sentence");
    if (mode == "mean_pooled")
      c.sentence.mode = SentenceMode::mean_pooled;
    else if (mode == "file_loaded")
      c.sentence.mode = SentenceMode::file_loaded;
    else
      throw ValidationError("config key 'sentence.mode' must be mean_pooled or file_loaded");
    read(s, "path", path, "sentence");
    if (!path.empty()) c.sentence.path = std::filesystem::path(path).is_absolute() ? std::filesystem::path(path) : base_dir / path;
    detail::read_skipgram(s, c.sentence.skipgram, "sentence");
    detail::read_seed(s, "sentence", c, "sentence");
  }
  if (j.contains("lm")) {
    check_keys(j["lm"], {"discount", "min_count"}, "lm");
    read(j["lm"], "discount", c.lm_discount, "lm");
    read(j["lm"], "min_count", c.lm_min_count, "lm");
  }
  if (j.contains("features")) {
    check_keys(j["features"], {"alpha", "smoothing"}, "features");
    read(j["features"], "alpha", c.features.renyi_alpha, "features");
    read(j["features"], "smoothing", c.features.smoothing, "features");
  }
  if (j.contains("adapt")) {
    const auto& a = j["adapt"];
    check_keys(a, {"variants", "sda", "msda", "msdar", "seed"}, "adapt");
    if (a.contains("variants")) {
      std::vector<std::string> vs;
      read(a, "variants", vs, "adapt");
      c.variants.clear();
      for (const auto& v : vs) {
        const auto pv = parse_variant(v);
        if (std::find(c.variants.begin(), c.variants.end(), pv) == c.variants.end()) c.variants.push_back(pv);
      }
    }
    if (a.contains("sda")) detail::read_adapt(a["sda"], c.sda, "adapt.sda");
    if (a.contains("msda")) detail::read_adapt(a["msda"], c.msda, "adapt.msda");
    if (a.contains("msdar")) detail::read_adapt(a["msdar"], c.msdar, "adapt.msdar");
    detail::read_seed(a, "adapt", c, "adapt");
  }
  if (j.contains("downstream")) {
    const auto& d = j["downstream"];
    check_keys(d, {"runs", "threshold", "hidden", "max_epochs", "patience", "batch", "step", "seed"}, "downstream");
    read(d, "runs", c.downstream_runs, "downstream");
    read(d, "threshold", c.success_threshold, "downstream");
    if (d.contains("hidden")) {
      std::vector<int> h;
      read(d, "hidden", h, "downstream");
      if (h.size() != 2) throw ValidationError("config key 'downstream.hidden' needs two widths");
      c.classifier.hidden1 = h[0];
      c.classifier.hidden2 = h[1];
    }
    read(d, "max_epochs", c.classifier.max_epochs, "downstream");
    read(d, "patience", c.classifier.patience, "downstream");
    read(d, "batch", c.classifier.batch, "downstream");
    read(d, "step", c.classifier.step, "downstream");
    detail::read_seed(d, "downstream", c, "downstream");
  }
  if (j.contains("meta")) {
    const auto& m = j["meta"];
    check_keys(m, {"modes", "trees", "depth", "learning_rate", "l2", "min_child_weight", "folds", "repeats", "seed"}, "meta");
    read(m, "modes", c.meta_modes, "meta");
    read(m, "trees", c.gbdt.max_trees, "meta");
    read(m, "depth", c.gbdt.depth, "meta");
    read(m, "learning_rate", c.gbdt.learning_rate, "meta");
    read(m, "l2", c.gbdt.l2, "meta");
    read(m, "min_child_weight", c.gbdt.min_child_weight, "meta");
    read(m, "folds", c.gbdt.folds, "meta");
    read(m, "repeats", c.multisort_repeats, "meta");
    detail::read_seed(m, "meta", c, "meta");
  }
  if (j.contains("report")) {
    check_keys(j["report"], {"pca_pairs"}, "report");
    std::vector<std::vector<std::string>> pairs;
    read(j["report"], "pca_pairs", pairs, "report");
    for (const auto& p : pairs) {
      if (p.size() != 2) throw ValidationError("config key 'report.pca_pairs' entries need two domain names");
      c.pca_pairs.emplace_back(p[0], p[1]);
    }
  }
  c.validate();
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j, std::filesystem::absolute(path).parent_path());
}

/// Fully explicit form; config_from_json(config_to_json(c)) == c.
inline nlohmann::ordered_json config_to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  auto seeded = [&](nlohmann::ordered_json o, const std::string& stage) {
    if (auto it = c.stage_seeds.find(stage); it != c.stage_seeds.end()) o["seed"] = it->second;
    return o;
  };
  j["seed"] = c.seed;
  j["domains"] = nlohmann::ordered_json::array();
  for (const auto& d : c.domains) {
    nlohmann::ordered_json o{{"name", d.name},
                             {"path", d.path.string()},
                             {"format", d.format == CorpusFormat::jsonl ? "jsonl" : "tsv"}};
    if (d.binarize_threshold) o["binarize_threshold"] = *d.binarize_threshold;
    j["domains"].push_back(o);
  }
  if (c.synthetic) {
    auto s = synthetic_spec_to_json(*c.synthetic);
    s.erase("seed");
    j["synthetic"] = seeded(s, "synthetic");
  }
  j["split"] = seeded({{"ratios", {c.ratios.train, c.ratios.val, c.ratios.test}}}, "split");
  j["embed"] = seeded(detail::skipgram_json(c.embed), "embed");
  auto sj = detail::skipgram_json(c.sentence.skipgram);
  nlohmann::ordered_json sent{{"mode", c.sentence.mode == SentenceMode::mean_pooled ? "mean_pooled" : "file_loaded"}};
  if (!c.sentence.path.empty()) sent["path"] = c.sentence.path.string();
  for (auto& [k, v] : sj.items()) sent[k] = v;
  j["sentence"] = seeded(sent, "sentence");
  j["lm"] = {{"discount", c.lm_discount}, {"min_count", c.lm_min_count}};
  j["features"] = {{"alpha", c.features.renyi_alpha}, {"smoothing", c.features.smoothing}};
  nlohmann::ordered_json a;
  a["variants"] = nlohmann::ordered_json::array();
  for (auto v : c.variants) a["variants"].push_back(variant_name(v));
  a["sda"] = detail::adapt_json(c.sda);
  a["msda"] = detail::adapt_json(c.msda);
  a["msdar"] = detail::adapt_json(c.msdar);
  j["adapt"] = seeded(a, "adapt");
  j["downstream"] = seeded({{"runs", c.downstream_runs},
                            {"threshold", c.success_threshold},
                            {"hidden", {c.classifier.hidden1, c.classifier.hidden2}},
                            {"max_epochs", c.classifier.max_epochs},
                            {"patience", c.classifier.patience},
                            {"batch", c.classifier.batch},
                            {"step", c.classifier.step}},
                           "downstream");
  j["meta"] = seeded({{"modes", c.meta_modes},
                      {"trees", c.gbdt.max_trees},
                      {"depth", c.gbdt.depth},
                      {"learning_rate", c.gbdt.learning_rate},
                      {"l2", c.gbdt.l2},
                      {"min_child_weight", c.gbdt.min_child_weight},
                      {"folds", c.gbdt.folds},
                      {"repeats", c.multisort_repeats}},
                     "meta");
  nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
  for (const auto& [s, t] : c.pca_pairs) pairs.push_back({s, t});
  j["report"] = {{"pca_pairs", pairs}};
  return j;
}

}  // namespace domsel
