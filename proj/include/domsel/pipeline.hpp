#pragma once

// Workspace orchestration: every stage output is an artifact recorded in
// manifest.json with the hash of the inputs that produced it. An artifact is
// rebuilt when its hash changes, a file is missing or modified, or one of its
// dependencies was rebuilt earlier in the same run.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "domsel/adapt.hpp"
#include "domsel/config.hpp"
#include "domsel/corpus.hpp"
#include "domsel/downstream.hpp"
#include "domsel/embed.hpp"
#include "domsel/error.hpp"
#include "domsel/meta.hpp"
#include "domsel/ngram_lm.hpp"
#include "domsel/report.hpp"
#include "domsel/simfeat.hpp"
#include "domsel/synth.hpp"
#include "domsel/util.hpp"

namespace domsel {

namespace fs = std::filesystem;

struct ArtifactRecord {
  std::string stage;
  std::string hash;    // inputs: stage parameters plus dependency digests
  std::string digest;  // outputs: file contents
  std::uint64_t seed = 0;
  std::vector<std::string> deps;
  std::vector<std::string> files;  // relative to the workspace unless absolute
};

struct WorkspaceManifest {
  std::vector<std::string> domains;
  std::map<std::string, ArtifactRecord> artifacts;

  static WorkspaceManifest load(const fs::path& root) {
    WorkspaceManifest m;
    const auto path = root / "manifest.json";
    if (!fs::exists(path)) return m;
    std::ifstream in(path);
    try {
      const auto j = nlohmann::json::parse(in);
      m.domains = j.at("domains").get<std::vector<std::string>>();
      for (const auto& [id, a] : j.at("artifacts").items()) {
        ArtifactRecord r;
        r.stage = a.at("stage").get<std::string>();
        r.hash = a.at("hash").get<std::string>();
        r.digest = a.at("digest").get<std::string>();
        r.seed = a.at("seed").get<std::uint64_t>();
        r.deps = a.at("deps").get<std::vector<std::string>>();
        r.files = a.at("files").get<std::vector<std::string>>();
        m.artifacts[id] = std::move(r);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ": corrupt manifest: " + e.what());
    }
    return m;
  }

  void save(const fs::path& root) const {
    nlohmann::ordered_json j;
    j["domains"] = domains;
    j["artifacts"] = nlohmann::ordered_json::object();
    for (const auto& [id, r] : artifacts)
      j["artifacts"][id] = {{"stage", r.stage}, {"hash", r.hash},   {"digest", r.digest},
                            {"seed", r.seed},   {"deps", r.deps},   {"files", r.files}};
    fs::create_directories(root);
    std::ofstream out(root / "manifest.json", std::ios::binary);
    if (!out) throw ValidationError("cannot write " + (root / "manifest.json").string());
    out << j.dump(2) << '\n';
  }
};

namespace detail {

inline std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_csv_double(const std::string& s, const std::string& where) {
  auto v = parse_number(s);
  if (!v) throw ValidationError(where + ": bad number '" + s + "'");
  return *v;
}

/// Rethrows `e` with `prefix` prepended, keeping the error category.
[[noreturn]] inline void rethrow_with(std::exception_ptr e, const std::string& prefix) {
  try {
    std::rethrow_exception(e);
  } catch (const ComputationError& x) {
    throw ComputationError(prefix + x.what());
  } catch (const ValidationError& x) {
    throw ValidationError(prefix + x.what());
  } catch (const std::exception& x) {
    throw ComputationError(prefix + x.what());
  }
}

}  // namespace detail

/// Sentence vectors of one split, one column per example.
inline MatrixXd sentence_matrix(const SentenceEmbeddingProvider& provider, const DomainCorpus& corpus, Split split,
                                char side) {
  const auto idx = corpus.indices(split);
  MatrixXd m(provider.dim(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto& ex = corpus.examples()[idx[k]];
    std::vector<double> v;
    if (provider.mode() == SentenceMode::file_loaded)
      v = provider.lookup(sentence_key(corpus.name(), split, k, side));
    else
      v = provider.pool(side == 'a' ? ex.tokens_a : ex.tokens_b);
    m.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  return m;
}

inline EmbeddedDomain embed_domain(const SentenceEmbeddingProvider& provider, const DomainCorpus& corpus) {
  EmbeddedDomain d;
  d.name = corpus.name();
  auto fill = [&](EmbeddedSplit& s, Split sp) {
    s.a = sentence_matrix(provider, corpus, sp, 'a');
    s.b = sentence_matrix(provider, corpus, sp, 'b');
    for (std::size_t i : corpus.indices(sp)) s.labels.push_back(corpus.examples()[i].label);
  };
  fill(d.train, Split::train);
  fill(d.val, Split::val);
  fill(d.test, Split::test);
  return d;
}

/// Both texts of every train example, as columns: the unlabeled data an
/// adaptation model sees for a domain.
inline MatrixXd adaptation_data(const EmbeddedDomain& d) {
  MatrixXd x(d.train.a.rows(), d.train.a.cols() + d.train.b.cols());
  x << d.train.a, d.train.b;
  return x;
}

inline std::string pair_id(const std::string& s, const std::string& t) { return s + "__" + t; }

class Pipeline {
 public:
  Pipeline(fs::path root, PipelineConfig cfg, unsigned jobs = 1, std::ostream* log = nullptr)
      : root_(std::move(root)), cfg_(std::move(cfg)), jobs_(std::max(1u, jobs)), log_(log) {
    cfg_.validate();
    fs::create_directories(root_);
    manifest_ = WorkspaceManifest::load(root_);
    manifest_.domains = domain_names();
  }

  const PipelineConfig& config() const { return cfg_; }
  const WorkspaceManifest& manifest() const { return manifest_; }
  const fs::path& root() const { return root_; }
  /// Artifact ids rebuilt by this Pipeline object, in build order.
  const std::vector<std::string>& rebuilt() const { return rebuilt_order_; }

  std::vector<std::string> domain_names() const {
    std::vector<std::string> out;
    for (const auto& d : cfg_.domains) out.push_back(d.name);
    if (cfg_.synthetic)
      for (int i = 0; i < cfg_.synthetic->domains; ++i) out.push_back(synthetic_domain_name(*cfg_.synthetic, i));
    return out;
  }

  std::vector<std::string> variant_names() const {
    std::vector<std::string> out;
    for (auto v : cfg_.variants) out.push_back(variant_name(v));
    return out;
  }

  // ---- stages ----

  void ingest(const std::optional<std::string>& only = std::nullopt) {
    const auto names = select_domains(only);
    if (names.empty()) throw ValidationError("no domains configured: add domains or a synthetic spec");
    std::vector<Job> jobs;
    for (const auto& name : names) {
      Job job{"ingest/" + name, "ingest", derive_seed(cfg_.stage_seed("split"), name), {}, "", {}};
      nlohmann::ordered_json p{{"ratios", {cfg_.ratios.train, cfg_.ratios.val, cfg_.ratios.test}}};
      auto src = std::find_if(cfg_.domains.begin(), cfg_.domains.end(), [&](const auto& d) { return d.name == name; });
      if (src != cfg_.domains.end()) {
        try {
          p["source"] = hex64(fnv1a(detail::read_bytes(src->path)));
        } catch (...) {
          detail::rethrow_with(std::current_exception(), "stage ingest, artifact " + job.id + ": ");
        }
        p["format"] = src->format == CorpusFormat::jsonl ? "jsonl" : "tsv";
        if (src->binarize_threshold) p["threshold"] = *src->binarize_threshold;
        const DomainSource source = *src;
        job.build = [this, source, seed = job.seed](Outputs& out) {
          auto loaded = load_domain(source.path, source.format, source.name, source.binarize_threshold);
          if (loaded.rejected > 0) say("ingest " + source.name + ": rejected " + std::to_string(loaded.rejected) + " record(s)");
          save_corpus(split(loaded.corpus, cfg_.ratios, seed), out.path("ingest/" + source.name + ".jsonl"));
        };
      } else {
        auto spec = synthetic_spec();
        p["synthetic"] = synthetic_spec_to_json(spec);
        job.build = [this, name, seed = job.seed](Outputs& out) {
          save_corpus(split(synthetic_corpus(name), cfg_.ratios, seed), out.path("ingest/" + name + ".jsonl"));
        };
      }
      job.params = p.dump();
      jobs.push_back(std::move(job));
    }
    run_jobs(jobs);
  }

  void embed(const std::optional<std::string>& only = std::nullopt) {
    const auto names = select_domains(only);
    ingest(only);
    std::vector<Job> jobs;
    for (const auto& name : names) {
      SkipgramParams sp = cfg_.embed;
      sp.seed = cfg_.stage_seed("embed");  // one seed for every domain keeps f10 comparable
      Job job{"embed/" + name, "embed", sp.seed, {"ingest/" + name}, detail::skipgram_json(sp).dump(), {}};
      job.build = [this, name, sp](Outputs& out) {
        auto res = train_skipgram(corpus(name), sp);
        save_word2vec(res.table, out.path("embed/domains/" + name + ".w2v"));
      };
      jobs.push_back(std::move(job));
    }
    preload_corpora(names);
    run_jobs(jobs);
    if (!only) sentence();
  }

  /// Shared sentence-embedding space used by adaptation and the downstream task.
  void sentence() {
    const auto names = domain_names();
    ingest();
    Job job{"embed/sentence", "embed", cfg_.stage_seed("sentence"), {}, "", {}};
    for (const auto& n : names) job.deps.push_back("ingest/" + n);
    if (cfg_.sentence.mode == SentenceMode::file_loaded) {
      try {
        job.params = nlohmann::ordered_json{{"mode", "file_loaded"},
                                            {"vectors", hex64(fnv1a(detail::read_bytes(cfg_.sentence.path)))}}.dump();
      } catch (...) {
        detail::rethrow_with(std::current_exception(), "stage embed, artifact embed/sentence: ");
      }
      job.seed = 0;
      job.build = [](Outputs&) {};
    } else {
      SkipgramParams sp = cfg_.sentence.skipgram;
      sp.seed = job.seed;
      job.params = detail::skipgram_json(sp).dump();
      job.build = [this, names, sp](Outputs& out) {
        std::vector<std::vector<std::string>> texts;
        for (const auto& n : names)
          for (auto& t : training_texts(corpus(n))) texts.push_back(std::move(t));
        auto res = train_skipgram(texts, "sentence", sp);
        save_word2vec(res.table, out.path("embed/sentence.w2v"));
      };
    }
    preload_corpora(names);
    std::vector<Job> jobs{std::move(job)};
    run_jobs(jobs);
  }

  void lm(const std::optional<std::string>& only = std::nullopt) {
    const auto names = select_domains(only);
    ingest(only);
    std::vector<Job> jobs;
    for (const auto& name : names) {
      nlohmann::ordered_json p{{"discount", cfg_.lm_discount}, {"min_count", cfg_.lm_min_count}};
      Job job{"lm/" + name, "lm", 0, {"ingest/" + name}, p.dump(), {}};
      job.build = [this, name](Outputs& out) {
        save_lm(train_kn(corpus(name), cfg_.lm_min_count, cfg_.lm_discount), out.path("lm/" + name + ".kn"));
      };
      jobs.push_back(std::move(job));
    }
    preload_corpora(names);
    run_jobs(jobs);
  }

  void features() {
    const auto names = domain_names();
    if (names.size() < 2) throw ValidationError("features need at least two domains");
    embed();
    lm();
    Job job{"features", "features", 0, {}, "", {}};
    for (const auto& n : names)
      for (const char* s : {"ingest/", "embed/", "lm/"}) job.deps.push_back(s + n);
    job.params = nlohmann::ordered_json{{"alpha", cfg_.features.renyi_alpha}, {"smoothing", cfg_.features.smoothing}}.dump();
    job.build = [this, names](Outputs& out) {
      std::vector<EmbeddingTable> tables;
      std::vector<TrigramLM> lms;
      for (const auto& n : names) {
        tables.push_back(load_word2vec(root_ / "embed/domains" / (n + ".w2v"), n));
        lms.push_back(load_lm(root_ / "lm" / (n + ".kn")));
      }
      std::vector<std::pair<std::size_t, std::size_t>> pairs;
      for (std::size_t s = 0; s < names.size(); ++s)
        for (std::size_t t = 0; t < names.size(); ++t)
          if (s != t) pairs.emplace_back(s, t);
      std::vector<FeatureVector> rows(pairs.size());
      parallel_for(pairs.size(), jobs_, [&](std::size_t k) {
        const auto [s, t] = pairs[k];
        rows[k] = feature_vector(corpus(names[s]), corpus(names[t]), tables[s], tables[t], lms[s], cfg_.features);
      });
      save_features(rows, out.path("features/features.csv"));
    };
    preload_corpora(names);
    std::vector<Job> jobs{std::move(job)};
    run_jobs(jobs);
  }

  void adapt(const std::optional<AdaptVariant>& variant = std::nullopt,
             const std::optional<std::pair<std::string, std::string>>& pair = std::nullopt) {
    const auto names = domain_names();
    if (pair) {
      for (const auto& n : {pair->first, pair->second})
        if (std::find(names.begin(), names.end(), n) == names.end()) throw ValidationError("unknown domain '" + n + "'");
      if (pair->first == pair->second) throw ValidationError("adapt: source and target must differ");
    }
    sentence();
    std::vector<Job> jobs;
    for (auto v : variant ? std::vector<AdaptVariant>{*variant} : cfg_.variants) {
      if (v == AdaptVariant::none) {
        say("adapt: dt uses the unadapted representation, nothing to build");
        continue;
      }
      const AdaptConfig ac = cfg_.adapt_config(v);
      for (const auto& s : names)
        for (const auto& t : names) {
          if (s == t || (pair && (s != pair->first || t != pair->second))) continue;
          const std::string vn = variant_name(v);
          Job job{"adapt/" + vn + "/" + pair_id(s, t), "adapt",
                  derive_seed(cfg_.stage_seed("adapt"), vn + "/" + s + "/" + t),
                  {"ingest/" + s, "ingest/" + t, "embed/sentence"}, adapt_config_to_json(ac).dump(), {}};
          job.build = [this, s, t, ac, vn, seed = job.seed](Outputs& out) {
            const MatrixXd xs = adaptation_data(embedded(s)), xt = adaptation_data(embedded(t));
            AdaptModel model = ac.variant == AdaptVariant::sda ? train_sda(xs, xt, ac, seed) : stack_marginalized(xs, xt, ac);
            save_adapt_model(model, out.path("adapt/" + vn + "/" + pair_id(s, t) + ".json"));
          };
          jobs.push_back(std::move(job));
        }
    }
    preload_embedded(names);
    run_jobs(jobs);
  }

  void downstream(const std::optional<AdaptVariant>& variant = std::nullopt) {
    const auto names = domain_names();
    const auto variants = variant ? std::vector<AdaptVariant>{*variant} : cfg_.variants;
    for (auto v : variants)
      if (v != AdaptVariant::none) adapt(v);
    sentence();
    std::vector<Job> jobs;
    for (auto v : variants) {
      const std::string vn = variant_name(v);
      Job job{"downstream/" + vn, "downstream", cfg_.stage_seed("downstream"), {"embed/sentence"}, "", {}};
      for (const auto& n : names) job.deps.push_back("ingest/" + n);
      if (v != AdaptVariant::none)
        for (const auto& s : names)
          for (const auto& t : names)
            if (s != t) job.deps.push_back("adapt/" + vn + "/" + pair_id(s, t));
      const auto& cp = cfg_.classifier;
      job.params = nlohmann::ordered_json{{"hidden", {cp.hidden1, cp.hidden2}}, {"max_epochs", cp.max_epochs},
                                          {"patience", cp.patience},           {"batch", cp.batch},
                                          {"step", cp.step},                   {"runs", cfg_.downstream_runs},
                                          {"threshold", cfg_.success_threshold}}.dump();
      job.build = [this, names, v, vn](Outputs& out) {
        std::vector<EmbeddedDomain> doms;
        for (const auto& n : names) doms.push_back(embedded(n));
        std::map<std::string, AdaptModel> models;
        if (v != AdaptVariant::none)
          for (const auto& s : names)
            for (const auto& t : names)
              if (s != t) models[pair_id(s, t)] = load_adapt_model(root_ / "adapt" / vn / (pair_id(s, t) + ".json"));
        AdaptLookup lookup = [&](const std::string& s, const std::string& t) -> const AdaptModel& {
          return models.at(pair_id(s, t));
        };
        const auto m = cross_domain_matrix(doms, v, lookup, cfg_.downstream_seeds(), cfg_.classifier, jobs_);
        const fs::path dir = root_ / "downstream" / vn;
        fs::create_directories(dir);
        for (std::size_t k = 0; k < m.seeds.size(); ++k) out.path("downstream/" + vn + "/f1_seed" + std::to_string(m.seeds[k]) + ".csv");
        out.path("downstream/" + vn + "/f1_mean.csv");
        out.path("downstream/" + vn + "/manifest.json");
        save_f1_matrix(m, cfg_.success_threshold, dir);
      };
      jobs.push_back(std::move(job));
    }
    preload_embedded(names);
    run_jobs(jobs);
  }

  void meta(const std::optional<std::string>& mode = std::nullopt,
            const std::optional<AdaptVariant>& variant = std::nullopt) {
    if (mode && *mode != "predictor" && *mode != "ranker") throw ValidationError("unknown meta mode '" + *mode + "'");
    const auto modes = mode ? std::vector<std::string>{*mode} : cfg_.meta_modes;
    const auto variants = variant ? std::vector<AdaptVariant>{*variant} : cfg_.variants;
    const auto names = domain_names();
    detail::check_domains(names);
    features();
    for (auto v : variants) downstream(v);
    std::vector<Job> jobs;
    for (const auto& md : modes)
      for (auto v : variants) {
        const std::string vn = variant_name(v);
        const std::string dir = "meta/" + md + "/" + vn;
        MetaParams mp;
        mp.gbdt = cfg_.gbdt;
        mp.gbdt.seed = derive_seed(cfg_.stage_seed("meta"), md + "/" + vn);
        mp.repeats = cfg_.multisort_repeats;
        nlohmann::ordered_json p{{"mode", md},
                                 {"trees", mp.gbdt.max_trees},
                                 {"depth", mp.gbdt.depth},
                                 {"learning_rate", mp.gbdt.learning_rate},
                                 {"l2", mp.gbdt.l2},
                                 {"min_child_weight", mp.gbdt.min_child_weight},
                                 {"folds", mp.gbdt.folds},
                                 {"repeats", mp.repeats}};
        Job job{dir, "meta", mp.gbdt.seed, {"features", "downstream/" + vn}, p.dump(), {}};
        job.build = [this, names, md, vn, dir, mp](Outputs& out) {
          const auto table = feature_table(load_features(root_ / "features/features.csv"));
          const auto f1 = load_f1_matrix(root_ / "downstream" / vn);
          write_meta(names, md, table, f1, mp, dir, out);
        };
        jobs.push_back(std::move(job));
      }
    run_jobs(jobs);
  }

  void report(const std::optional<fs::path>& out_dir = std::nullopt) {
    const auto names = domain_names();
    meta();
    auto pca_pairs = cfg_.pca_pairs;
    if (pca_pairs.empty() && names.size() >= 2) pca_pairs.emplace_back(names[0], names[1]);
    for (const auto& [s, t] : pca_pairs)
      for (const auto& n : {s, t})
        if (std::find(names.begin(), names.end(), n) == names.end())
          throw ValidationError("report.pca_pairs names unknown domain '" + n + "'");
    const fs::path out = out_dir ? fs::absolute(*out_dir) : root_ / "report";

    Job job{"report", "report", 0, {"embed/sentence"}, "", {}};
    for (const auto& md : cfg_.meta_modes)
      for (const auto& vn : variant_names()) job.deps.push_back("meta/" + md + "/" + vn);
    for (const auto& vn : variant_names()) job.deps.push_back("downstream/" + vn);
    for (const auto& [s, t] : pca_pairs) {
      job.deps.push_back("ingest/" + s);
      job.deps.push_back("ingest/" + t);
      for (auto v : cfg_.variants)
        if (v != AdaptVariant::none) job.deps.push_back("adapt/" + variant_name(v) + "/" + pair_id(s, t));
    }
    std::sort(job.deps.begin(), job.deps.end());
    job.deps.erase(std::unique(job.deps.begin(), job.deps.end()), job.deps.end());
    const auto rel = out.lexically_relative(root_);
    const bool inside = !rel.empty() && *rel.begin() != "..";
    nlohmann::ordered_json p{{"out", inside ? rel.generic_string() : out.string()},
                             {"modes", cfg_.meta_modes},
                             {"variants", variant_names()}};
    for (const auto& [s, t] : pca_pairs) p["pca"].push_back({s, t});
    job.params = p.dump();
    job.build = [this, out, pca_pairs](Outputs& o) { write_report(out, pca_pairs, o); };
    preload_embedded(names);
    std::vector<Job> jobs{std::move(job)};
    run_jobs(jobs);
  }

  void run() { report(); }

  // ---- loaded artifacts ----

  const DomainCorpus& corpus(const std::string& name) {
    auto it = corpora_.find(name);
    if (it != corpora_.end()) return it->second;
    return corpora_[name] = load_corpus(root_ / "ingest" / (name + ".jsonl"), name);
  }

  const SentenceEmbeddingProvider& sentence_provider() {
    if (!provider_) {
      if (cfg_.sentence.mode == SentenceMode::file_loaded)
        provider_ = std::make_unique<SentenceEmbeddingProvider>(SentenceEmbeddingProvider::file_loaded(cfg_.sentence.path));
      else
        provider_ = std::make_unique<SentenceEmbeddingProvider>(
            SentenceEmbeddingProvider::mean_pooled(load_word2vec(root_ / "embed/sentence.w2v", "sentence")));
    }
    return *provider_;
  }

  const EmbeddedDomain& embedded(const std::string& name) {
    auto it = embedded_.find(name);
    if (it != embedded_.end()) return it->second;
    return embedded_[name] = embed_domain(sentence_provider(), corpus(name));
  }

  OrderingReport load_table1(const std::string& mode) {
    std::map<std::string, std::vector<TargetResult>> results;
    for (auto v : cfg_.variants) {
      const std::string vn = variant_name(v);
      const auto f1 = load_f1_matrix(root_ / "downstream" / vn);
      const fs::path dir = root_ / "meta" / mode / vn;
      std::map<std::string, Ordering> pred;
      {
        const auto path = dir / "orderings.csv";
        std::istringstream in(detail::read_bytes(path));
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
          const auto f = detail::split_csv(line);
          if (f.size() != 4) throw ValidationError(path.string() + ": malformed row");
          auto& o = pred[f[0]];
          o.target = f[0];
          o.ranked_sources.push_back(f[2]);
        }
      }
      const auto path = dir / "metrics.csv";
      std::istringstream in(detail::read_bytes(path));
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        const auto f = detail::split_csv(line);
        if (f.size() != 4) throw ValidationError(path.string() + ": malformed row");
        TargetResult r;
        r.target = f[0];
        r.f1 = detail::parse_csv_double(f[1], path.string());
        r.accuracy = detail::parse_csv_double(f[2], path.string());
        r.predicted = pred.at(f[0]);
        r.truth = true_ordering(f1, f[0]);
        results[vn].push_back(std::move(r));
      }
    }
    return build_table1(mode, variant_names(), results);
  }

  TransferReport load_table2() {
    std::map<std::string, F1Matrix> matrices;
    std::map<std::string, SuccessLabels> labels;
    for (const auto& vn : variant_names()) {
      matrices[vn] = load_f1_matrix(root_ / "downstream" / vn);
      labels[vn] = success_labels(matrices[vn], cfg_.success_threshold);
    }
    return build_table2(variant_names(), matrices, labels);
  }

 private:
  /// Registers output files so a failed build can be cleaned up.
  struct Outputs {
    fs::path root;
    std::vector<std::string> files;
    fs::path path(const std::string& rel) { return add(root / rel, rel); }
    fs::path absolute(const fs::path& p) {
      const auto rel = p.lexically_relative(root);
      const bool inside = !rel.empty() && *rel.begin() != "..";
      return add(p, inside ? rel.generic_string() : p.string());
    }

   private:
    fs::path add(const fs::path& full, const std::string& name) {
      fs::create_directories(full.parent_path());
      files.push_back(name);
      return full;
    }
  };

  struct Job {
    std::string id;
    std::string stage;
    std::uint64_t seed = 0;
    std::vector<std::string> deps;
    std::string params;
    std::function<void(Outputs&)> build;
  };

  void say(const std::string& msg) const {
    if (log_) *log_ << msg << '\n';
  }

  fs::path resolve(const std::string& file) const {
    const fs::path p(file);
    return p.is_absolute() ? p : root_ / p;
  }

  std::string digest_of(const std::vector<std::string>& files, const std::string& hash) const {
    std::uint64_t h = fnv1a(hash);
    for (const auto& f : files) {
      h = fnv1a(f, h);
      h = fnv1a(detail::read_bytes(resolve(f)), h);
    }
    return hex64(h);
  }

  std::string expected_hash(const Job& job) const {
    std::uint64_t h = fnv1a(job.stage + "\n" + job.params + "\nseed=" + std::to_string(job.seed) + "\n");
    for (const auto& d : job.deps) {
      auto it = manifest_.artifacts.find(d);
      if (it == manifest_.artifacts.end()) throw ValidationError("artifact " + job.id + " depends on missing " + d);
      h = fnv1a(d + "=" + it->second.digest + "\n", h);
    }
    return hex64(h);
  }

  /// Empty when the recorded artifact can be reused; otherwise the reason.
  std::string staleness(const Job& job, const std::string& hash) const {
    auto it = manifest_.artifacts.find(job.id);
    if (it == manifest_.artifacts.end()) return "missing";
    const auto& rec = it->second;
    for (const auto& d : job.deps)
      if (rebuilt_.count(d)) return "dependency " + d + " rebuilt";
    if (rec.hash != hash) return "stale (inputs changed)";
    for (const auto& f : rec.files)
      if (!fs::exists(resolve(f))) return "file " + f + " missing";
    if (digest_of(rec.files, rec.hash) != rec.digest) return "files modified";
    return {};
  }

  void forget(const std::string& id) {
    if (id.rfind("ingest/", 0) == 0) {
      corpora_.erase(id.substr(7));
      embedded_.clear();
    }
    if (id == "embed/sentence") {
      provider_.reset();
      embedded_.clear();
    }
  }

  void run_jobs(std::vector<Job>& jobs) {
    std::vector<std::size_t> todo;
    std::vector<std::string> hashes(jobs.size());
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      if (done_.count(jobs[i].id)) continue;
      hashes[i] = expected_hash(jobs[i]);
      const auto reason = staleness(jobs[i], hashes[i]);
      if (reason.empty()) {
        done_.insert(jobs[i].id);
        say("[" + jobs[i].stage + "] " + jobs[i].id + ": up to date");
        continue;
      }
      if (reason != "missing") say("[" + jobs[i].stage + "] " + jobs[i].id + ": " + reason + ", rebuilding");
      todo.push_back(i);
    }
    if (todo.empty()) return;

    std::vector<Outputs> outputs(todo.size(), Outputs{root_, {}});
    std::vector<std::exception_ptr> errors(todo.size());
    // Failures are captured per job so every successful artifact is recorded.
    parallel_for(todo.size(), jobs.size() > 1 ? jobs_ : 1u, [&](std::size_t k) {
      try {
        say("[" + jobs[todo[k]].stage + "] building " + jobs[todo[k]].id);
        jobs[todo[k]].build(outputs[k]);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });

    std::exception_ptr first;
    std::string first_prefix;
    for (std::size_t k = 0; k < todo.size(); ++k) {
      const Job& job = jobs[todo[k]];
      done_.insert(job.id);
      if (!errors[k]) {
        try {
          ArtifactRecord rec{job.stage, hashes[todo[k]], "", job.seed, job.deps, outputs[k].files};
          rec.digest = digest_of(rec.files, rec.hash);
          manifest_.artifacts[job.id] = std::move(rec);
          rebuilt_.insert(job.id);
          rebuilt_order_.push_back(job.id);
          forget(job.id);
          continue;
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
      std::error_code ec;
      for (const auto& f : outputs[k].files) fs::remove(resolve(f), ec);
      manifest_.artifacts.erase(job.id);
      forget(job.id);
      if (!first) {
        first = errors[k];
        first_prefix = "stage " + job.stage + ", artifact " + job.id + ": ";
      }
    }
    manifest_.save(root_);
    if (first) detail::rethrow_with(first, first_prefix);
  }

  std::vector<std::string> select_domains(const std::optional<std::string>& only) const {
    auto names = domain_names();
    if (!only) return names;
    if (std::find(names.begin(), names.end(), *only) == names.end())
      throw ValidationError("unknown domain '" + *only + "'");
    return {*only};
  }

  void preload_corpora(const std::vector<std::string>& names) {
    for (const auto& n : names)
      if (manifest_.artifacts.count("ingest/" + n)) corpus(n);
  }

  void preload_embedded(const std::vector<std::string>& names) {
    if (!manifest_.artifacts.count("embed/sentence")) return;
    for (const auto& n : names)
      if (manifest_.artifacts.count("ingest/" + n)) embedded(n);
  }

  SyntheticSpec synthetic_spec() const {
    SyntheticSpec spec = *cfg_.synthetic;
    spec.seed = cfg_.stage_seed("synthetic");
    return spec;
  }

  const DomainCorpus& synthetic_corpus(const std::string& name) {
    std::call_once(synth_once_, [&] {
      const auto spec = synthetic_spec();
      for (const auto& w : validate(spec)) say("warning: " + w);
      for (auto& c : generate_synthetic(spec)) synthetic_[c.name()] = std::move(c);
    });
    return synthetic_.at(name);
  }

  void write_meta(const std::vector<std::string>& names, const std::string& mode, const FeatureTable& table,
                  const F1Matrix& f1, const MetaParams& mp, const std::string& dir, Outputs& out) const {
    struct Result {
      MetaOutcome outcome;
      std::vector<double> scores;  // aligned with outcome.ordering.ranked_sources
    };
    std::vector<Result> results(names.size());
    if (mode == "predictor") {
      const auto labels = success_labels(f1, cfg_.success_threshold);
      const auto splits = loto_predictor_splits(names);
      parallel_for(splits.size(), jobs_, [&](std::size_t k) {
        auto o = success_predictor(table, labels.success, splits[k], mp);
        std::map<std::string, double> score;
        for (std::size_t i = 0; i < splits[k].test.size(); ++i) score[splits[k].test[i].source] = o.test_proba[i];
        Result r{std::move(o), {}};
        for (const auto& s : r.outcome.ordering.ranked_sources) r.scores.push_back(score.at(s));
        results[k] = std::move(r);
      });
    } else {
      std::map<RankerKey, RankerSample> samples;
      const auto splits = loto_ranker_splits(names);
      for (const auto& sp : splits)
        for (const auto* keys : {&sp.train, &sp.test})
          for (const auto& key : *keys)
            if (!samples.count(key)) samples[key] = make_ranker_sample(key, table, f1);
      parallel_for(splits.size(), jobs_, [&](std::size_t k) {
        auto o = domain_ranker(samples, splits[k], mp);
        // Score: share of the other candidates each source is predicted to beat.
        std::map<std::string, double> wins;
        for (std::size_t i = 0; i < splits[k].test.size(); ++i) {
          const auto& key = splits[k].test[i];
          wins[key.s1] += o.test_proba[i] >= mp.decision_threshold ? 1.0 : 0.0;
          wins[key.s2] += o.test_proba[i] >= mp.decision_threshold ? 0.0 : 1.0;
        }
        const double others = static_cast<double>(o.ordering.ranked_sources.size() - 1);
        Result r{std::move(o), {}};
        for (const auto& s : r.outcome.ordering.ranked_sources) r.scores.push_back(wins[s] / others);
        results[k] = std::move(r);
      });
    }

    nlohmann::ordered_json models = nlohmann::ordered_json::array();
    std::ostringstream orderings, metrics, importance;
    orderings << "target,rank,source,score\n";
    metrics << "target,f1,accuracy,trees\n";
    importance << "target,feature,importance\n";
    std::map<std::string, double> mean_imp;
    for (const auto& r : results) {
      const auto& o = r.outcome;
      models.push_back({{"target", o.target}, {"trees", o.trees}, {"model", o.model.to_json()}});
      for (std::size_t i = 0; i < o.ordering.ranked_sources.size(); ++i)
        orderings << o.target << ',' << (i + 1) << ',' << o.ordering.ranked_sources[i] << ',' << format_g17(r.scores[i])
                  << '\n';
      metrics << o.target << ',' << format_g17(o.f1()) << ',' << format_g17(o.accuracy()) << ',' << o.trees << '\n';
      for (const auto& [f, v] : feature_importance(o.model)) {
        importance << o.target << ',' << f << ',' << format_g17(v) << '\n';
        mean_imp[f] += v / static_cast<double>(results.size());
      }
    }
    for (const auto& [f, v] : mean_imp) importance << "MEAN," << f << ',' << format_g17(v) << '\n';

    auto write = [&](const std::string& file, const std::string& text) {
      std::ofstream f(out.path(dir + "/" + file), std::ios::binary);
      if (!f) throw ValidationError("cannot write " + dir + "/" + file);
      f << text;
    };
    write("models.json", models.dump(1) + "\n");
    write("orderings.csv", orderings.str());
    write("metrics.csv", metrics.str());
    write("importance.csv", importance.str());
  }

  void write_report(const fs::path& out, const std::vector<std::pair<std::string, std::string>>& pca_pairs,
                    Outputs& o) {
    for (const auto& md : cfg_.meta_modes) save_table1_csv(load_table1(md), o.absolute(out / ("table1_" + md + ".csv")));
    save_table2_csv(load_table2(), o.absolute(out / "table2.csv"));

    for (const auto& [s, t] : pca_pairs) {
      const MatrixXd xs = adaptation_data(embedded(s)), xt = adaptation_data(embedded(t));
      pca_export(xs, xt, s, t, o.absolute(out / ("pca_" + pair_id(s, t) + ".csv")));
      for (auto v : cfg_.variants) {
        if (v == AdaptVariant::none) continue;
        const std::string vn = variant_name(v);
        const auto model = load_adapt_model(root_ / "adapt" / vn / (pair_id(s, t) + ".json"));
        pca_export(encode(model, xs), encode(model, xt), s, t,
                   o.absolute(out / ("pca_" + pair_id(s, t) + "_" + vn + ".csv")));
      }
    }

    nlohmann::ordered_json m;
    m["config_hash"] = hex64(fnv1a(config_to_json(cfg_).dump()));
    m["seed"] = cfg_.seed;
    nlohmann::ordered_json seeds;
    for (const char* st : {"synthetic", "split", "embed", "sentence", "adapt", "downstream", "meta"})
      seeds[st] = cfg_.stage_seed(st);
    m["stage_seeds"] = seeds;
    m["downstream_seeds"] = cfg_.downstream_seeds();
    m["domains"] = domain_names();
    m["variants"] = variant_names();
    m["artifacts"] = nlohmann::ordered_json::object();
    for (const auto& [id, rec] : manifest_.artifacts)
      if (id != "report") m["artifacts"][id] = {{"hash", rec.hash}, {"seed", rec.seed}};
    std::ofstream f(o.absolute(out / "manifest.json"), std::ios::binary);
    if (!f) throw ValidationError("cannot write " + (out / "manifest.json").string());
    f << m.dump(2) << '\n';
  }

  fs::path root_;
  PipelineConfig cfg_;
  unsigned jobs_;
  std::ostream* log_;
  WorkspaceManifest manifest_;
  std::set<std::string> done_;
  std::set<std::string> rebuilt_;
  std::vector<std::string> rebuilt_order_;
  std::map<std::string, DomainCorpus> corpora_;
  std::map<std::string, EmbeddedDomain> embedded_;
  std::unique_ptr<SentenceEmbeddingProvider> provider_;
  std::once_flag synth_once_;
  std::map<std::string, DomainCorpus> synthetic_;
};

/// Runs every stage for the config at `config_path` inside `workspace`.
inline int run_pipeline(const fs::path& config_path, const fs::path& workspace, unsigned jobs = 1,
                        std::ostream* log = nullptr) {
  Pipeline p(workspace, load_config(config_path), jobs, log);
  p.run();
  return 0;
}

}  // namespace domsel
