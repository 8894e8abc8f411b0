#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "domsel/config.hpp"
#include "domsel/error.hpp"
#include "domsel/pipeline.hpp"
#include "domsel/report.hpp"

namespace fs = std::filesystem;
using namespace domsel;

namespace {

struct Globals {
  std::string workspace = "workspace";
  std::string config;
  unsigned jobs = 1;
  std::optional<std::uint64_t> seed;
};

/// --config wins; otherwise the workspace's saved config; otherwise defaults.
PipelineConfig resolve_config(const Globals& g) {
  PipelineConfig cfg;
  const fs::path saved = fs::path(g.workspace) / "config.json";
  if (!g.config.empty())
    cfg = load_config(g.config);
  else if (fs::exists(saved))
    cfg = load_config(saved);
  if (g.seed) cfg.override_seed(*g.seed);
  return cfg;
}

void save_config(const Globals& g, const PipelineConfig& cfg) {
  cfg.validate();
  fs::create_directories(g.workspace);
  std::ofstream out(fs::path(g.workspace) / "config.json", std::ios::binary);
  if (!out) throw ValidationError("cannot write " + (fs::path(g.workspace) / "config.json").string());
  out << config_to_json(cfg).dump(2) << '\n';
}

void print_tables(Pipeline& p) {
  for (const auto& md : p.config().meta_modes) std::cout << render_table1(p.load_table1(md)) << '\n';
  std::cout << render_table2(p.load_table2());
}

std::optional<AdaptVariant> variant_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return parse_variant(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-domain similarity, transfer experiments and source-domain ranking"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--workspace", g.workspace, "Workspace directory");
  app.add_option("--config", g.config, "Pipeline config JSON");
  app.add_option("--jobs", g.jobs, "Parallel jobs")->check(CLI::PositiveNumber);
  app.add_option("--seed", g.seed, "Override every seed in the config");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Load, tokenize and split one corpus");
  std::string in_path, in_format = "jsonl", in_name, in_out;
  std::optional<double> in_threshold;
  std::optional<std::uint64_t> in_seed;
  ingest->add_option("--in", in_path, "Input file")->required();
  ingest->add_option("--format", in_format, "jsonl or tsv");
  ingest->add_option("--name", in_name, "Domain name")->required();
  ingest->add_option("--binarize-threshold", in_threshold, "Score threshold for label 1");
  ingest->add_option("--seed", in_seed, "Split seed");
  ingest->add_option("--out", in_out, "Workspace directory");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate synthetic domains into the workspace");
  std::string synth_spec;
  std::optional<std::uint64_t> synth_seed;
  synth->add_option("--spec", synth_spec, "Synthetic spec JSON");
  synth->add_option("--seed", synth_seed, "Generator seed");

  // embed
  auto* embed = app.add_subcommand("embed", "Train skipgram word vectors");
  std::string embed_domain;
  std::optional<int> embed_dim;
  std::optional<std::uint64_t> embed_seed;
  embed->add_option("--domain", embed_domain, "Only this domain");
  embed->add_option("--dim", embed_dim, "Vector dimension");
  embed->add_option("--seed", embed_seed, "Training seed");

  // lm
  auto* lm = app.add_subcommand("lm", "Train Kneser-Ney trigram models");
  std::string lm_domain;
  std::optional<double> lm_discount;
  std::optional<int> lm_min_count;
  lm->add_option("--domain", lm_domain, "Only this domain");
  lm->add_option("--discount", lm_discount, "Absolute discount");
  lm->add_option("--min-count", lm_min_count, "Vocabulary count cutoff");

  // features
  auto* features = app.add_subcommand("features", "Compute f1..f10 for every ordered domain pair");
  std::optional<double> feat_alpha, feat_smoothing;
  features->add_option("--alpha", feat_alpha, "Renyi order");
  features->add_option("--smoothing", feat_smoothing, "Additive smoothing");

  // adapt
  auto* adapt = app.add_subcommand("adapt", "Fit adaptation models");
  std::string ad_source, ad_target, ad_variant;
  std::optional<int> ad_layers;
  std::optional<double> ad_dropout, ad_lambda, ad_r, ad_noise;
  std::optional<std::uint64_t> ad_seed;
  adapt->add_option("--source", ad_source, "Source domain");
  adapt->add_option("--target", ad_target, "Target domain");
  adapt->add_option("--variant", ad_variant, "dt, sda, msda or msdar");
  adapt->add_option("--layers", ad_layers, "Stacked layers");
  adapt->add_option("--dropout", ad_dropout, "Marginalized dropout rate");
  adapt->add_option("--lambda", ad_lambda, "Domain regularizer weight");
  adapt->add_option("--R", ad_r, "Domain regularizer target");
  adapt->add_option("--noise-scale", ad_noise, "SDA noise scale");
  adapt->add_option("--seed", ad_seed, "Adaptation seed");

  // downstream
  auto* downstream = app.add_subcommand("downstream", "Cross-domain F1 matrices");
  std::string ds_variant;
  std::optional<int> ds_runs;
  std::optional<double> ds_threshold;
  std::optional<std::uint64_t> ds_seed;
  downstream->add_option("--variant", ds_variant, "dt, sda, msda or msdar");
  downstream->add_option("--runs", ds_runs, "Classifier seeds averaged");
  downstream->add_option("--threshold", ds_threshold, "Success threshold on normalized F1");
  downstream->add_option("--seed", ds_seed, "Downstream seed");

  // meta
  auto* meta = app.add_subcommand("meta", "Leave-one-target-out meta models");
  std::string meta_mode, meta_variant;
  std::optional<std::uint64_t> meta_seed;
  meta->add_option("--mode", meta_mode, "predictor or ranker");
  meta->add_option("--variant", meta_variant, "dt, sda, msda or msdar");
  meta->add_option("--seed", meta_seed, "Meta seed");

  // report
  auto* report = app.add_subcommand("report", "Tables and PCA exports");
  std::string report_out;
  report->add_option("--out", report_out, "Output directory");

  auto* pipeline = app.add_subcommand("pipeline", "Run every stage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (!in_out.empty()) g.workspace = in_out;
    PipelineConfig cfg = resolve_config(g);
    auto make = [&](const PipelineConfig& c) {
      save_config(g, c);
      return Pipeline(g.workspace, c, g.jobs, &std::cerr);
    };

    if (*ingest) {
      DomainSource src{in_name, fs::absolute(in_path), parse_format(in_format), in_threshold};
      auto it = std::find_if(cfg.domains.begin(), cfg.domains.end(), [&](const auto& d) { return d.name == in_name; });
      if (it != cfg.domains.end())
        *it = src;
      else
        cfg.domains.push_back(src);
      if (in_seed) cfg.stage_seeds["split"] = *in_seed;
      make(cfg).ingest(in_name);
    } else if (*synth) {
      if (!synth_spec.empty()) {
        std::ifstream in(synth_spec);
        if (!in) throw ValidationError("cannot open " + synth_spec);
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
          throw ValidationError(synth_spec + ": " + e.what());
        }
        if (j.contains("seed")) cfg.stage_seeds["synthetic"] = j["seed"].get<std::uint64_t>();
        j.erase("seed");
        cfg.synthetic = synthetic_spec_from_json(j);
      }
      if (!cfg.synthetic) cfg.synthetic = SyntheticSpec{};
      if (synth_seed) cfg.stage_seeds["synthetic"] = *synth_seed;
      make(cfg).ingest();
    } else if (*embed) {
      if (embed_dim) cfg.embed.dim = *embed_dim;
      if (embed_seed) cfg.stage_seeds["embed"] = *embed_seed;
      make(cfg).embed(embed_domain.empty() ? std::nullopt : std::optional<std::string>(embed_domain));
    } else if (*lm) {
      if (lm_discount) cfg.lm_discount = *lm_discount;
      if (lm_min_count) cfg.lm_min_count = *lm_min_count;
      make(cfg).lm(lm_domain.empty() ? std::nullopt : std::optional<std::string>(lm_domain));
    } else if (*features) {
      if (feat_alpha) cfg.features.renyi_alpha = *feat_alpha;
      if (feat_smoothing) cfg.features.smoothing = *feat_smoothing;
      make(cfg).features();
    } else if (*adapt) {
      const auto variant = variant_opt(ad_variant);
      if (ad_source.empty() != ad_target.empty()) throw ValidationError("adapt: give both --source and --target or neither");
      for (auto v : variant ? std::vector<AdaptVariant>{*variant} : cfg.variants) {
        if (v == AdaptVariant::none) continue;
        auto& ac = cfg.adapt_config(v);
        if (ad_layers) ac.layers = *ad_layers;
        if (ad_dropout) ac.dropout = *ad_dropout;
        if (ad_lambda) ac.lambda = *ad_lambda;
        if (ad_r) ac.reg_target = *ad_r;
        if (ad_noise) ac.noise_scale = *ad_noise;
        ac.validate();
      }
      if (ad_seed) cfg.stage_seeds["adapt"] = *ad_seed;
      std::optional<std::pair<std::string, std::string>> pair;
      if (!ad_source.empty()) pair = std::make_pair(ad_source, ad_target);
      make(cfg).adapt(variant, pair);
    } else if (*downstream) {
      if (ds_runs) cfg.downstream_runs = *ds_runs;
      if (ds_threshold) cfg.success_threshold = *ds_threshold;
      if (ds_seed) cfg.stage_seeds["downstream"] = *ds_seed;
      make(cfg).downstream(variant_opt(ds_variant));
    } else if (*meta) {
      if (meta_seed) cfg.stage_seeds["meta"] = *meta_seed;
      make(cfg).meta(meta_mode.empty() ? std::nullopt : std::optional<std::string>(meta_mode), variant_opt(meta_variant));
    } else if (*report) {
      auto p = make(cfg);
      p.report(report_out.empty() ? std::nullopt : std::optional<fs::path>(report_out));
      print_tables(p);
    } else if (*pipeline) {
      auto p = make(cfg);
      p.run();
      print_tables(p);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ComputationError& e) {
    std::cerr << "computation error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "computation error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
