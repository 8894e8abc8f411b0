// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <thread>

#include "adapt_oracle.hpp"
#include "domsel/pipeline.hpp"
#include "test_support.hpp"

using namespace domsel;
namespace fs = std::filesystem;

namespace {

// Thresholds
constexpr double kMsdaOracleTol = 1e-3;
constexpr double kMsdarResidualTol = 1e-6;
constexpr double kLambdaZeroTol = 1e-9;
constexpr double kRenyiKlGap = 0.02;
constexpr double kKnNormTol = 1e-6;
constexpr double kRandomTop1 = 0.2;  // 1 / 5 candidates
constexpr double kCrpSlack = 0.05;
constexpr int kPipelineSeeds = 10;
constexpr double kFlipNoise = 0.1;
constexpr int kSortRepeats = 15;
constexpr int kSortTrials = 100;
constexpr int kSortRecoveries = 80;

// Runtime limits in seconds
constexpr double kLimit1 = 1, kLimit2 = 1, kLimit3 = 30, kLimit4 = 5, kLimit5 = 10, kLimit6 = 15 * 60, kLimit8 = 5;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

double timed(const std::function<void()>& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void report(int id, const std::string& name, Outcome& o, double seconds, double limit) {
  o.require(seconds < limit, "runtime " + format_double(seconds) + " s >= " + format_double(limit) + " s");
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << id << "  " << name << "  (" << std::fixed
            << std::setprecision(2) << seconds << " s)" << o.detail.str() << std::endl;
  std::cout.unsetf(std::ios::fixed);
}

std::string fmt(double x) {
  std::ostringstream os;
  os << std::setprecision(4) << x;
  return os.str();
}

// 1
void ordering_example() {
  Outcome o;
  const double s = timed([&] {
    const Ordering truth{"Stats", {"StackOverflow", "AskUbuntu", "Apple", "Unix", "MRPC", "SuperUser", "SICK", "Math", "PAWS", "Quora"}};
    const Ordering pred{"Stats", {"StackOverflow", "Math", "Apple", "SuperUser", "Unix", "AskUbuntu", "SICK", "MRPC", "PAWS", "Quora"}};
    const double c = crp(pred, truth), t1 = top_n(pred, truth, 1), t3 = top_n(pred, truth, 3), t5 = top_n(pred, truth, 5);
    o.require(c == 0.5, "CRP " + fmt(c));
    o.require(t1 == 1.0, "Top1 " + fmt(t1));
    o.require(t3 == 2.0 / 3.0, "Top3 " + fmt(t3));
    o.require(t5 == 3.0 / 5.0, "Top5 " + fmt(t5));
    o.detail << " CRP=" << c << " Top1=" << t1 << " Top3=" << fmt(t3) << " Top5=" << t5;
  });
  report(1, "ordering metrics worked example", o, s, kLimit1);
}

// 2
void loto_counts() {
  Outcome o;
  const double s = timed([&] {
    std::vector<std::string> doms;
    for (int i = 0; i < 11; ++i) doms.push_back("domain" + std::to_string(i));
    const auto p = loto_predictor_splits(doms);
    const auto r = loto_ranker_splits(doms);
    o.require(p.size() == 11 && r.size() == 11, "split count");
    for (const auto& x : p) o.require(x.train.size() == 100 && x.test.size() == 10, "predictor split of " + x.target);
    for (const auto& x : r) o.require(x.train.size() == 450 && x.test.size() == 45, "ranker split of " + x.target);
    o.detail << " predictor 11x(100,10), ranker 11x(450,45)";
  });
  report(2, "leave-one-target-out split counts", o, s, kLimit2);
}

// 3
void marginalized_closed_forms() {
  Outcome o;
  const double s = timed([&] {
    double worst_gd = 0, worst_res = 0, worst_zero = 0;
    for (int i = 0; i < 20; ++i) {
      const int d = 2 + i % 7;
      const double p = i % 2 == 0 ? 0.3 : 0.6;
      const MatrixXd Xs = testing_support::random_matrix(d, 25, 5000 + i, 0.5);
      const MatrixXd Xt = testing_support::random_matrix(d, 25, 6000 + i, -0.5);
      MatrixXd X(d, 50);
      X << Xs, Xt;
      const auto all = testing_support::enumerate_moments(X, p);
      const auto tgt = testing_support::enumerate_moments(Xt, p);
      const MatrixXd oracle = testing_support::gradient_descent_minimizer(all, all, VectorXd::Zero(d), 0.0, 0.0);
      const MatrixXd W = msda_layer(X, p);
      worst_gd = std::max(worst_gd, (W - oracle).norm());
      const auto reg = msdar_layer(Xs, Xt, p, 1.0, 1.0);
      worst_res = std::max(worst_res, testing_support::stationarity_residual(reg.W, all, tgt, reg.u, 1.0, 1.0));
      worst_zero = std::max(worst_zero, (msdar_layer(Xs, Xt, p, 0.0, 1.0).W - W).norm());
    }
    o.require(worst_gd < kMsdaOracleTol, "closed form vs gradient descent " + fmt(worst_gd));
    o.require(worst_res < kMsdarResidualTol, "stationarity residual " + fmt(worst_res));
    o.require(worst_zero < kLambdaZeroTol, "lambda=0 vs plain " + fmt(worst_zero));
    o.detail << " max |W-W_gd|=" << fmt(worst_gd) << " max residual=" << fmt(worst_res)
             << " max |W(0)-W|=" << fmt(worst_zero);
  });
  report(3, "marginalized denoising closed forms", o, s, kLimit3);
}

// 4
void divergences() {
  Outcome o;
  const double s = timed([&] {
    std::mt19937 rng(2024);
    std::geometric_distribution<int> g(0.3);
    double worst_gap = 0, min_kl = 1e300, min_r = 1e300;
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 5 + rng() % 995;
      UnigramStats a, b;
      for (std::size_t i = 0; i < n; ++i) {
        const auto tok = "w" + std::to_string(i);
        if (int c = g(rng)) a.counts[tok] = c, a.total_tokens += c;
        if (int c = g(rng)) b.counts[tok] = c, b.total_tokens += c;
      }
      a.counts["anchor"] = b.counts["anchor"] = 1;
      ++a.total_tokens;
      ++b.total_tokens;
      const auto support = union_support(a, b);
      const auto p = smoothed_distribution(a, support), q = smoothed_distribution(b, support);
      o.require(kl_divergence(p, p) == 0.0, "KL(p||p) != 0");
      o.require(renyi_divergence(p, p, 0.99) == 0.0, "Renyi(p||p) != 0");
      const double kl = kl_divergence(p, q), r = renyi_divergence(p, q, 0.99);
      min_kl = std::min(min_kl, kl);
      min_r = std::min(min_r, r);
      worst_gap = std::max(worst_gap, std::abs(r - kl));
    }
    o.require(min_kl >= 0.0, "negative KL");
    o.require(min_r >= 0.0, "negative Renyi");
    o.require(worst_gap < kRenyiKlGap, "Renyi/KL gap " + fmt(worst_gap));
    o.detail << " min KL=" << fmt(min_kl) << " min Renyi=" << fmt(min_r) << " max gap=" << fmt(worst_gap);
  });
  report(4, "divergence suite", o, s, kLimit4);
}

// 5
void kn_validity() {
  Outcome o;
  const double s = timed([&] {
    std::vector<std::string> vocab, other;
    for (int i = 0; i < 45; ++i) vocab.push_back("w" + std::to_string(i));
    for (int i = 0; i < 45; ++i) other.push_back("v" + std::to_string(i));
    const auto own = testing_support::random_corpus("own", 120, vocab, 17, 8);
    const auto disjoint = testing_support::random_corpus("disjoint", 120, other, 18, 8);
    const auto lm = train_kn(own);
    o.require(lm.vocabulary_size() <= 50, "vocabulary above 50");
    double worst = 0;
    std::size_t histories = 0;
    for (const auto& u : lm.vocabulary())
      for (const auto& v : lm.vocabulary()) {
        double sum = 0;
        for (const auto& w : lm.vocabulary()) sum += lm.prob(u, v, w);
        worst = std::max(worst, std::abs(sum - 1.0));
        ++histories;
      }
    o.require(worst < kKnNormTol, "normalization " + fmt(worst));
    const double unseen = lm.prob("w1", "w1", "w1") > 0 && lm.prob("v1", "v2", "w3") > 0 && lm.prob("w3", "w2", "w1") > 0;
    o.require(unseen, "unseen trigram has zero probability");
    const double ppl_own = perplexity(lm, own), ppl_other = perplexity(lm, disjoint);
    o.require(ppl_own < ppl_other, "own perplexity not below disjoint");
    o.detail << " histories=" << histories << " max |sum-1|=" << fmt(worst) << " ppl own=" << fmt(ppl_own)
             << " disjoint=" << fmt(ppl_other);
  });
  report(5, "Kneser-Ney validity", o, s, kLimit5);
}

// 6 and 7
struct SeedRun {
  std::map<std::string, double> high, low;                 // mean normalized F1 per variant
  std::map<std::string, std::map<std::string, double>> top1, crp;  // [mode][variant]
};

SeedRun evaluate_workspace(Pipeline& p, const SyntheticSpec& spec) {
  SeedRun r;
  const auto& cfg = p.config();
  const auto names = p.domain_names();
  double mean_overlap = 0;
  int pairs = 0;
  for (int i = 0; i < spec.domains; ++i)
    for (int j = 0; j < spec.domains; ++j)
      if (i != j) mean_overlap += mixture_overlap(spec, i, j), ++pairs;
  mean_overlap /= pairs;
  for (const auto& vn : p.variant_names()) {
    const auto labels = success_labels(load_f1_matrix(p.root() / "downstream" / vn), cfg.success_threshold);
    double hs = 0, ls = 0;
    int hn = 0, ln = 0;
    for (int i = 0; i < spec.domains; ++i)
      for (int j = 0; j < spec.domains; ++j) {
        if (i == j) continue;
        const double v = labels.normalized.at({names[static_cast<std::size_t>(i)], names[static_cast<std::size_t>(j)]});
        if (mixture_overlap(spec, i, j) > mean_overlap)
          hs += v, ++hn;
        else
          ls += v, ++ln;
      }
    r.high[vn] = hs / hn;
    r.low[vn] = ls / ln;
  }
  for (const auto& mode : cfg.meta_modes) {
    const auto t = p.load_table1(mode);
    for (const auto& vn : p.variant_names()) {
      r.top1[mode][vn] = t.average.at(vn)[3];
      r.crp[mode][vn] = t.average.at(vn)[2];
    }
  }
  return r;
}

std::map<std::string, std::string> csv_outputs(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".csv")
      out[fs::relative(e.path(), root).generic_string()] = testing_support::read_file(e.path());
  return out;
}

void end_to_end(const fs::path& config_path) {
  const unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  testing_support::TempDir keep("acceptance_seed1");
  Outcome o6;
  double seconds6 = 0;
  const auto start6 = std::chrono::steady_clock::now();
  try {
    timed([&] {
      const auto base = load_config(config_path);
      o6.require(base.synthetic.has_value(), "config has no synthetic world");
      if (!base.synthetic) return;
      std::vector<SeedRun> runs;
      for (int seed = 1; seed <= kPipelineSeeds; ++seed) {
        auto cfg = base;
        cfg.override_seed(static_cast<std::uint64_t>(seed));
        testing_support::TempDir scratch("acceptance_seed" + std::to_string(seed));
        const fs::path ws = seed == 1 ? keep.path() : scratch.path();
        Pipeline p(ws, cfg, jobs);
        p.run();
        runs.push_back(evaluate_workspace(p, *base.synthetic));
        const auto& r = runs.back();
        std::cout << "      seed " << seed;
        for (const auto& [vn, h] : r.high) {
          std::cout << "  " << vn << ": high=" << fmt(h) << " low=" << fmt(r.low.at(vn));
          for (const auto& [mode, m] : r.top1)
            std::cout << " " << mode << "(Top1=" << fmt(m.at(vn)) << " CRP=" << fmt(r.crp.at(mode).at(vn)) << ")";
        }
        std::cout << std::endl;
      }
      for (const auto& vn : runs.front().high) {
        const auto& v = vn.first;
        auto mean = [&](const std::function<double(const SeedRun&)>& f) {
          double s = 0;
          for (const auto& r : runs) s += f(r);
          return s / static_cast<double>(runs.size());
        };
        const double high = mean([&](const SeedRun& r) { return r.high.at(v); });
        const double low = mean([&](const SeedRun& r) { return r.low.at(v); });
        const double top1_p = mean([&](const SeedRun& r) { return r.top1.at("predictor").at(v); });
        const double top1_r = mean([&](const SeedRun& r) { return r.top1.at("ranker").at(v); });
        const double crp_p = mean([&](const SeedRun& r) { return r.crp.at("predictor").at(v); });
        const double crp_r = mean([&](const SeedRun& r) { return r.crp.at("ranker").at(v); });
        o6.require(high > low, v + " (a) high-overlap " + fmt(high) + " <= low-overlap " + fmt(low));
        o6.require(top1_p > kRandomTop1, v + " (b) predictor Top1 " + fmt(top1_p));
        o6.require(top1_r > kRandomTop1, v + " (b) ranker Top1 " + fmt(top1_r));
        o6.require(crp_r >= crp_p || std::abs(crp_r - crp_p) <= kCrpSlack,
                   v + " (c) ranker CRP " + fmt(crp_r) + " vs predictor " + fmt(crp_p));
        o6.detail << " " << v << "{norm F1 high=" << fmt(high) << " low=" << fmt(low) << "; Top1 pred=" << fmt(top1_p)
                  << " rank=" << fmt(top1_r) << "; CRP pred=" << fmt(crp_p) << " rank=" << fmt(crp_r) << "}";
      }
    });
  } catch (const std::exception& e) {
    o6.require(false, std::string("exception: ") + e.what());
  }
  seconds6 = std::chrono::duration<double>(std::chrono::steady_clock::now() - start6).count();
  report(6, "synthetic end-to-end transfer and ranking over " + std::to_string(kPipelineSeeds) + " seeds", o6, seconds6,
         kLimit6);

  Outcome o7;
  double seconds7 = 0;
  const auto start7 = std::chrono::steady_clock::now();
  try {
    timed([&] {
      auto cfg = load_config(config_path);
      cfg.override_seed(1);
      const auto first = csv_outputs(keep.path());
      const unsigned other_jobs = jobs == 1 ? 4 : 1;
      testing_support::TempDir again("acceptance_rerun");
      Pipeline p(again.path(), cfg, other_jobs);
      p.run();
      const auto second = csv_outputs(again.path());
      o7.require(!first.empty(), "no CSV outputs");
      o7.require(first == second, "CSV outputs differ between --jobs " + std::to_string(jobs) + " and --jobs " +
                                      std::to_string(other_jobs));
      o7.detail << " " << first.size() << " CSV files compared, jobs " << jobs << " vs " << other_jobs;
    });
  } catch (const std::exception& e) {
    o7.require(false, std::string("exception: ") + e.what());
  }
  seconds7 = std::chrono::duration<double>(std::chrono::steady_clock::now() - start7).count();
  report(7, "determinism across job counts", o7, seconds7, 2.0 * seconds6);
}

// 8
void multisort_recovery() {
  Outcome o;
  const double s = timed([&] {
    const std::vector<std::string> items = {"a", "b", "c", "d", "e"};
    int recovered = 0;
    for (int trial = 0; trial < kSortTrials; ++trial) {
      std::mt19937_64 noise(static_cast<std::uint64_t>(7000 + trial));
      std::uniform_real_distribution<double> u(0.0, 1.0);
      auto noisy = [&](const std::string& x, const std::string& y) { return u(noise) < kFlipNoise ? !(x < y) : x < y; };
      recovered += multi_sort(items, noisy, kSortRepeats, static_cast<std::uint64_t>(trial)).ranked_sources == items;
    }
    int exact = 0;
    for (int seed = 0; seed < kSortTrials; ++seed)
      exact += multi_sort(items, std::less<std::string>(), kSortRepeats, static_cast<std::uint64_t>(seed)).ranked_sources == items;
    o.require(recovered >= kSortRecoveries, "noisy recovery " + std::to_string(recovered) + "/100");
    o.require(exact == kSortTrials, "consistent recovery " + std::to_string(exact) + "/100");
    o.detail << " noisy " << recovered << "/100, consistent " << exact << "/100";
  });
  report(8, "multi-sort recovery", o, s, kLimit8);
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path config = argc > 1 ? fs::path(argv[1]) : fs::path(DOMSEL_SOURCE_DIR) / "configs" / "synthetic.json";
  ordering_example();
  loto_counts();
  marginalized_closed_forms();
  divergences();
  kn_validity();
  multisort_recovery();
  end_to_end(config);
  std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAIL") << std::endl;
  return failures == 0 ? 0 : 1;
}
