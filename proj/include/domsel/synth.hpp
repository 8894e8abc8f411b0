#pragma once

// Synthetic text-pair domains with planted topic overlap.
//
// Each domain draws topics from its own mixture. Both texts of a positive
// pair come from one topic draw; a negative pair's second text uses a
// different topic. Domains that share topic mass therefore share vocabulary
// and the notion of "similar", which gives a known affinity structure.
//
// Under the "topic_half" label rule both texts come from one half of a
// topic's vocabulary and the label is the half, flipped on odd topics. The
// rule is topic-specific, so a source only labels the topics it has seen.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "domsel/corpus.hpp"
#include "domsel/error.hpp"
#include "domsel/util.hpp"

namespace domsel {

struct SyntheticSpec {
  int domains = 6;
  int topics = 6;
  int words_per_topic = 40;
  int background_words = 30;
  std::vector<std::vector<double>> mixtures;  // domains x topics; empty = ring layout
  int examples_per_domain = 500;
  int min_tokens = 6;
  int max_tokens = 14;
  double noise = 0.2;        // probability a token comes from the background vocabulary
  double label_noise = 0.05;  // probability a stored label is flipped
  std::string label_rule = "same_topic";  // or "topic_half"
  std::string name_prefix = "dom";
  std::uint64_t seed = 1;
};

/// Domain i centers on topic round(i * topics / domains) with weight 0.5 and
/// puts 0.25 on each ring neighbour.
inline std::vector<std::vector<double>> ring_mixtures(int domains, int topics) {
  std::vector<std::vector<double>> w(static_cast<std::size_t>(domains), std::vector<double>(static_cast<std::size_t>(topics), 0.0));
  for (int i = 0; i < domains; ++i) {
    auto& row = w[static_cast<std::size_t>(i)];
    if (topics == 1) {
      row[0] = 1.0;
      continue;
    }
    const int c = static_cast<int>(std::lround(static_cast<double>(i) * topics / domains)) % topics;
    row[static_cast<std::size_t>(c)] += 0.5;
    row[static_cast<std::size_t>((c + 1) % topics)] += 0.25;
    row[static_cast<std::size_t>((c + topics - 1) % topics)] += 0.25;
  }
  return w;
}

inline std::vector<std::vector<double>> effective_mixtures(const SyntheticSpec& spec) {
  return spec.mixtures.empty() ? ring_mixtures(spec.domains, spec.topics) : spec.mixtures;
}

/// Sum over topics of min(w_i, w_j): the planted affinity of two domains.
inline double mixture_overlap(const SyntheticSpec& spec, int i, int j) {
  const auto w = effective_mixtures(spec);
  double s = 0;
  for (int k = 0; k < spec.topics; ++k)
    s += std::min(w[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)],
                  w[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)]);
  return s;
}

inline std::string synthetic_domain_name(const SyntheticSpec& spec, int i) {
  return spec.name_prefix + std::to_string(i);
}

/// Returns human-readable warnings for valid-but-degenerate specs; throws on
/// invalid ones.
inline std::vector<std::string> validate(const SyntheticSpec& spec) {
  if (spec.domains < 1 || spec.topics < 1 || spec.words_per_topic < 1 || spec.background_words < 1)
    throw ValidationError("synthetic spec: counts must be positive");
  if (spec.examples_per_domain < 1) throw ValidationError("synthetic spec: examples_per_domain must be positive");
  if (spec.min_tokens < 1 || spec.max_tokens < spec.min_tokens)
    throw ValidationError("synthetic spec: need 1 <= min_tokens <= max_tokens");
  if (!(spec.noise >= 0 && spec.noise < 1) || !(spec.label_noise >= 0 && spec.label_noise < 0.5))
    throw ValidationError("synthetic spec: noise in [0,1), label_noise in [0,0.5)");
  if (spec.label_rule != "same_topic" && spec.label_rule != "topic_half")
    throw ValidationError("synthetic spec: label_rule must be same_topic or topic_half");
  if (spec.label_rule == "topic_half" && spec.words_per_topic < 2)
    throw ValidationError("synthetic spec: topic_half needs words_per_topic >= 2");
  if (!valid_identifier(spec.name_prefix + "0")) throw ValidationError("synthetic spec: bad name_prefix");
  const auto w = effective_mixtures(spec);
  if (static_cast<int>(w.size()) != spec.domains) throw ValidationError("synthetic spec: one mixture per domain required");
  std::vector<std::string> warnings;
  std::vector<int> used(static_cast<std::size_t>(spec.topics), 0);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (static_cast<int>(w[i].size()) != spec.topics)
      throw ValidationError("synthetic spec: mixture " + std::to_string(i) + " needs " + std::to_string(spec.topics) + " weights");
    double sum = 0;
    for (std::size_t k = 0; k < w[i].size(); ++k) {
      if (w[i][k] < 0) throw ValidationError("synthetic spec: negative mixture weight");
      sum += w[i][k];
      if (w[i][k] > 0) used[k] = 1;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("synthetic spec: mixture " + std::to_string(i) + " does not sum to 1");
  }
  if (std::count(used.begin(), used.end(), 1) <= 1)
    warnings.push_back("synthetic spec is degenerate: every domain uses the same single topic");
  return warnings;
}

namespace detail {

inline std::size_t draw(const std::vector<double>& weights, Rng& rng) {
  double total = 0;
  for (double w : weights) total += w;
  double r = uniform01(rng) * total;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    if (r < weights[k]) return k;
    r -= weights[k];
  }
  for (std::size_t k = weights.size(); k-- > 0;)
    if (weights[k] > 0) return k;
  return 0;
}

inline std::vector<double> zipf_weights(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) w[static_cast<std::size_t>(j)] = 1.0 / (j + 1);
  return w;
}

}  // namespace detail

inline std::vector<DomainCorpus> generate_synthetic(const SyntheticSpec& spec) {
  validate(spec);
  const auto mixtures = effective_mixtures(spec);
  const auto topic_zipf = detail::zipf_weights(spec.words_per_topic);
  const auto bg_zipf = detail::zipf_weights(spec.background_words);
  const auto half_zipf = detail::zipf_weights(spec.words_per_topic / 2);

  std::vector<DomainCorpus> out;
  for (int d = 0; d < spec.domains; ++d) {
    Rng rng(derive_seed(spec.seed, "synthetic/" + std::to_string(d)));
    const auto& mix = mixtures[static_cast<std::size_t>(d)];
    auto text = [&](std::size_t topic, int half) {
      const int len = spec.min_tokens + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(spec.max_tokens - spec.min_tokens + 1)));
      std::string s;
      for (int t = 0; t < len; ++t) {
        if (!s.empty()) s += ' ';
        if (uniform01(rng) < spec.noise)
          s += "bg" + std::to_string(detail::draw(bg_zipf, rng));
        else if (half < 0)
          s += "t" + std::to_string(topic) + "w" + std::to_string(detail::draw(topic_zipf, rng));
        else
          s += "t" + std::to_string(topic) + "w" + std::to_string(2 * detail::draw(half_zipf, rng) + static_cast<std::size_t>(half));
      }
      return s;
    };
    std::vector<TextPairExample> examples;
    for (int e = 0; e < spec.examples_per_domain; ++e) {
      const std::size_t z = detail::draw(mix, rng);
      if (spec.label_rule == "topic_half") {
        const int half = uniform01(rng) < 0.5 ? 1 : 0;
        const int label = half ^ static_cast<int>(z % 2);
        std::string a = text(z, half), b = text(z, half);
        const int stored = uniform01(rng) < spec.label_noise ? 1 - label : label;
        examples.push_back(TextPairExample::make(std::move(a), std::move(b), stored));
        continue;
      }
      const int label = uniform01(rng) < 0.5 ? 1 : 0;
      std::size_t z2 = z;
      if (label == 0 && spec.topics > 1) {
        std::vector<double> others = mix;
        others[z] = 0;
        bool any = std::any_of(others.begin(), others.end(), [](double w) { return w > 0; });
        if (!any) {
          others.assign(static_cast<std::size_t>(spec.topics), 1.0);
          others[z] = 0;
        }
        z2 = detail::draw(others, rng);
      }
      std::string a = text(z, -1), b = text(z2, -1);
      const int stored = uniform01(rng) < spec.label_noise ? 1 - label : label;
      examples.push_back(TextPairExample::make(std::move(a), std::move(b), stored));
    }
    out.emplace_back(synthetic_domain_name(spec, d), std::move(examples));
  }
  return out;
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> keys = {"domains", "topics", "words_per_topic", "background_words",
                                                "mixtures", "examples_per_domain", "min_tokens", "max_tokens",
                                                "noise", "label_noise", "label_rule", "name_prefix", "seed"};
  if (!j.is_object()) throw ValidationError("synthetic spec must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw ValidationError("unknown config key 'synthetic." + k + "'");
  SyntheticSpec s;
  try {
    s.domains = j.value("domains", s.domains);
    s.topics = j.value("topics", s.topics);
    s.words_per_topic = j.value("words_per_topic", s.words_per_topic);
    s.background_words = j.value("background_words", s.background_words);
    if (j.contains("mixtures")) s.mixtures = j["mixtures"].get<std::vector<std::vector<double>>>();
    s.examples_per_domain = j.value("examples_per_domain", s.examples_per_domain);
    s.min_tokens = j.value("min_tokens", s.min_tokens);
    s.max_tokens = j.value("max_tokens", s.max_tokens);
    s.noise = j.value("noise", s.noise);
    s.label_noise = j.value("label_noise", s.label_noise);
    s.label_rule = j.value("label_rule", s.label_rule);
    s.name_prefix = j.value("name_prefix", s.name_prefix);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("synthetic spec: ") + e.what());
  }
  return s;
}

inline nlohmann::ordered_json synthetic_spec_to_json(const SyntheticSpec& s) {
  nlohmann::ordered_json j;
  j["domains"] = s.domains;
  j["topics"] = s.topics;
  j["words_per_topic"] = s.words_per_topic;
  j["background_words"] = s.background_words;
  if (!s.mixtures.empty()) j["mixtures"] = s.mixtures;
  j["examples_per_domain"] = s.examples_per_domain;
  j["min_tokens"] = s.min_tokens;
  j["max_tokens"] = s.max_tokens;
  j["noise"] = s.noise;
  j["label_noise"] = s.label_noise;
  j["label_rule"] = s.label_rule;
  j["name_prefix"] = s.name_prefix;
  j["seed"] = s.seed;
  return j;
}

}  // namespace domsel
