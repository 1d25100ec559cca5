#include "uq/estimators.hpp"

#include <algorithm>
#include <cmath>

namespace uq {

std::string to_string(Quantifier q) { return json(q).get<std::string>(); }

Quantifier parse_quantifier(std::string_view s) {
  for (Quantifier q : all_quantifiers())
    if (to_string(q) == s) return q;
  throw Error("unknown quantifier '" + std::string(s) + "'");
}

const std::vector<Quantifier>& all_quantifiers() {
  static const std::vector<Quantifier> all{Quantifier::E,      Quantifier::NormE,  Quantifier::SE,
                                           Quantifier::NormSE, Quantifier::ProbAR, Quantifier::PAdequate};
  return all;
}

bool higher_is_confident(std::string_view name) { return name != "E" && name != "SE"; }

void to_json(json& j, const QuantifierResult& v) {
  j = json{{"prompt_id", v.prompt_id}, {"name", v.name}, {"value", v.value}};
  j["support_size"] = v.support_size ? json(*v.support_size) : json(nullptr);
  j["judged_count"] = v.judged_count ? json(*v.judged_count) : json(nullptr);
}

void from_json(const json& j, QuantifierResult& v) {
  v.prompt_id = j.at("prompt_id").get<std::string>();
  v.name = parse_quantifier(j.at("name").get<std::string>());
  v.value = j.at("value").get<double>();
  v.support_size.reset();
  v.judged_count.reset();
  if (auto it = j.find("support_size"); it != j.end() && !it->is_null()) v.support_size = it->get<int>();
  if (auto it = j.find("judged_count"); it != j.end() && !it->is_null()) v.judged_count = it->get<int>();
}

double entropy_of_counts(std::span<const int> counts) {
  if (counts.empty()) throw Error("empty sample set");
  long long total = 0;
  for (int c : counts) {
    if (c < 1) throw Error("counts must be positive");
    total += c;
  }
  const double n = static_cast<double>(total);
  double h = 0.0;
  for (int c : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return std::max(h, 0.0);
}

QuantifierResult mc_entropy(const SampleSet& sample_set) {
  const auto dist = empirical_distribution(std::span<const Sample>(sample_set.samples));
  std::vector<int> counts;
  counts.reserve(dist.size());
  for (const auto& f : dist) counts.push_back(f.count);
  return QuantifierResult{sample_set.prompt_id, Quantifier::E, entropy_of_counts(counts),
                          static_cast<int>(counts.size()), std::nullopt};
}

QuantifierResult semantic_entropy(const ClusterPartition& partition) {
  partition.validate();
  const auto sizes = partition.cluster_sizes();
  return QuantifierResult{partition.prompt_id, Quantifier::SE, entropy_of_counts(sizes), partition.J,
                          std::nullopt};
}

double normalized_confidence(double entropy_value, int support_size) {
  if (support_size < 1) throw Error("support size must be at least 1");
  if (!std::isfinite(entropy_value)) throw Error("entropy must be finite");
  if (support_size == 1) return 1.0;
  const double c = 1.0 - entropy_value / std::log(static_cast<double>(support_size));
  return std::clamp(c, 0.0, 1.0);
}

QuantifierResult normalized(const QuantifierResult& entropy) {
  if (entropy.name != Quantifier::E && entropy.name != Quantifier::SE)
    throw Error("only E and SE can be normalized");
  if (!entropy.support_size) throw Error("entropy result lacks a support size");
  QuantifierResult out = entropy;
  out.name = entropy.name == Quantifier::E ? Quantifier::NormE : Quantifier::NormSE;
  out.value = normalized_confidence(entropy.value, *entropy.support_size);
  return out;
}

QuantifierResult probar(std::string prompt_id, std::span<const Verdict> verdicts) {
  int adequate = 0, inadequate = 0;
  for (const auto& v : verdicts) {
    if (v.value == VerdictValue::Adequate) ++adequate;
    else if (v.value == VerdictValue::Inadequate) ++inadequate;
  }
  const int judged = adequate + inadequate;
  if (judged == 0) throw InstanceInvalid("every verdict for '" + prompt_id + "' was dismissed");
  return QuantifierResult{std::move(prompt_id), Quantifier::ProbAR,
                          static_cast<double>(adequate) / static_cast<double>(judged), std::nullopt, judged};
}

QuantifierResult probar(const VerdictList& verdicts) { return probar(verdicts.prompt_id, verdicts.verdicts); }

double p_adequate(double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b)) throw Error("option logprobs must be finite");
  // exp(a) / (exp(a) + exp(b)) = 1 / (1 + exp(b - a)), arranged so exp never overflows.
  const double d = b - a;
  if (d > 0) {
    const double e = std::exp(-d);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(d));
}

}  // namespace uq
