#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uq/core.hpp"

namespace uq {

enum class Quantifier { E, NormE, SE, NormSE, ProbAR, PAdequate };

NLOHMANN_JSON_SERIALIZE_ENUM(Quantifier, {{Quantifier::E, "E"},
                                          {Quantifier::NormE, "NormE"},
                                          {Quantifier::SE, "SE"},
                                          {Quantifier::NormSE, "NormSE"},
                                          {Quantifier::ProbAR, "ProbAR"},
                                          {Quantifier::PAdequate, "PAdequate"}})

std::string to_string(Quantifier q);
Quantifier parse_quantifier(std::string_view s);
const std::vector<Quantifier>& all_quantifiers();

/// Entropies grow with uncertainty; every other quantifier grows with confidence.
bool higher_is_confident(std::string_view quantifier_name);

struct QuantifierResult {
  std::string prompt_id;
  Quantifier name = Quantifier::E;
  double value = 0.0;
  std::optional<int> support_size;
  std::optional<int> judged_count;
  bool operator==(const QuantifierResult&) const = default;
};

void to_json(json& j, const QuantifierResult& v);
void from_json(const json& j, QuantifierResult& v);

/// -sum (c/N) ln(c/N). Counts must be positive.
double entropy_of_counts(std::span<const int> counts);

QuantifierResult mc_entropy(const SampleSet& sample_set);
QuantifierResult semantic_entropy(const ClusterPartition& partition);

/// 1 - H / ln(support), with support 1 mapping to 1.0; clamped to [0, 1].
double normalized_confidence(double entropy_value, int support_size);

QuantifierResult normalized(const QuantifierResult& entropy);

/// #Adequate / (#Adequate + #Inadequate). Throws InstanceInvalid when every
/// verdict was dismissed.
QuantifierResult probar(std::string prompt_id, std::span<const Verdict> verdicts);
QuantifierResult probar(const VerdictList& verdicts);

/// exp(a) / (exp(a) + exp(b)) evaluated without overflow.
double p_adequate(double logprob_a, double logprob_b);

}  // namespace uq
