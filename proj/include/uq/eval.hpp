#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uq/core.hpp"

namespace uq::eval {

struct CurvePoint {
  double coverage = 0.0;
  double precision = 0.0;
  double threshold = 0.0;
  bool operator==(const CurvePoint&) const = default;
};

struct ClassifierReport {
  double recall = 0.0;
  double precision = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  int tp = 0, fp = 0, tn = 0, fn = 0;
};

void to_json(json& j, const CurvePoint& v);
void to_json(json& j, const ClassifierReport& v);

/// A record's score oriented so that larger means more confident (entropies
/// are negated); nullopt when the record lacks the quantifier.
std::optional<double> confidence(const EvalRecord& record, std::string_view quantifier);

/// Mann-Whitney form with midranks for ties. nullopt when either class is empty.
std::optional<double> auroc_from_scores(std::span<const double> correct, std::span<const double> incorrect);

/// Trapezoidal area under the ROC curve traced over distinct thresholds.
std::optional<double> roc_trapezoid_area(std::span<const double> correct, std::span<const double> incorrect);

/// Records lacking the quantifier are left out.
std::optional<double> auroc(std::span<const EvalRecord> records, std::string_view quantifier);

/// One point per distinct threshold, from the highest down; every point accepts
/// all records scoring at or above its threshold.
std::vector<CurvePoint> precision_coverage_curve(std::span<const EvalRecord> records,
                                                 std::string_view quantifier);

struct BootstrapResult {
  std::size_t subset_size = 0;
  int repetitions = 0;
  bool with_replacement = false;
  std::vector<std::optional<double>> values;
  std::optional<double> mean;
  /// Sample standard deviation (n - 1); 0 with a single defined value.
  std::optional<double> stddev;
  int undefined = 0;
};

void to_json(json& j, const BootstrapResult& v);

BootstrapResult bootstrap_auroc(std::span<const EvalRecord> records, std::string_view quantifier,
                                std::size_t subset_size, int repetitions, std::uint64_t seed,
                                bool with_replacement = false);

ClassifierReport classifier_metrics(const std::vector<bool>& predicted, const std::vector<bool>& gold);

/// Seeded uniform pick among samples judged Adequate; nullopt means abstain.
std::optional<Sample> probar_aware_decode(const SampleSet& sample_set, std::span<const Verdict> verdicts,
                                          std::uint64_t seed);

using CorrectnessFn = std::function<bool(const PromptInstance&, const std::string& prediction)>;

struct DecodePrecision {
  std::optional<double> mean;
  std::vector<std::optional<double>> per_run;
  int null_runs = 0;
};

void to_json(json& j, const DecodePrecision& v);

/// Inputs are aligned by position. Run r decodes prompt p with
/// sub_seed(sub_seed(seed, "run/r"), p.id).
DecodePrecision decode_precision(std::span<const PromptInstance> instances,
                                 std::span<const SampleSet> sample_sets,
                                 std::span<const VerdictList> verdicts, const CorrectnessFn& correct,
                                 int runs, std::uint64_t seed);

struct BootstrapSpec {
  std::size_t subset_size = 0;
  int repetitions = 0;
  bool operator==(const BootstrapSpec&) const = default;
};

void to_json(json& j, const BootstrapSpec& v);
void from_json(const json& j, BootstrapSpec& v);

struct ReportOptions {
  std::vector<std::string> quantifiers;
  std::vector<BootstrapSpec> bootstrap;
  bool with_replacement = false;
  std::uint64_t seed = 0;
};

/// Report object: per quantifier AUROC (or null), the precision-coverage curve,
/// and bootstrap summaries. No timestamps, so equal inputs give equal bytes.
json build_report(std::span<const EvalRecord> records, const ReportOptions& options);

/// curves/<q>.csv and bootstrap/<q>_<size>.csv style files under `dir`.
void export_csv(const json& report, const std::filesystem::path& dir);

/// Quantifier names present on any record, in first-seen order.
std::vector<std::string> quantifier_names(std::span<const EvalRecord> records);

}  // namespace uq::eval
