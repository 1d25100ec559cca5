#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "uq/core.hpp"
#include "uq/estimators.hpp"
#include "uq/eval.hpp"
#include "uq/gateway.hpp"
#include "uq/judges.hpp"
#include "uq/tasks.hpp"
#include "uq/templates.hpp"

namespace uq::pipeline {

inline constexpr const char* kToolVersion = "uq 0.3.0";

struct DatasetSpec {
  /// abgcoqa | ambigqa | provo | instances (a PromptInstance JSONL file)
  std::string name;
  std::filesystem::path path;
  tasks::Split split = tasks::Split::test;
  tasks::AmbiguityFilter filter = tasks::AmbiguityFilter::ambiguous;
  /// Provo only.
  std::size_t n = 100;
  /// Append a context-corrupted copy of every instance.
  bool corrupt = false;
};

struct EvalOptions {
  std::vector<eval::BootstrapSpec> bootstrap;
  bool with_replacement = false;
  int decode_runs = 10;
  std::vector<int> ablation_sizes;
};

struct RunConfig {
  DatasetSpec dataset;
  EndpointConfig generator;
  GenerationParams generation;
  PredictionSource prediction = PredictionSource::greedy;
  /// Number of seeded drawn predictions evaluated (drawn_sample only).
  int prediction_runs = 1;
  judges::JudgeSpec adequacy;
  judges::JudgeSpec equivalence;
  judges::JudgeSpec correctness;
  std::vector<std::string> quantifiers;
  EvalOptions eval;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::filesystem::path cache_dir;
  std::optional<std::filesystem::path> templates_dir;

  void validate() const;
};

void to_json(json& j, const RunConfig& v);
/// `seed` is required; relative paths stay relative (see load_config).
void from_json(const json& j, RunConfig& v);

/// Reads a config file; relative paths inside it resolve against its directory.
RunConfig load_config(const std::filesystem::path& path);

/// Overrides max_in_flight on every endpoint in the config.
void override_max_in_flight(RunConfig& config, int max_in_flight);

TemplateRegistry templates_for(const RunConfig& config);

/// Runs fn(i) for i in [0, count) on up to `workers` threads. The first failure
/// is rethrown after all workers stop, prefixed by label(i).
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn,
                  const std::function<std::string(std::size_t)>& label);

/// Building blocks shared by `run` and the individual CLI subcommands.
std::vector<PromptInstance> build_instances(const DatasetSpec& dataset, std::uint64_t seed,
                                            const TemplateRegistry& templates);

/// Index of the drawn prediction for a prompt in a given run.
std::size_t drawn_index(std::uint64_t seed, const std::string& prompt_id, int run, std::size_t n);

std::vector<SampleSet> sample_all(std::span<const PromptInstance> instances, Gateway& gateway,
                                  const GenerationParams& params, PredictionSource prediction,
                                  std::uint64_t seed);

std::vector<VerdictList> judge_all(std::span<const PromptInstance> instances, std::span<const SampleSet> samples,
                                   const judges::JudgeSpec& spec, const judges::JudgeEndpoints& endpoints,
                                   const TemplateRegistry& templates);

std::vector<ClusterPartition> cluster_all(std::span<const PromptInstance> instances,
                                          std::span<const SampleSet> samples, const judges::JudgeSpec& spec,
                                          Gateway& gateway, const TemplateRegistry& templates);

/// Scores that need nothing beyond samples, partitions and verdicts. ProbAR is
/// omitted for instances whose verdicts were all dismissed.
std::vector<QuantifierResult> score_offline(const SampleSet& samples, const ClusterPartition* partition,
                                            const VerdictList* verdicts, std::span<const std::string> quantifiers);

/// P(Adequate) for one prediction; nullopt when the endpoint has no logprobs.
std::optional<double> p_adequate_score(const PromptInstance& instance, const SampleSet& samples,
                                       const std::string& prediction, Gateway& generator,
                                       const TemplateRegistry& templates);

EvalRecord make_record(const std::string& prompt_id, std::span<const QuantifierResult> scores,
                       std::span<const std::string> quantifiers, bool correct, CorrectnessSource source);

struct RunSummary {
  std::vector<std::string> stages_run;
  std::vector<std::string> stages_skipped;
  json report;
  std::uint64_t network_calls = 0;
};

RunSummary run(const RunConfig& config);

struct AblationRow {
  int k = 0;
  std::vector<EvalRecord> records;
  std::map<std::string, std::optional<double>> auroc;
};

/// Re-scores the first k samples of every stored SampleSet using the stored
/// verdicts and partitions. Needs a completed run in config.output_dir; makes
/// no endpoint calls. P(Adequate) is carried only for k equal to the stored N.
std::vector<AblationRow> ablate_sample_size(const RunConfig& config, std::span<const int> sizes);

json ablation_report(std::span<const AblationRow> rows);

}  // namespace uq::pipeline
