#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace uq {

using json = nlohmann::json;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Transport or protocol failure talking to a model service.
class GatewayError : public Error {
 public:
  using Error::Error;
};

/// The endpoint cannot provide what was asked (e.g. no per-token logprobs).
class UnsupportedCapability : public Error {
 public:
  using Error::Error;
};

/// An instance that cannot be scored (e.g. every verdict was dismissed).
class InstanceInvalid : public Error {
 public:
  using Error::Error;
};

enum class TaskKind { RCQA, KBQA, NWP };
enum class FinishReason { stop_token, length, word_boundary };
enum class DecodeMode { greedy, unbiased };
enum class PredictionSource { greedy, drawn_sample };
enum class VerdictValue { Adequate, Inadequate, Dismissed };
enum class CorrectnessSource { llm_judge, rouge_l, exact_match, manual };

std::string to_string(TaskKind t);
std::string to_string(VerdictValue v);
TaskKind parse_task_kind(std::string_view s);

struct QaTurn {
  std::string question;
  std::string answer;
  bool operator==(const QaTurn&) const = default;
};

struct PromptInstance {
  std::string id;
  TaskKind task = TaskKind::RCQA;
  std::optional<std::string> context;
  std::vector<QaTurn> qa_history;
  std::optional<std::string> question;
  std::vector<std::string> references;
  std::optional<bool> ambiguous;
  std::string prompt_text;

  /// Throws uq::Error when the task's required fields are missing.
  void validate() const;
  bool operator==(const PromptInstance&) const = default;
};

struct Sample {
  std::string text;
  std::int64_t token_count = 0;
  std::optional<double> cumulative_logprob;
  FinishReason finish_reason = FinishReason::stop_token;

  void validate() const;
  bool operator==(const Sample&) const = default;
};

struct GenerationParams {
  DecodeMode mode = DecodeMode::unbiased;
  int max_tokens = 150;
  std::vector<std::string> stop_sequences;
  std::optional<std::int64_t> seed;
  int n = 1;

  void validate() const;
  bool operator==(const GenerationParams&) const = default;
};

struct SampleSet {
  std::string prompt_id;
  std::vector<Sample> samples;
  Sample prediction;
  PredictionSource prediction_source = PredictionSource::greedy;
  GenerationParams generation_params;

  void validate() const;
  /// First k samples in generation order. The prediction is carried over
  /// unchanged, so a drawn prediction may no longer appear among the samples.
  SampleSet truncated(std::size_t k) const;
  bool operator==(const SampleSet&) const = default;
};

struct Verdict {
  VerdictValue value = VerdictValue::Dismissed;
  std::string raw_judge_output;
  bool operator==(const Verdict&) const = default;
};

/// Per-prompt verdicts aligned with SampleSet::samples.
struct VerdictList {
  std::string prompt_id;
  std::vector<Verdict> verdicts;
  bool operator==(const VerdictList&) const = default;
};

struct ClusterPartition {
  std::string prompt_id;
  std::vector<int> assignments;
  int J = 0;

  void validate() const;
  /// n_j for j = 0..J-1.
  std::vector<int> cluster_sizes() const;
  ClusterPartition truncated(std::size_t k) const;
  bool operator==(const ClusterPartition&) const = default;
};

struct EvalRecord {
  std::string prompt_id;
  /// Absent scores are stored as nullopt and serialized as null.
  std::map<std::string, std::optional<double>> scores;
  bool correct = false;
  CorrectnessSource correctness_source = CorrectnessSource::llm_judge;

  void validate() const;
  bool operator==(const EvalRecord&) const = default;
};

struct SurfaceForm {
  std::string text;
  int count = 0;
  double probability = 0.0;
};

/// Trims leading/trailing whitespace (space, tab, CR, LF, VT, FF).
std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
/// Splits on runs of whitespace.
std::vector<std::string> split_whitespace(std::string_view s);

/// Unique surface forms (exact match after trimming) ordered by first
/// occurrence, with counts and count/N probabilities.
std::vector<SurfaceForm> empirical_distribution(std::span<const std::string> texts);
std::vector<SurfaceForm> empirical_distribution(std::span<const Sample> samples);

// JSON conversions (field names follow the JSONL schemas).
void to_json(json& j, const QaTurn& v);
void from_json(const json& j, QaTurn& v);
void to_json(json& j, const PromptInstance& v);
void from_json(const json& j, PromptInstance& v);
void to_json(json& j, const Sample& v);
void from_json(const json& j, Sample& v);
void to_json(json& j, const GenerationParams& v);
void from_json(const json& j, GenerationParams& v);
void to_json(json& j, const SampleSet& v);
void from_json(const json& j, SampleSet& v);
void to_json(json& j, const Verdict& v);
void from_json(const json& j, Verdict& v);
void to_json(json& j, const VerdictList& v);
void from_json(const json& j, VerdictList& v);
void to_json(json& j, const ClusterPartition& v);
void from_json(const json& j, ClusterPartition& v);
void to_json(json& j, const EvalRecord& v);
void from_json(const json& j, EvalRecord& v);

NLOHMANN_JSON_SERIALIZE_ENUM(TaskKind, {{TaskKind::RCQA, "RCQA"},
                                        {TaskKind::KBQA, "KBQA"},
                                        {TaskKind::NWP, "NWP"}})
NLOHMANN_JSON_SERIALIZE_ENUM(FinishReason,
                             {{FinishReason::stop_token, "stop_token"},
                              {FinishReason::length, "length"},
                              {FinishReason::word_boundary, "word_boundary"}})
NLOHMANN_JSON_SERIALIZE_ENUM(DecodeMode, {{DecodeMode::greedy, "greedy"},
                                          {DecodeMode::unbiased, "unbiased"}})
NLOHMANN_JSON_SERIALIZE_ENUM(PredictionSource,
                             {{PredictionSource::greedy, "greedy"},
                              {PredictionSource::drawn_sample, "drawn_sample"}})
NLOHMANN_JSON_SERIALIZE_ENUM(VerdictValue,
                             {{VerdictValue::Adequate, "Adequate"},
                              {VerdictValue::Inadequate, "Inadequate"},
                              {VerdictValue::Dismissed, "Dismissed"}})
NLOHMANN_JSON_SERIALIZE_ENUM(CorrectnessSource,
                             {{CorrectnessSource::llm_judge, "llm_judge"},
                              {CorrectnessSource::rouge_l, "rouge_l"},
                              {CorrectnessSource::exact_match, "exact_match"},
                              {CorrectnessSource::manual, "manual"}})

/// Reads one JSON value per non-empty line.
std::vector<json> read_jsonl(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames, so readers never see a torn file.
void write_jsonl(const std::filesystem::path& path, std::span<const json> rows);
void write_text_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_text(const std::filesystem::path& path);

template <typename T>
std::vector<T> load_jsonl(const std::filesystem::path& path) {
  std::vector<T> out;
  for (const auto& row : read_jsonl(path)) out.push_back(row.get<T>());
  return out;
}

template <typename T>
void save_jsonl(const std::filesystem::path& path, std::span<const T> items) {
  std::vector<json> rows;
  rows.reserve(items.size());
  for (const auto& item : items) rows.emplace_back(item);
  write_jsonl(path, rows);
}

template <typename T>
void save_jsonl(const std::filesystem::path& path, const std::vector<T>& items) {
  save_jsonl(path, std::span<const T>(items));
}

}  // namespace uq
