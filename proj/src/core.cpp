#include "uq/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace uq {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

template <typename T>
json optional_to_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> optional_from_json(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<T>();
}

}  // namespace

std::string to_string(TaskKind t) { return json(t).get<std::string>(); }
std::string to_string(VerdictValue v) { return json(v).get<std::string>(); }

TaskKind parse_task_kind(std::string_view s) {
  if (s == "RCQA") return TaskKind::RCQA;
  if (s == "KBQA") return TaskKind::KBQA;
  if (s == "NWP") return TaskKind::NWP;
  throw Error("unknown task kind '" + std::string(s) + "'");
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

void PromptInstance::validate() const {
  auto fail = [&](const std::string& what) {
    throw Error("instance '" + id + "' (" + to_string(task) + "): " + what);
  };
  if (id.empty()) throw Error("instance with empty id");
  switch (task) {
    case TaskKind::RCQA:
      if (!context) fail("RCQA requires a context");
      if (!question) fail("RCQA requires a question");
      break;
    case TaskKind::KBQA:
      if (!question) fail("KBQA requires a question");
      break;
    case TaskKind::NWP:
      if (!context) fail("NWP requires a context");
      break;
  }
}

void Sample::validate() const {
  if (token_count < 0) throw Error("sample with negative token_count");
  if (text.empty() && finish_reason != FinishReason::stop_token)
    throw Error("empty sample text is only valid with finish_reason stop_token");
}

void GenerationParams::validate() const {
  if (max_tokens <= 0) throw Error("max_tokens must be positive");
  if (n <= 0) throw Error("n must be positive");
  if (mode == DecodeMode::greedy && n != 1) throw Error("greedy decoding implies n = 1");
}

void SampleSet::validate() const {
  if (samples.empty()) throw Error("sample set '" + prompt_id + "' has no samples");
  for (const auto& s : samples) s.validate();
  prediction.validate();
  if (prediction_source == PredictionSource::drawn_sample) {
    bool found = std::any_of(samples.begin(), samples.end(),
                             [&](const Sample& s) { return s.text == prediction.text; });
    if (!found)
      throw Error("sample set '" + prompt_id + "': drawn prediction is not among the samples");
  }
}

SampleSet SampleSet::truncated(std::size_t k) const {
  if (k == 0 || k > samples.size())
    throw Error("cannot truncate sample set '" + prompt_id + "' of size " +
                std::to_string(samples.size()) + " to " + std::to_string(k));
  SampleSet out = *this;
  out.samples.resize(k);
  out.generation_params.n = static_cast<int>(k);
  return out;
}

void ClusterPartition::validate() const {
  if (J <= 0) throw Error("partition '" + prompt_id + "' must have J >= 1");
  std::vector<bool> used(static_cast<std::size_t>(J), false);
  for (int a : assignments) {
    if (a < 0 || a >= J)
      throw Error("partition '" + prompt_id + "' has cluster index out of range");
    used[static_cast<std::size_t>(a)] = true;
  }
  if (std::find(used.begin(), used.end(), false) != used.end())
    throw Error("partition '" + prompt_id + "' has an unused cluster index");
}

std::vector<int> ClusterPartition::cluster_sizes() const {
  validate();
  std::vector<int> sizes(static_cast<std::size_t>(J), 0);
  for (int a : assignments) ++sizes[static_cast<std::size_t>(a)];
  return sizes;
}

ClusterPartition ClusterPartition::truncated(std::size_t k) const {
  if (k == 0 || k > assignments.size())
    throw Error("cannot truncate partition '" + prompt_id + "' to " + std::to_string(k));
  // Indices are dense in creation order, so a prefix uses exactly 0..max.
  ClusterPartition out{prompt_id, {assignments.begin(), assignments.begin() + static_cast<long>(k)}, 0};
  out.J = *std::max_element(out.assignments.begin(), out.assignments.end()) + 1;
  return out;
}

void EvalRecord::validate() const {
  for (const auto& [name, value] : scores) {
    if (value && !std::isfinite(*value))
      throw Error("record '" + prompt_id + "': score " + name + " is not finite");
  }
}

std::vector<SurfaceForm> empirical_distribution(std::span<const std::string> texts) {
  if (texts.empty()) throw Error("empty sample set");
  std::vector<SurfaceForm> forms;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& raw : texts) {
    std::string key = trim(raw);
    auto [it, inserted] = index.try_emplace(key, forms.size());
    if (inserted) forms.push_back({std::move(key), 0, 0.0});
    ++forms[it->second].count;
  }
  const double n = static_cast<double>(texts.size());
  for (auto& f : forms) f.probability = f.count / n;
  return forms;
}

std::vector<SurfaceForm> empirical_distribution(std::span<const Sample> samples) {
  std::vector<std::string> texts;
  texts.reserve(samples.size());
  for (const auto& s : samples) texts.push_back(s.text);
  return empirical_distribution(std::span<const std::string>(texts));
}

// ---- JSON ------------------------------------------------------------------

void to_json(json& j, const QaTurn& v) { j = json{{"question", v.question}, {"answer", v.answer}}; }

void from_json(const json& j, QaTurn& v) {
  if (j.is_array()) {
    v.question = j.at(0).get<std::string>();
    v.answer = j.at(1).get<std::string>();
    return;
  }
  v.question = j.at("question").get<std::string>();
  v.answer = j.at("answer").get<std::string>();
}

void to_json(json& j, const PromptInstance& v) {
  j = json{{"id", v.id},
           {"task", v.task},
           {"context", optional_to_json(v.context)},
           {"qa_history", v.qa_history},
           {"question", optional_to_json(v.question)},
           {"references", v.references},
           {"ambiguous", optional_to_json(v.ambiguous)},
           {"prompt_text", v.prompt_text}};
}

void from_json(const json& j, PromptInstance& v) {
  v.id = j.at("id").get<std::string>();
  v.task = j.at("task").get<TaskKind>();
  v.context = optional_from_json<std::string>(j, "context");
  v.qa_history = j.value("qa_history", std::vector<QaTurn>{});
  v.question = optional_from_json<std::string>(j, "question");
  v.references = j.value("references", std::vector<std::string>{});
  v.ambiguous = optional_from_json<bool>(j, "ambiguous");
  v.prompt_text = j.value("prompt_text", std::string{});
}

void to_json(json& j, const Sample& v) {
  j = json{{"text", v.text},
           {"token_count", v.token_count},
           {"cumulative_logprob", optional_to_json(v.cumulative_logprob)},
           {"finish_reason", v.finish_reason}};
}

void from_json(const json& j, Sample& v) {
  v.text = j.at("text").get<std::string>();
  v.token_count = j.value("token_count", std::int64_t{0});
  v.cumulative_logprob = optional_from_json<double>(j, "cumulative_logprob");
  v.finish_reason = j.at("finish_reason").get<FinishReason>();
}

void to_json(json& j, const GenerationParams& v) {
  j = json{{"mode", v.mode},
           {"max_tokens", v.max_tokens},
           {"stop_sequences", v.stop_sequences},
           {"seed", optional_to_json(v.seed)},
           {"n", v.n}};
}

void from_json(const json& j, GenerationParams& v) {
  v.mode = j.at("mode").get<DecodeMode>();
  v.max_tokens = j.value("max_tokens", 150);
  v.stop_sequences = j.value("stop_sequences", std::vector<std::string>{});
  v.seed = optional_from_json<std::int64_t>(j, "seed");
  v.n = j.value("n", 1);
}

void to_json(json& j, const SampleSet& v) {
  j = json{{"prompt_id", v.prompt_id},
           {"samples", v.samples},
           {"prediction", v.prediction},
           {"prediction_source", v.prediction_source},
           {"generation_params", v.generation_params}};
}

void from_json(const json& j, SampleSet& v) {
  v.prompt_id = j.at("prompt_id").get<std::string>();
  v.samples = j.at("samples").get<std::vector<Sample>>();
  v.prediction = j.at("prediction").get<Sample>();
  v.prediction_source = j.at("prediction_source").get<PredictionSource>();
  v.generation_params = j.at("generation_params").get<GenerationParams>();
}

void to_json(json& j, const Verdict& v) {
  j = json{{"value", v.value}, {"raw_judge_output", v.raw_judge_output}};
}

void from_json(const json& j, Verdict& v) {
  v.value = j.at("value").get<VerdictValue>();
  v.raw_judge_output = j.value("raw_judge_output", std::string{});
}

void to_json(json& j, const VerdictList& v) {
  j = json{{"prompt_id", v.prompt_id}, {"verdicts", v.verdicts}};
}

void from_json(const json& j, VerdictList& v) {
  v.prompt_id = j.at("prompt_id").get<std::string>();
  v.verdicts = j.at("verdicts").get<std::vector<Verdict>>();
}

void to_json(json& j, const ClusterPartition& v) {
  j = json{{"prompt_id", v.prompt_id}, {"assignments", v.assignments}, {"J", v.J}};
}

void from_json(const json& j, ClusterPartition& v) {
  v.prompt_id = j.at("prompt_id").get<std::string>();
  v.assignments = j.at("assignments").get<std::vector<int>>();
  v.J = j.at("J").get<int>();
}

void to_json(json& j, const EvalRecord& v) {
  json scores = json::object();
  for (const auto& [name, value] : v.scores) scores[name] = optional_to_json(value);
  j = json{{"prompt_id", v.prompt_id},
           {"scores", scores},
           {"correct", v.correct},
           {"correctness_source", v.correctness_source}};
}

void from_json(const json& j, EvalRecord& v) {
  v.prompt_id = j.at("prompt_id").get<std::string>();
  v.scores.clear();
  for (const auto& [name, value] : j.at("scores").items()) {
    v.scores[name] = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
  }
  v.correct = j.at("correct").get<bool>();
  v.correctness_source = j.at("correctness_source").get<CorrectnessSource>();
}

// ---- files -----------------------------------------------------------------

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

void write_text_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_jsonl(const std::filesystem::path& path, std::span<const json> rows) {
  std::string buf;
  for (const auto& row : rows) {
    buf += row.dump();
    buf += '\n';
  }
  write_text_atomic(path, buf);
}

}  // namespace uq
