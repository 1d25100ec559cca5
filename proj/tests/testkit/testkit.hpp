#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "uq/core.hpp"
#include "uq/gateway.hpp"

namespace httplib {
class Server;
}

namespace uq::testkit {

struct ScriptedRequest {
  std::string path;
  json body;
  /// Completion prompt, last chat message, or NLI premise.
  std::string prompt;
  /// NLI hypothesis; empty otherwise.
  std::string hypothesis;
  int ordinal = 0;
  bool echo = false;
};

/// Returns a response body, or nullopt when the rule does not apply.
using Responder = std::function<std::optional<json>(const ScriptedRequest&)>;

/// OpenAI-shaped completion body.
json completion_body(const std::string& text, const std::string& finish_reason = "stop",
                     std::optional<int> completion_tokens = std::nullopt);
json chat_body(const std::string& text, const std::string& finish_reason = "stop");

/// Loopback HTTP server answering /v1/completions, /v1/chat/completions and
/// /v1/nli from a rule table. Requests no rule matches get HTTP 400 and are
/// recorded as unmatched.
class ScriptedEndpoint {
 public:
  ScriptedEndpoint();
  ~ScriptedEndpoint();
  ScriptedEndpoint(const ScriptedEndpoint&) = delete;
  ScriptedEndpoint& operator=(const ScriptedEndpoint&) = delete;

  /// "http://127.0.0.1:<port>/v1"
  std::string base_url() const;
  EndpointConfig endpoint(const std::string& model, ApiKind api = ApiKind::completions,
                          int max_in_flight = 4) const;

  /// Rules are tried in insertion order.
  void add(Responder r);
  /// Completion whose prompt contains `pattern` (and, if given, at this ordinal).
  void complete(const std::string& pattern, const std::string& text, std::optional<int> ordinal = std::nullopt,
                const std::string& finish_reason = "stop");
  /// Completion text computed from (prompt, ordinal); nullopt declines.
  void complete_with(std::function<std::optional<std::string>(const std::string& prompt, int ordinal)> fn);
  /// Echo-style logprob scoring: a request whose prompt contains `pattern` and
  /// ends with one of the options gets that option's logprob.
  void options(const std::string& pattern, std::map<std::string, double> logprobs);
  /// Echo-style scoring with the logprob computed from (head, option); nullopt declines.
  void options_with(std::function<std::optional<double>(const std::string& head, const std::string& option)> fn);
  /// Like options() but omits the logprobs field.
  void options_without_logprobs(const std::string& pattern);
  void nli(std::function<std::optional<NliProbs>(const std::string& premise, const std::string& hypothesis)> fn);

  /// The next `times` requests fail with `status` before any rule runs.
  void fail_next(int status, int times);
  void set_latency(std::chrono::milliseconds latency);

  std::size_t call_count() const;
  std::vector<ScriptedRequest> calls() const;
  std::vector<std::string> unmatched() const;
  int max_concurrency() const;
  void reset_log();

 private:
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;

  mutable std::mutex mu_;
  std::vector<Responder> rules_;
  std::vector<ScriptedRequest> log_;
  std::vector<std::string> unmatched_;
  int fail_status_ = 0;
  int fail_times_ = 0;
  std::chrono::milliseconds latency_{0};
  std::atomic<int> active_{0};
  std::atomic<int> max_active_{0};
};

// ---- brute-force oracles -----------------------------------------------------

/// Literal pair enumeration over (correct, incorrect) scores; nullopt when a class is empty.
std::optional<long double> brute_force_auroc(std::span<const double> correct, std::span<const double> incorrect);
std::optional<long double> brute_force_auroc(std::span<const EvalRecord> records, const std::string& quantifier);

/// -sum p ln p in extended precision.
long double brute_force_entropy(std::span<const int> counts);
/// Counts of each distinct trimmed text.
std::vector<int> brute_force_counts(std::span<const std::string> texts);
long double brute_force_normalized(long double entropy, int support);
/// nullopt when nothing was judged.
std::optional<long double> brute_force_probar(std::span<const Verdict> verdicts);
long double brute_force_p_adequate(long double a, long double b);

/// Equivalence classes of `labels` (equal label = equivalent) via union-find,
/// renumbered by first occurrence.
std::vector<int> union_find_classes(std::span<const int> labels);

// ---- scenario fixtures -------------------------------------------------------

struct ScenarioFixture {
  std::string name;
  std::string prompt;
  std::vector<std::string> samples;
  std::vector<bool> adequate;
  /// Meaning class per sample; equal classes are mutually entailing.
  std::vector<int> meaning;
};

struct ScenarioResult {
  double E = 0, NormE = 0, SE = 0, NormSE = 0, ProbAR = 0;
  int J = 0;
};

/// Hypothetical models A-F; see scenarios.cpp for the instantiation.
const std::vector<ScenarioFixture>& scenario_fixtures();
const ScenarioFixture& scenario(const std::string& name);

ScenarioResult run_scenario(const ScenarioFixture& fixture);

// ---- synthetic end-to-end study -----------------------------------------------

/// RCQA prompts "syn:0".."syn:<n-1>" with one reference each.
std::vector<PromptInstance> synthetic_instances(int n);

/// Generator ("gen"), adequacy/equivalence judge ("judge") and option-logprob
/// rules for the synthetic study. Total over every request a run makes.
void install_synthetic_rules(ScriptedEndpoint& endpoint);

/// Config JSON for the synthetic study rooted at `dir`: instances are written
/// to dir/data/instances.jsonl; output and cache live under dir.
json synthetic_config(const ScriptedEndpoint& endpoint, const std::filesystem::path& dir, int prompts = 20);

// ---- misc --------------------------------------------------------------------

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "uq");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace uq::testkit
