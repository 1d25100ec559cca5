#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "uq/core.hpp"
#include "uq/gateway.hpp"
#include "uq/templates.hpp"

namespace uq::judges {

enum class JudgeKind {
  adequacy_rcqa_plausible,
  adequacy_rcqa_support,
  adequacy_rcqa_nli,
  adequacy_kbqa,
  adequacy_nwp,
  equivalence_nli_entail,
  correctness_llm,
  correctness_rouge_l,
  correctness_exact,
};

NLOHMANN_JSON_SERIALIZE_ENUM(JudgeKind,
                             {{JudgeKind::adequacy_rcqa_plausible, "adequacy_rcqa_plausible"},
                              {JudgeKind::adequacy_rcqa_support, "adequacy_rcqa_support"},
                              {JudgeKind::adequacy_rcqa_nli, "adequacy_rcqa_nli"},
                              {JudgeKind::adequacy_kbqa, "adequacy_kbqa"},
                              {JudgeKind::adequacy_nwp, "adequacy_nwp"},
                              {JudgeKind::equivalence_nli_entail, "equivalence_nli_entail"},
                              {JudgeKind::correctness_llm, "correctness_llm"},
                              {JudgeKind::correctness_rouge_l, "correctness_rouge_l"},
                              {JudgeKind::correctness_exact, "correctness_exact"}})

JudgeKind parse_judge_kind(std::string_view s);
std::string to_string(JudgeKind k);
bool is_adequacy(JudgeKind k);
bool is_correctness(JudgeKind k);

struct JudgeSpec {
  JudgeKind kind = JudgeKind::adequacy_rcqa_plausible;
  /// Absent only for the reference-based correctness kinds.
  std::optional<EndpointConfig> endpoint;
  /// Empty selects the kind's default template.
  std::string template_id;
  /// LM used to rewrite QA pairs as declarative sentences; defaults to `endpoint`
  /// when that is a generative endpoint.
  std::optional<EndpointConfig> declarative_endpoint;
  /// Demonstration inserted by the few-shot template.
  std::optional<std::string> example;
  int max_tokens = 150;

  /// Checks kind/endpoint/template consistency against `templates`.
  void validate(const TemplateRegistry& templates = TemplateRegistry::builtin()) const;
  bool operator==(const JudgeSpec&) const = default;
};

void to_json(json& j, const JudgeSpec& v);
void from_json(const json& j, JudgeSpec& v);

/// Template id the spec uses for a task; empty when the judge is not template driven.
std::string resolved_template(const JudgeSpec& spec, TaskKind task);

/// What an adequacy judge may see. References are deliberately absent.
struct JudgeContext {
  TaskKind task = TaskKind::RCQA;
  std::optional<std::string> context;
  std::optional<std::string> question;
};

JudgeContext judge_context(const PromptInstance& instance);

/// true/false substring rule; both or neither dismisses.
Verdict parse_verdict(std::string_view raw);

/// Three-way label parser for templates asking for Entailment/Contradiction/Neutral.
/// Entailment alone is Adequate; Contradiction or Neutral alone is Inadequate.
Verdict parse_nli_label(std::string_view raw);

/// Gateways a judge talks to. `declarative` may be null when unused.
struct JudgeEndpoints {
  std::shared_ptr<Gateway> main;
  std::shared_ptr<Gateway> declarative;
};

JudgeEndpoints open_endpoints(const JudgeSpec& spec, const std::filesystem::path& cache_dir);

std::string to_declarative(std::string_view question, std::string_view answer, Gateway& gateway,
                           const TemplateRegistry& templates = TemplateRegistry::builtin());

Verdict judge_adequacy(const JudgeContext& ctx, std::string_view response, const JudgeSpec& spec,
                       const JudgeEndpoints& endpoints,
                       const TemplateRegistry& templates = TemplateRegistry::builtin());

/// Classifier rule: Adequate iff p_entail > p_neutral + p_contradict.
Verdict nli_adequacy_rule(const NliProbs& probs);

Verdict judge_adequacy_nli(const JudgeContext& ctx, std::string_view response, Gateway& nli,
                           Gateway& declarative,
                           const TemplateRegistry& templates = TemplateRegistry::builtin());

/// One direction of entailment between two already-contextualised texts.
bool entails(std::string_view premise, std::string_view hypothesis, const JudgeSpec& spec,
             Gateway& gateway, const TemplateRegistry& templates = TemplateRegistry::builtin());

/// Bidirectional entailment of "<prompt> <r1>" and "<prompt> <r2>".
/// Trim-equal responses are equivalent without any call.
bool judge_equivalence(std::string_view prompt, std::string_view r1, std::string_view r2,
                       const JudgeSpec& spec, Gateway& gateway,
                       const TemplateRegistry& templates = TemplateRegistry::builtin());

/// Text joined with a response before equivalence judging: the question for QA
/// tasks, the passage prefix for NWP.
std::string equivalence_prefix(const PromptInstance& instance);

double rouge_l(std::string_view candidate, std::string_view reference);
/// Lowercased, with surrounding whitespace and punctuation removed.
std::string normalize_exact(std::string_view s);

constexpr double kRougeThreshold = 0.3;

/// `gateway` is needed only for correctness_llm.
bool judge_correctness(const PromptInstance& instance, std::string_view prediction,
                       const JudgeSpec& spec, Gateway* gateway,
                       const TemplateRegistry& templates = TemplateRegistry::builtin());

CorrectnessSource correctness_source(JudgeKind kind);

}  // namespace uq::judges
