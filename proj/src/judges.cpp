#include "uq/judges.hpp"

#include <algorithm>
#include <cctype>

namespace uq::judges {

namespace {

GenerationParams judge_params(int max_tokens) {
  GenerationParams p;
  p.mode = DecodeMode::greedy;
  p.max_tokens = max_tokens;
  p.n = 1;
  return p;
}

bool uses_sentence(const std::string& tmpl_text) {
  return tmpl_text.find("<SENTENCE>") != std::string::npos;
}

bool is_three_way(std::string_view template_id) { return template_id == "nli_lm_3"; }

const std::string& require(const std::optional<std::string>& field, const char* what) {
  if (!field || field->empty()) throw Error(std::string("judge input lacks ") + what);
  return *field;
}

void check_task(JudgeKind kind, TaskKind task) {
  bool ok = true;
  switch (kind) {
    case JudgeKind::adequacy_rcqa_plausible:
    case JudgeKind::adequacy_rcqa_support:
    case JudgeKind::adequacy_rcqa_nli:
      ok = task == TaskKind::RCQA;
      break;
    case JudgeKind::adequacy_kbqa:
      ok = task == TaskKind::KBQA;
      break;
    case JudgeKind::adequacy_nwp:
      ok = task == TaskKind::NWP;
      break;
    default:
      break;
  }
  if (!ok) throw Error("judge " + to_string(kind) + " cannot judge " + uq::to_string(task) + " instances");
}

}  // namespace

JudgeKind parse_judge_kind(std::string_view s) {
  json j = std::string(s);
  JudgeKind k = j.get<JudgeKind>();
  if (json(k).get<std::string>() != s) throw Error("unknown judge kind '" + std::string(s) + "'");
  return k;
}

std::string to_string(JudgeKind k) { return json(k).get<std::string>(); }

bool is_adequacy(JudgeKind k) {
  return k == JudgeKind::adequacy_rcqa_plausible || k == JudgeKind::adequacy_rcqa_support ||
         k == JudgeKind::adequacy_rcqa_nli || k == JudgeKind::adequacy_kbqa ||
         k == JudgeKind::adequacy_nwp;
}

bool is_correctness(JudgeKind k) {
  return k == JudgeKind::correctness_llm || k == JudgeKind::correctness_rouge_l ||
         k == JudgeKind::correctness_exact;
}

std::string resolved_template(const JudgeSpec& spec, TaskKind task) {
  if (!spec.template_id.empty()) return spec.template_id;
  switch (spec.kind) {
    case JudgeKind::adequacy_rcqa_plausible: return "lm_1_step_plausible";
    case JudgeKind::adequacy_rcqa_support: return "lm_1_step_support";
    case JudgeKind::adequacy_rcqa_nli:
      return spec.endpoint && spec.endpoint->api == ApiKind::nli ? "" : "nli_lm_2";
    case JudgeKind::adequacy_kbqa: return "adequacy_kbqa";
    case JudgeKind::adequacy_nwp: return "adequacy_nwp";
    case JudgeKind::equivalence_nli_entail:
      return spec.endpoint && spec.endpoint->api == ApiKind::nli ? "" : "equivalence_lm";
    case JudgeKind::correctness_llm:
      if (task == TaskKind::RCQA) return "correctness_rcqa";
      if (task == TaskKind::KBQA) return "correctness_kbqa";
      throw Error("correctness_llm has no template for NWP; use correctness_exact");
    case JudgeKind::correctness_rouge_l:
    case JudgeKind::correctness_exact:
      return "";
  }
  return "";
}

void JudgeSpec::validate(const TemplateRegistry& templates) const {
  const bool reference_only = kind == JudgeKind::correctness_rouge_l || kind == JudgeKind::correctness_exact;
  if (!reference_only && !endpoint) throw Error("judge " + to_string(kind) + " requires an endpoint");
  if (endpoint) endpoint->validate();
  if (declarative_endpoint) declarative_endpoint->validate();
  if (max_tokens < 1) throw Error("judge max_tokens must be positive");

  std::vector<std::string> ids;
  if (kind == JudgeKind::correctness_llm && template_id.empty()) {
    ids = {"correctness_rcqa", "correctness_kbqa"};
  } else if (!reference_only) {
    const TaskKind probe = kind == JudgeKind::adequacy_kbqa ? TaskKind::KBQA
                           : kind == JudgeKind::adequacy_nwp ? TaskKind::NWP
                                                             : TaskKind::RCQA;
    if (auto id = resolved_template(*this, probe); !id.empty()) ids.push_back(id);
  }
  for (const auto& id : ids) {
    if (!templates.contains(id)) throw Error("unknown template '" + id + "'");
    const std::string& text = templates.get(id).text;
    if (text.find("<EXAMPLE>") != std::string::npos && !example)
      throw Error("template '" + id + "' needs an example");
    if (uses_sentence(text)) {
      if (!templates.contains("declarative")) throw Error("unknown template 'declarative'");
      if (!declarative_endpoint && endpoint && endpoint->api == ApiKind::nli)
        throw Error("template '" + id + "' needs a declarative_endpoint");
    }
  }
  if (endpoint && endpoint->api == ApiKind::nli && kind != JudgeKind::adequacy_rcqa_nli &&
      kind != JudgeKind::equivalence_nli_entail)
    throw Error("judge " + to_string(kind) + " cannot use an NLI classifier endpoint");
  if (kind == JudgeKind::adequacy_rcqa_nli && endpoint && endpoint->api == ApiKind::nli &&
      !declarative_endpoint)
    throw Error("adequacy_rcqa_nli with a classifier needs a declarative_endpoint");
}

void to_json(json& j, const JudgeSpec& v) {
  j = json{{"kind", v.kind}, {"template_id", v.template_id}, {"max_tokens", v.max_tokens}};
  j["endpoint"] = v.endpoint ? json(*v.endpoint) : json(nullptr);
  j["declarative_endpoint"] = v.declarative_endpoint ? json(*v.declarative_endpoint) : json(nullptr);
  j["example"] = v.example ? json(*v.example) : json(nullptr);
}

void from_json(const json& j, JudgeSpec& v) {
  v.kind = parse_judge_kind(j.at("kind").get<std::string>());
  v.template_id = j.value("template_id", std::string{});
  v.max_tokens = j.value("max_tokens", 150);
  v.endpoint.reset();
  v.declarative_endpoint.reset();
  v.example.reset();
  if (auto it = j.find("endpoint"); it != j.end() && !it->is_null()) v.endpoint = it->get<EndpointConfig>();
  if (auto it = j.find("declarative_endpoint"); it != j.end() && !it->is_null())
    v.declarative_endpoint = it->get<EndpointConfig>();
  if (auto it = j.find("example"); it != j.end() && !it->is_null()) v.example = it->get<std::string>();
}

JudgeContext judge_context(const PromptInstance& instance) {
  return JudgeContext{instance.task, instance.context, instance.question};
}

Verdict parse_verdict(std::string_view raw) {
  const std::string lower = to_lower(raw);
  const bool t = lower.find("true") != std::string::npos;
  const bool f = lower.find("false") != std::string::npos;
  VerdictValue v = VerdictValue::Dismissed;
  if (t && !f) v = VerdictValue::Adequate;
  else if (f && !t) v = VerdictValue::Inadequate;
  return Verdict{v, std::string(raw)};
}

Verdict parse_nli_label(std::string_view raw) {
  const std::string lower = to_lower(raw);
  const bool e = lower.find("entail") != std::string::npos;
  const bool c = lower.find("contradict") != std::string::npos;
  const bool n = lower.find("neutral") != std::string::npos;
  VerdictValue v = VerdictValue::Dismissed;
  if (e && !c && !n) v = VerdictValue::Adequate;
  else if (!e && (c || n)) v = VerdictValue::Inadequate;
  return Verdict{v, std::string(raw)};
}

JudgeEndpoints open_endpoints(const JudgeSpec& spec, const std::filesystem::path& cache_dir) {
  JudgeEndpoints out;
  if (spec.endpoint) out.main = Gateway::open(*spec.endpoint, cache_dir);
  if (spec.declarative_endpoint) out.declarative = Gateway::open(*spec.declarative_endpoint, cache_dir);
  else if (spec.endpoint && spec.endpoint->api != ApiKind::nli) out.declarative = out.main;
  return out;
}

std::string to_declarative(std::string_view question, std::string_view answer, Gateway& gateway,
                           const TemplateRegistry& templates) {
  if (trim(answer).empty()) throw Error("cannot convert an empty answer to a declarative sentence");
  const std::string prompt = render(templates.get("declarative").text,
                                    {{"QUESTION", std::string(question)}, {"ANSWER", std::string(answer)}});
  std::string sentence = trim(gateway.generate(prompt, judge_params(64)).text);
  if (auto nl = sentence.find('\n'); nl != std::string::npos) sentence = trim(sentence.substr(0, nl));
  if (sentence.empty()) throw Error("declarative conversion produced an empty sentence");
  return sentence;
}

Verdict nli_adequacy_rule(const NliProbs& p) {
  const bool adequate = p.entail > p.neutral + p.contradict;
  return Verdict{adequate ? VerdictValue::Adequate : VerdictValue::Inadequate,
                 json{{"entail", p.entail}, {"neutral", p.neutral}, {"contradict", p.contradict}}.dump()};
}

Verdict judge_adequacy_nli(const JudgeContext& ctx, std::string_view response, Gateway& nli,
                           Gateway& declarative, const TemplateRegistry& templates) {
  check_task(JudgeKind::adequacy_rcqa_nli, ctx.task);
  const std::string hypothesis =
      to_declarative(require(ctx.question, "a question"), response, declarative, templates);
  return nli_adequacy_rule(nli.nli(require(ctx.context, "a passage"), hypothesis));
}

Verdict judge_adequacy(const JudgeContext& ctx, std::string_view response, const JudgeSpec& spec,
                       const JudgeEndpoints& endpoints, const TemplateRegistry& templates) {
  if (!is_adequacy(spec.kind)) throw Error("judge " + to_string(spec.kind) + " is not an adequacy judge");
  check_task(spec.kind, ctx.task);
  if (!endpoints.main) throw Error("adequacy judge has no endpoint");

  const std::string id = resolved_template(spec, ctx.task);
  if (id.empty()) {
    if (!endpoints.declarative) throw Error("adequacy_rcqa_nli needs a declarative endpoint");
    return judge_adequacy_nli(ctx, response, *endpoints.main, *endpoints.declarative, templates);
  }

  const std::string& text = templates.get(id).text;
  std::map<std::string, std::string> values;
  switch (ctx.task) {
    case TaskKind::RCQA:
      values["PASSAGE"] = require(ctx.context, "a passage");
      values["QUESTION"] = require(ctx.question, "a question");
      values["ANSWER"] = std::string(response);
      break;
    case TaskKind::KBQA:
      values["QUESTION"] = require(ctx.question, "a question");
      values["ANSWER"] = std::string(response);
      break;
    case TaskKind::NWP:
      values["CONTEXT"] = require(ctx.context, "a context");
      values["WORD"] = std::string(response);
      break;
  }
  if (uses_sentence(text)) {
    Gateway* decl = endpoints.declarative ? endpoints.declarative.get() : nullptr;
    if (!decl) throw Error("template '" + id + "' needs a declarative endpoint");
    values["SENTENCE"] = to_declarative(require(ctx.question, "a question"), response, *decl, templates);
  }
  if (text.find("<EXAMPLE>") != std::string::npos) values["EXAMPLE"] = require(spec.example, "an example");

  const std::string raw = endpoints.main->generate(render(text, values), judge_params(spec.max_tokens)).text;
  return is_three_way(id) ? parse_nli_label(raw) : parse_verdict(raw);
}

bool entails(std::string_view premise, std::string_view hypothesis, const JudgeSpec& spec, Gateway& gateway,
             const TemplateRegistry& templates) {
  if (spec.kind != JudgeKind::equivalence_nli_entail)
    throw Error("judge " + to_string(spec.kind) + " is not an equivalence judge");
  if (gateway.config().api == ApiKind::nli) {
    const NliProbs p = gateway.nli(std::string(premise), std::string(hypothesis));
    return p.entail > p.neutral && p.entail > p.contradict;
  }
  const std::string id = spec.template_id.empty() ? "equivalence_lm" : spec.template_id;
  const std::string prompt = render(templates.get(id).text,
                                    {{"STRING1", std::string(premise)}, {"STRING2", std::string(hypothesis)}});
  return parse_verdict(gateway.generate(prompt, judge_params(spec.max_tokens)).text).value ==
         VerdictValue::Adequate;
}

bool judge_equivalence(std::string_view prompt, std::string_view r1, std::string_view r2, const JudgeSpec& spec,
                       Gateway& gateway, const TemplateRegistry& templates) {
  if (trim(r1) == trim(r2)) return true;
  const std::string a = std::string(prompt) + " " + std::string(r1);
  const std::string b = std::string(prompt) + " " + std::string(r2);
  return entails(a, b, spec, gateway, templates) && entails(b, a, spec, gateway, templates);
}

std::string equivalence_prefix(const PromptInstance& instance) {
  if (instance.task == TaskKind::NWP) return instance.context.value_or("");
  return instance.question.value_or("");
}

double rouge_l(std::string_view candidate, std::string_view reference) {
  const auto c = split_whitespace(to_lower(candidate));
  const auto r = split_whitespace(to_lower(reference));
  if (c.empty() || r.empty()) return 0.0;
  std::vector<std::size_t> prev(r.size() + 1, 0), cur(r.size() + 1, 0);
  for (std::size_t i = 1; i <= c.size(); ++i) {
    for (std::size_t j = 1; j <= r.size(); ++j)
      cur[j] = c[i - 1] == r[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[r.size()]);
  if (lcs == 0.0) return 0.0;
  // 2PR/(P+R) reduces to 2*lcs/(|c|+|r|); one division keeps the result
  // correctly rounded, so the threshold comparison is exact at 0.3.
  return 2.0 * lcs / static_cast<double>(c.size() + r.size());
}

std::string normalize_exact(std::string_view s) {
  auto strip = [](unsigned char ch) { return std::isspace(ch) || std::ispunct(ch); };
  std::size_t b = 0, e = s.size();
  while (b < e && strip(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && strip(static_cast<unsigned char>(s[e - 1]))) --e;
  return to_lower(s.substr(b, e - b));
}

bool judge_correctness(const PromptInstance& instance, std::string_view prediction, const JudgeSpec& spec,
                       Gateway* gateway, const TemplateRegistry& templates) {
  if (!is_correctness(spec.kind)) throw Error("judge " + to_string(spec.kind) + " is not a correctness judge");
  if (instance.references.empty()) throw Error("instance '" + instance.id + "' has no references");
  switch (spec.kind) {
    case JudgeKind::correctness_rouge_l: {
      double best = 0.0;
      for (const auto& ref : instance.references) best = std::max(best, rouge_l(prediction, ref));
      return best > kRougeThreshold;
    }
    case JudgeKind::correctness_exact: {
      const std::string p = normalize_exact(prediction);
      return std::any_of(instance.references.begin(), instance.references.end(),
                         [&](const std::string& ref) { return normalize_exact(ref) == p; });
    }
    case JudgeKind::correctness_llm: {
      if (!gateway) throw Error("correctness_llm needs an endpoint");
      std::string refs;
      for (std::size_t i = 0; i < instance.references.size(); ++i) {
        if (i) refs += "; ";
        refs += instance.references[i];
      }
      std::map<std::string, std::string> values{{"AMBIGUOUS_QUESTION", require(instance.question, "a question")},
                                                {"REFERENCES", refs},
                                                {"GREEDY", std::string(prediction)}};
      if (instance.task == TaskKind::RCQA) values["PASSAGE"] = require(instance.context, "a passage");
      const std::string prompt = render(templates.get(resolved_template(spec, instance.task)).text, values);
      return parse_verdict(gateway->generate(prompt, judge_params(spec.max_tokens)).text).value ==
             VerdictValue::Adequate;
    }
    default:
      break;
  }
  throw Error("unreachable correctness kind");
}

CorrectnessSource correctness_source(JudgeKind kind) {
  switch (kind) {
    case JudgeKind::correctness_llm: return CorrectnessSource::llm_judge;
    case JudgeKind::correctness_rouge_l: return CorrectnessSource::rouge_l;
    case JudgeKind::correctness_exact: return CorrectnessSource::exact_match;
    default: throw Error("judge " + to_string(kind) + " is not a correctness judge");
  }
}

}  // namespace uq::judges
