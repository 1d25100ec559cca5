#include <cctype>
#include <regex>

#include "uq/judges.hpp"
#include "uq/pipeline.hpp"

#include "testkit.hpp"

namespace uq::testkit {

namespace {

// Prompt i gets correct_count(i) correct samples out of ten; the greedy answer
// is correct unless i % 4 == 3. Confidence and correctness therefore agree
// often but not always.
int correct_count(int i) { return (i * 7) % 11; }
bool greedy_correct(int i) { return i % 4 != 3; }

std::string sampled(int i, int ordinal) {
  const std::string n = std::to_string(i);
  if (ordinal < correct_count(i)) {
    static const char* forms[] = {"answer ", "Answer ", "the answer "};
    std::string s = forms[ordinal % 3] + n;
    if (ordinal % 2) s += ".";
    return s;
  }
  if (ordinal % 2) return "guess " + n;
  return "nonsense " + n + " " + std::to_string(ordinal);
}

std::optional<int> item_number(const std::string& text) {
  static const std::regex re(R"(What is item (\d+)\?)");
  std::smatch m;
  if (!std::regex_search(text, m, re)) return std::nullopt;
  return std::stoi(m[1]);
}

std::string normalize(std::string s) {
  std::string out;
  for (char c : s)
    if (!std::ispunct(static_cast<unsigned char>(c))) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (out.rfind("the ", 0) == 0) out.erase(0, 4);
  return trim(out);
}

bool is_answer(const std::string& response, int i) { return normalize(response) == "answer " + std::to_string(i); }

// Text between `open` and the last occurrence of `close` after it.
std::optional<std::string> between(const std::string& s, const std::string& open, const std::string& close,
                                   std::size_t from = 0) {
  const std::size_t a = s.find(open, from);
  if (a == std::string::npos) return std::nullopt;
  const std::size_t start = a + open.size();
  const std::size_t b = s.rfind(close);
  if (b == std::string::npos || b < start) return std::nullopt;
  return s.substr(start, b - start);
}

std::string strip_question(const std::string& s) {
  const std::size_t q = s.find("? ");
  return q == std::string::npos ? s : s.substr(q + 2);
}

std::string model_of(const ScriptedRequest& r) { return r.body.value("model", std::string{}); }

}  // namespace

std::vector<PromptInstance> synthetic_instances(int n) {
  std::vector<PromptInstance> out;
  for (int i = 0; i < n; ++i) {
    PromptInstance p;
    p.id = "syn:" + std::to_string(i);
    p.task = TaskKind::RCQA;
    p.context = "Passage " + std::to_string(i) + ". Item " + std::to_string(i) + " is answer " + std::to_string(i) + ".";
    p.question = "What is item " + std::to_string(i) + "?";
    p.references = {"answer " + std::to_string(i)};
    p.ambiguous = i % 2 == 0;
    out.push_back(std::move(p));
  }
  return out;
}

void install_synthetic_rules(ScriptedEndpoint& ep) {
  // Generator.
  ep.add([](const ScriptedRequest& r) -> std::optional<json> {
    if (r.echo || model_of(r) != "gen" || r.path != "/v1/completions") return std::nullopt;
    const auto i = item_number(r.prompt);
    if (!i) return std::nullopt;
    const bool greedy = r.body.value("temperature", 1.0) == 0.0;
    std::string text = greedy ? (greedy_correct(*i) ? " answer " + std::to_string(*i) : " guess " + std::to_string(*i))
                              : " " + sampled(*i, r.ordinal);
    return completion_body(text + "\nQuestion: next", "stop", 4);
  });

  // Pairwise equivalence: same normalized response after the question prefix.
  ep.add([](const ScriptedRequest& r) -> std::optional<json> {
    if (r.echo || model_of(r) != "judge" || r.prompt.find("semantically entails") == std::string::npos)
      return std::nullopt;
    const auto one = between(r.prompt, "String 1:'", "' String 2:'");
    const std::size_t two_at = r.prompt.find("' String 2:'");
    const auto two = between(r.prompt, "' String 2:'", "'.", two_at);
    if (!one || !two) return std::nullopt;
    const bool same = normalize(strip_question(*one)) == normalize(strip_question(*two));
    return completion_body(same ? "True" : "False");
  });

  // Adequacy: correct answers are plausible; some guesses get an unusable reply.
  ep.add([](const ScriptedRequest& r) -> std::optional<json> {
    if (r.echo || model_of(r) != "judge" || r.prompt.find("plausible given the document") == std::string::npos)
      return std::nullopt;
    const auto i = item_number(r.prompt);
    const std::size_t at = r.prompt.rfind("Answer:'");
    if (!i || at == std::string::npos) return std::nullopt;
    const auto answer = between(r.prompt, "Answer:'", "'.", at);
    if (!answer) return std::nullopt;
    if (is_answer(*answer, *i)) return completion_body("True");
    if (normalize(*answer).rfind("guess", 0) == 0 && *i % 3 == 0) return completion_body("True or False");
    return completion_body("False");
  });

  // P(Adequate) option scoring on the generator.
  ep.options_with([](const std::string& head, const std::string& option) -> std::optional<double> {
    if (head.find("The possible answer is:") == std::string::npos) return std::nullopt;
    const auto i = item_number(head);
    const auto answer = between(head, "Possible answer: ", "\nIs the possible answer:");
    if (!i || !answer) return std::nullopt;
    const double a = is_answer(*answer, *i) ? -0.2 - 0.01 * *i : -1.6 + 0.02 * *i;
    if (option == " (A)") return a;
    if (option == " (B)") return -1.0;
    return std::nullopt;
  });
}

json synthetic_config(const ScriptedEndpoint& ep, const std::filesystem::path& dir, int prompts) {
  std::filesystem::create_directories(dir / "data");
  save_jsonl(dir / "data" / "instances.jsonl", synthetic_instances(prompts));

  json judge = ep.endpoint("judge", ApiKind::completions, 8);
  json gen = ep.endpoint("gen", ApiKind::completions, 8);
  json cfg{{"dataset", {{"name", "instances"}, {"path", "data/instances.jsonl"}}},
           {"generator", gen},
           {"generation", {{"mode", "unbiased"}, {"n", 10}, {"max_tokens", 32}, {"stop_sequences", {"\n"}}}},
           {"prediction", "greedy"},
           {"adequacy", {{"kind", "adequacy_rcqa_plausible"}, {"endpoint", judge}}},
           {"equivalence", {{"kind", "equivalence_nli_entail"}, {"endpoint", judge}}},
           {"correctness", {{"kind", "correctness_exact"}}},
           {"quantifiers", {"E", "NormE", "SE", "NormSE", "ProbAR", "PAdequate"}},
           {"eval",
            {{"bootstrap", {{{"subset_size", 10}, {"repetitions", 20}}}},
             {"decode_runs", 10},
             {"ablation_sizes", {1, 5, 10}}}},
           {"seed", 20240601},
           {"output_dir", "out"},
           {"cache_dir", "cache"}};
  write_text_atomic(dir / "config.json", cfg.dump(2));
  return cfg;
}

}  // namespace uq::testkit
