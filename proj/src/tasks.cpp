#include "uq/tasks.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <set>

#include <spdlog/spdlog.h>

#include "uq/gateway.hpp"
#include "uq/rng.hpp"

namespace uq::tasks {

namespace {

constexpr std::array<std::pair<FineLabel, const char*>, 7> kFineLabels{{
    {FineLabel::inability_to_answer, "Inability to answer"},
    {FineLabel::wrong, "Wrong"},
    {FineLabel::match_fully, "Match (fully) 1 plausible answer"},
    {FineLabel::match_partly, "Match (partly) 1 plausible answer"},
    {FineLabel::multiple_plausible, "Multiple plausible answers found"},
    {FineLabel::all_plausible, "All plausible answers found"},
    {FineLabel::plausible_not_in_references, "Plausible but not in references"},
}};

std::string as_text(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_null()) return {};
  return j.dump();
}

void push_unique(std::vector<std::string>& out, std::string value) {
  value = trim(value);
  if (value.empty()) return;
  if (std::find(out.begin(), out.end(), value) == out.end()) out.push_back(std::move(value));
}

std::filesystem::path abgcoqa_file(const std::filesystem::path& path, Split split) {
  if (!std::filesystem::is_directory(path)) return path;
  const char* name = split == Split::train ? "coqa_abg_train.json"
                     : split == Split::dev ? "coqa_abg_val.json"
                                           : "coqa_abg_test.json";
  return path / name;
}

std::optional<bool> ambiguity_flag(const json& rec) {
  auto it = rec.find("ambiguity");
  if (it == rec.end() || it->is_null()) return std::nullopt;
  if (it->is_boolean()) return it->get<bool>();
  std::string v = to_lower(it->get<std::string>());
  if (v == "ambiguous") return true;
  if (v == "non_ambiguous" || v == "non-ambiguous" || v == "unambiguous") return false;
  throw Error("unknown ambiguity label '" + v + "'");
}

PromptInstance abgcoqa_record(const std::string& id, const json& rec, Split split) {
  PromptInstance inst;
  inst.id = "abgcoqa:" + std::string(split == Split::train ? "train" : split == Split::dev ? "dev" : "test") +
            ":" + id;
  inst.task = TaskKind::RCQA;
  inst.context = rec.at("story").get<std::string>();
  for (const auto& turn : rec.value("history_turns", json::array()))
    inst.qa_history.push_back({as_text(turn.at("question")), as_text(turn.at("answer"))});
  const json& target = rec.at("target_turn");
  inst.question = as_text(target.at("question"));
  inst.ambiguous = ambiguity_flag(rec);
  if (auto clar = rec.find("clarification_turn"); clar != rec.end() && clar->is_object()) {
    for (const auto& a : clar->value("answers", json::array())) {
      if (a.is_string()) push_unique(inst.references, a.get<std::string>());
      else if (a.contains("org_ans")) push_unique(inst.references, as_text(a["org_ans"]));
      else if (a.contains("clr_ans")) push_unique(inst.references, as_text(a["clr_ans"]));
    }
  }
  if (target.contains("answer")) push_unique(inst.references, as_text(target["answer"]));
  return inst;
}

json read_json_or_jsonl(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  if (trim(text).empty()) return json::array();
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    json rows = json::array();
    for (auto& row : read_jsonl(path)) rows.push_back(std::move(row));
    return rows;
  }
}

// AmbigQA annotations come either as a list of objects or, in the Hugging
// Face export, as one object of parallel lists.
void ambigqa_annotations(const json& ann, bool& ambiguous, std::vector<std::string>& refs) {
  auto add_answers = [&](const json& answers) {
    if (answers.is_string()) push_unique(refs, answers.get<std::string>());
    else if (answers.is_array())
      for (const auto& a : answers) {
        if (a.is_array()) for (const auto& b : a) push_unique(refs, as_text(b));
        else push_unique(refs, as_text(a));
      }
  };
  auto add_pairs = [&](const json& pairs) {
    if (pairs.is_array()) {
      for (const auto& p : pairs) {
        if (p.contains("answer")) add_answers(p["answer"]);
      }
    } else if (pairs.is_object() && pairs.contains("answer")) {
      add_answers(pairs["answer"]);
    }
  };
  if (ann.is_array()) {
    for (const auto& a : ann) {
      std::string type = a.value("type", std::string{});
      if (type == "multipleQAs") ambiguous = true;
      if (a.contains("qaPairs")) add_pairs(a["qaPairs"]);
      if (a.contains("answer")) add_answers(a["answer"]);
    }
  } else if (ann.is_object()) {
    for (const auto& t : ann.value("type", json::array()))
      if (t == "multipleQAs") ambiguous = true;
    if (ann.contains("qaPairs"))
      for (const auto& p : ann["qaPairs"]) add_pairs(p);
    if (ann.contains("answer")) add_answers(ann["answer"]);
  }
}

}  // namespace

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev" || s == "val" || s == "validation") return Split::dev;
  if (s == "test") return Split::test;
  throw Error("unknown split '" + std::string(s) + "'");
}

AmbiguityFilter parse_filter(std::string_view s) {
  if (s == "ambiguous") return AmbiguityFilter::ambiguous;
  if (s == "unambiguous") return AmbiguityFilter::unambiguous;
  if (s == "both") return AmbiguityFilter::both;
  throw Error("unknown ambiguity filter '" + std::string(s) + "'");
}

std::vector<PromptInstance> load_abgcoqa(const std::filesystem::path& path, Split split,
                                         AmbiguityFilter filter) {
  const auto file = abgcoqa_file(path, split);
  const std::string text = read_text(file);
  std::vector<PromptInstance> out;
  if (trim(text).empty()) return out;
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(file.string() + ": " + e.what());
  }
  const json& data = root.is_object() && root.contains("data") ? root["data"] : root;

  std::vector<std::pair<std::string, const json*>> records;
  if (data.is_object()) {
    for (const auto& [id, rec] : data.items()) records.emplace_back(id, &rec);
  } else if (data.is_array()) {
    for (std::size_t i = 0; i < data.size(); ++i)
      records.emplace_back(data[i].contains("id") ? as_text(data[i]["id"]) : std::to_string(i), &data[i]);
  } else {
    throw Error(file.string() + ": expected an object or array of records");
  }

  std::set<std::string> seen;
  for (std::size_t i = 0; i < records.size(); ++i) {
    PromptInstance inst;
    try {
      inst = abgcoqa_record(records[i].first, *records[i].second, split);
      inst.validate();
    } catch (const std::exception& e) {
      throw Error(file.string() + ": malformed record " + std::to_string(i) + " ('" +
                  records[i].first + "'): " + e.what());
    }
    if (!seen.insert(inst.id).second) throw Error(file.string() + ": duplicate record id " + inst.id);
    const bool amb = inst.ambiguous.value_or(false);
    if (filter == AmbiguityFilter::ambiguous && !amb) continue;
    if (filter == AmbiguityFilter::unambiguous && amb) continue;
    out.push_back(std::move(inst));
  }
  attach_prompts(out);
  return out;
}

std::vector<PromptInstance> load_ambigqa(const std::filesystem::path& path) {
  const json rows = read_json_or_jsonl(path);
  if (!rows.is_array()) throw Error(path.string() + ": expected a list of questions");
  std::vector<PromptInstance> out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const json& row = rows[i];
    PromptInstance inst;
    bool ambiguous = false;
    try {
      inst.id = "ambigqa:" + as_text(row.at("id"));
      inst.task = TaskKind::KBQA;
      inst.question = row.at("question").get<std::string>();
      ambigqa_annotations(row.value("annotations", json::array()), ambiguous, inst.references);
      inst.ambiguous = ambiguous;
      inst.validate();
    } catch (const std::exception& e) {
      throw Error(path.string() + ": malformed record " + std::to_string(i) + ": " + e.what());
    }
    if (!seen.insert(inst.id).second)
      throw Error(path.string() + ": duplicate question id " + inst.id + " at record " + std::to_string(i));
    if (ambiguous) out.push_back(std::move(inst));
  }
  attach_prompts(out);
  return out;
}

std::vector<std::vector<std::string>> parse_delimited(std::string_view text, char delim) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && field.empty()) {
      quoted = true;
      any = true;
    } else if (c == delim) {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field.push_back(c);
      any = true;
    }
  }
  if (quoted) throw Error("unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<PromptInstance> load_provo(const std::filesystem::path& path, std::size_t n,
                                       std::uint64_t seed) {
  std::string text = read_text(path);
  if (text.starts_with("\xEF\xBB\xBF")) text.erase(0, 3);
  const auto first_line = text.substr(0, text.find('\n'));
  const char delim = first_line.find('\t') != std::string::npos ? '\t' : ',';
  const auto rows = parse_delimited(text, delim);
  if (rows.empty()) {
    if (n > 0) throw Error("requested " + std::to_string(n) + " Provo contexts from an empty corpus");
    return {};
  }

  const auto& header = rows.front();
  auto column = [&](std::string_view name, bool required) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (trim(header[i]) == name) return i;
    if (required) throw Error(path.string() + ": missing column " + std::string(name));
    return std::nullopt;
  };
  const std::size_t c_text_id = *column("Text_ID", true);
  const std::size_t c_text = *column("Text", true);
  const std::size_t c_word_no = *column("Word_Number", true);
  const std::size_t c_response = *column("Response", true);

  struct Candidate {
    std::string text_id;
    int word_number;
    std::string prefix;
    std::vector<std::string> responses;
  };
  std::vector<Candidate> candidates;
  std::map<std::pair<std::string, int>, std::size_t> index;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::size_t need = std::max({c_text_id, c_text, c_word_no, c_response});
    if (row.size() <= need) throw Error(path.string() + ": malformed record " + std::to_string(r - 1));
    int word_no = 0;
    try {
      word_no = std::stoi(row[c_word_no]);
    } catch (const std::exception&) {
      throw Error(path.string() + ": malformed record " + std::to_string(r - 1) + ": bad Word_Number");
    }
    auto words = split_whitespace(row[c_text]);
    if (word_no <= 1 || static_cast<std::size_t>(word_no - 1) > words.size()) continue;
    auto key = std::make_pair(trim(row[c_text_id]), word_no);
    auto [it, inserted] = index.try_emplace(key, candidates.size());
    if (inserted) {
      std::string prefix;
      for (int w = 0; w < word_no - 1; ++w) {
        if (w) prefix.push_back(' ');
        prefix += words[static_cast<std::size_t>(w)];
      }
      candidates.push_back({key.first, word_no, std::move(prefix), {}});
    }
    push_unique(candidates[it->second].responses, row[c_response]);
  }

  if (n > candidates.size())
    throw Error("requested " + std::to_string(n) + " Provo contexts but the corpus has " +
                std::to_string(candidates.size()));
  SeededRng rng(seed);
  std::vector<PromptInstance> out;
  for (std::size_t idx : rng.choose(candidates.size(), n)) {
    const auto& c = candidates[idx];
    PromptInstance inst;
    inst.id = "provo:" + c.text_id + ":" + std::to_string(c.word_number);
    inst.task = TaskKind::NWP;
    inst.context = c.prefix;
    inst.references = c.responses;
    out.push_back(std::move(inst));
  }
  attach_prompts(out);
  return out;
}

std::string build_prompt(const PromptInstance& instance, const TemplateRegistry& templates) {
  instance.validate();
  switch (instance.task) {
    case TaskKind::RCQA: {
      std::string p = "Context: " + *instance.context + "\n";
      for (const auto& turn : instance.qa_history) {
        p += "Question: " + turn.question + "\n";
        p += "Answer:" + turn.answer + "\n";
      }
      p += "Question:" + *instance.question + "\n";
      p += "Answer:";
      return p;
    }
    case TaskKind::KBQA:
      return render(templates.get("kbqa_10shot").text, {{"AMBIGUOUS_QUESTION", *instance.question}});
    case TaskKind::NWP:
      return *instance.context;
  }
  throw Error("unreachable task kind");
}

void attach_prompts(std::span<PromptInstance> instances, const TemplateRegistry& templates) {
  for (auto& inst : instances) inst.prompt_text = build_prompt(inst, templates);
}

std::size_t word_count(std::string_view text) { return split_whitespace(text).size(); }

std::vector<PromptInstance> corrupt_contexts(std::span<const PromptInstance> instances,
                                             std::uint64_t seed, const TemplateRegistry& templates) {
  const std::size_t n = instances.size();
  std::vector<std::size_t> lengths(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!instances[i].context) throw Error("instance '" + instances[i].id + "' has no context to corrupt");
    lengths[i] = word_count(*instances[i].context);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });

  // Sweep sorted lengths; a bucket holds everything within 10% of its shortest member.
  std::vector<std::vector<std::size_t>> buckets;
  for (std::size_t idx : order) {
    if (!buckets.empty()) {
      const double anchor = static_cast<double>(lengths[buckets.back().front()]);
      if (static_cast<double>(lengths[idx]) <= anchor * 1.1) {
        buckets.back().push_back(idx);
        continue;
      }
    }
    buckets.push_back({idx});
  }

  // Singletons join the nearest bucket by length.
  for (std::size_t b = 0; b < buckets.size() && buckets.size() > 1;) {
    if (buckets[b].size() != 1) {
      ++b;
      continue;
    }
    const std::size_t len = lengths[buckets[b].front()];
    std::size_t best = b == 0 ? 1 : b - 1;
    if (b > 0 && b + 1 < buckets.size()) {
      const std::size_t left = len - lengths[buckets[b - 1].back()];
      const std::size_t right = lengths[buckets[b + 1].front()] - len;
      best = right < left ? b + 1 : b - 1;
    }
    spdlog::warn("corrupt_contexts: '{}' ({} words) has no same-length partner; using the nearest bucket",
                 instances[buckets[b].front()].id, len);
    buckets[best].push_back(buckets[b].front());
    buckets.erase(buckets.begin() + static_cast<long>(b));
    if (best > b) --best;
    b = 0;
  }

  // Sattolo's algorithm yields a single cycle, hence no fixed points.
  std::vector<std::size_t> donor(n);
  std::iota(donor.begin(), donor.end(), std::size_t{0});
  SeededRng rng(seed);
  for (const auto& bucket : buckets) {
    if (bucket.size() < 2) {
      spdlog::warn("corrupt_contexts: '{}' keeps its own context (only one instance)",
                   instances[bucket.front()].id);
      continue;
    }
    std::vector<std::size_t> perm = bucket;
    for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(i)]);
    for (std::size_t i = 0; i < bucket.size(); ++i) donor[bucket[i]] = perm[i];
  }

  std::vector<PromptInstance> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    PromptInstance inst = instances[i];
    inst.id += ":corrupt";
    inst.context = instances[donor[i]].context;
    inst.prompt_text = build_prompt(inst, templates);
    out.push_back(std::move(inst));
  }
  return out;
}

std::optional<std::string> first_word(std::string_view continuation) {
  auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
  std::size_t b = 0;
  while (b < continuation.size() && is_ws(continuation[b])) ++b;
  if (b == continuation.size()) return std::nullopt;
  std::size_t e = b;
  while (e < continuation.size() && !is_ws(continuation[e])) ++e;
  return std::string(continuation.substr(b, e - b));
}

Sample sample_next_word(Gateway& gateway, const std::string& prompt, const GenerationParams& params,
                        int ordinal) {
  GenerationParams single = params;
  single.n = 1;
  single.stop_sequences.clear();
  Sample raw = gateway.generate(prompt, single, ordinal);
  auto word = first_word(raw.text);
  if (!word) throw Error("no word produced");
  Sample out;
  out.text = *word;
  out.token_count = raw.token_count;
  out.finish_reason = FinishReason::word_boundary;
  return out;
}

FineLabel parse_fine_label(std::string_view label) {
  const std::string t = trim(label);
  for (const auto& [value, name] : kFineLabels)
    if (t == name) return value;
  throw Error("unknown fine-grained label '" + t + "'");
}

std::string to_string(FineLabel label) {
  for (const auto& [value, name] : kFineLabels)
    if (value == label) return name;
  throw Error("unknown fine-grained label");
}

bool map_fine_grained_label(FineLabel label) {
  return label != FineLabel::inability_to_answer && label != FineLabel::wrong;
}

bool map_fine_grained_label(std::string_view label) { return map_fine_grained_label(parse_fine_label(label)); }

void to_json(json& j, const ManualAnnotation& v) {
  j = json{{"prompt_id", v.prompt_id},
           {"sample_index", v.sample_index ? json(*v.sample_index) : json("greedy")},
           {"fine_label", to_string(v.fine_label)},
           {"binary_correct", v.binary_correct}};
}

void from_json(const json& j, ManualAnnotation& v) {
  v.prompt_id = j.at("prompt_id").get<std::string>();
  const json& idx = j.at("sample_index");
  if (idx.is_string()) {
    if (idx.get<std::string>() != "greedy") throw Error("sample_index must be an integer or \"greedy\"");
    v.sample_index.reset();
  } else {
    v.sample_index = idx.get<int>();
  }
  v.fine_label = parse_fine_label(j.at("fine_label").get<std::string>());
  v.binary_correct = j.contains("binary_correct") ? j["binary_correct"].get<bool>()
                                                  : map_fine_grained_label(v.fine_label);
}

std::vector<ManualAnnotation> load_annotations(const std::filesystem::path& path) {
  std::vector<ManualAnnotation> out;
  std::size_t row = 0;
  for (const auto& j : read_jsonl(path)) {
    auto a = j.get<ManualAnnotation>();
    if (a.binary_correct != map_fine_grained_label(a.fine_label))
      throw Error(path.string() + ": annotation " + std::to_string(row) +
                  " has binary_correct inconsistent with '" + to_string(a.fine_label) + "'");
    out.push_back(std::move(a));
    ++row;
  }
  return out;
}

}  // namespace uq::tasks
