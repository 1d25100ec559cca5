#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "uq/core.hpp"
#include "uq/templates.hpp"

namespace uq {
class Gateway;
}

namespace uq::tasks {

enum class Split { train, dev, test };
enum class AmbiguityFilter { ambiguous, unambiguous, both };

Split parse_split(std::string_view s);
AmbiguityFilter parse_filter(std::string_view s);

/// Abg-COQA in the upstream JSON layout. `path` is either one split file or
/// the directory holding coqa_abg_{train,val,test}.json.
std::vector<PromptInstance> load_abgcoqa(const std::filesystem::path& path, Split split,
                                         AmbiguityFilter filter);

/// AmbigQA dev questions whose annotations include a multipleQAs entry.
/// Accepts a JSON array, a JSONL file, or the columnar Hugging Face layout.
std::vector<PromptInstance> load_ambigqa(const std::filesystem::path& path);

/// Provo predictability norms (CSV or TSV). Each (text, word position) with a
/// non-empty prefix is a candidate; `n` of them are chosen uniformly with
/// `seed`. References are the distinct human continuations.
std::vector<PromptInstance> load_provo(const std::filesystem::path& path, std::size_t n,
                                       std::uint64_t seed);

/// Model prompt for an instance. Pure: identical instances yield identical bytes.
std::string build_prompt(const PromptInstance& instance,
                         const TemplateRegistry& templates = TemplateRegistry::builtin());

/// Fills prompt_text on every instance.
void attach_prompts(std::span<PromptInstance> instances,
                    const TemplateRegistry& templates = TemplateRegistry::builtin());

/// Whitespace word count.
std::size_t word_count(std::string_view text);

/// Gives each instance the context of another of similar length (word count
/// within 10% of its bucket's shortest member). Ids gain ":corrupt"; references
/// stay those of the original instance.
std::vector<PromptInstance> corrupt_contexts(std::span<const PromptInstance> instances,
                                             std::uint64_t seed,
                                             const TemplateRegistry& templates = TemplateRegistry::builtin());

/// The first complete word of a raw continuation: from the first
/// non-whitespace character up to the next whitespace character.
std::optional<std::string> first_word(std::string_view continuation);

/// Samples a continuation and cuts it at the first word boundary.
Sample sample_next_word(Gateway& gateway, const std::string& prompt, const GenerationParams& params,
                        int ordinal = 0);

enum class FineLabel {
  inability_to_answer,
  wrong,
  match_fully,
  match_partly,
  multiple_plausible,
  all_plausible,
  plausible_not_in_references,
};

FineLabel parse_fine_label(std::string_view label);
std::string to_string(FineLabel label);
bool map_fine_grained_label(FineLabel label);
bool map_fine_grained_label(std::string_view label);

struct ManualAnnotation {
  std::string prompt_id;
  /// nullopt marks the greedy response.
  std::optional<int> sample_index;
  FineLabel fine_label = FineLabel::wrong;
  bool binary_correct = false;
};

void to_json(json& j, const ManualAnnotation& v);
void from_json(const json& j, ManualAnnotation& v);

/// Reads annotation JSONL; rejects rows whose binary label contradicts the
/// fine-grained label.
std::vector<ManualAnnotation> load_annotations(const std::filesystem::path& path);

/// Minimal RFC 4180 reader; `delim` is ',' or '\t'.
std::vector<std::vector<std::string>> parse_delimited(std::string_view text, char delim);

}  // namespace uq::tasks
