#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace uq {

struct PromptTemplate {
  std::string id;
  std::string text;
  std::string checksum;  // sha256 of text
};

/// Prompt resources keyed by template id. The built-in set is compiled in from
/// templates/<id>.txt; a directory of overrides may replace or extend it.
class TemplateRegistry {
 public:
  static const TemplateRegistry& builtin();
  /// Built-ins overlaid with every <id>.txt found in `dir`.
  static TemplateRegistry with_overrides(const std::filesystem::path& dir);

  const PromptTemplate& get(std::string_view id) const;
  bool contains(std::string_view id) const;
  std::vector<std::string> ids() const;
  std::map<std::string, std::string> checksums() const;

  void add(std::string id, std::string text);

 private:
  std::map<std::string, PromptTemplate, std::less<>> templates_;
};

/// Substitutes every <NAME> placeholder (uppercase, digits, underscore) in one
/// pass. Substituted values are not rescanned. Throws when a placeholder has no
/// value.
std::string render(std::string_view tmpl, const std::map<std::string, std::string>& values);

/// Placeholder names appearing in a template, in order of first appearance.
std::vector<std::string> placeholders(std::string_view tmpl);

}  // namespace uq
