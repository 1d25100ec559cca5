#include "uq/templates.hpp"

#include <algorithm>

#include "builtin_templates.hpp"
#include "uq/core.hpp"
#include "uq/hash.hpp"

namespace uq {

namespace {

bool is_name_char(char c) { return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_'; }

// Length of a placeholder starting at s[i] == '<', or 0.
std::size_t placeholder_len(std::string_view s, std::size_t i) {
  if (i + 2 >= s.size() || s[i] != '<' || !(s[i + 1] >= 'A' && s[i + 1] <= 'Z')) return 0;
  std::size_t j = i + 1;
  while (j < s.size() && is_name_char(s[j])) ++j;
  return (j < s.size() && s[j] == '>') ? j - i + 1 : 0;
}

}  // namespace

const TemplateRegistry& TemplateRegistry::builtin() {
  static const TemplateRegistry registry = [] {
    TemplateRegistry r;
    for (const auto& t : builtin_templates()) r.add(t.id, std::string(t.text));
    return r;
  }();
  return registry;
}

TemplateRegistry TemplateRegistry::with_overrides(const std::filesystem::path& dir) {
  TemplateRegistry r = builtin();
  if (!std::filesystem::is_directory(dir)) throw Error("template directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) r.add(f.stem().string(), read_text(f));
  return r;
}

void TemplateRegistry::add(std::string id, std::string text) {
  std::string checksum = sha256_hex(text);
  PromptTemplate t{id, std::move(text), std::move(checksum)};
  templates_.insert_or_assign(std::move(id), std::move(t));
}

const PromptTemplate& TemplateRegistry::get(std::string_view id) const {
  auto it = templates_.find(id);
  if (it == templates_.end()) throw Error("unknown template id '" + std::string(id) + "'");
  return it->second;
}

bool TemplateRegistry::contains(std::string_view id) const { return templates_.find(id) != templates_.end(); }

std::vector<std::string> TemplateRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : templates_) out.push_back(id);
  return out;
}

std::map<std::string, std::string> TemplateRegistry::checksums() const {
  std::map<std::string, std::string> out;
  for (const auto& [id, t] : templates_) out[id] = t.checksum;
  return out;
}

std::string render(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (std::size_t len = placeholder_len(tmpl, i)) {
      std::string name(tmpl.substr(i + 1, len - 2));
      auto it = values.find(name);
      if (it == values.end()) throw Error("template placeholder <" + name + "> has no value");
      out += it->second;
      i += len;
    } else {
      out.push_back(tmpl[i++]);
    }
  }
  return out;
}

std::vector<std::string> placeholders(std::string_view tmpl) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (std::size_t len = placeholder_len(tmpl, i)) {
      std::string name(tmpl.substr(i + 1, len - 2));
      if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
      i += len - 1;
    }
  }
  return out;
}

}  // namespace uq
