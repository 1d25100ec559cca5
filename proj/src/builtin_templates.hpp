#pragma once

#include <span>
#include <string_view>

namespace uq {

struct BuiltinTemplate {
  const char* id;
  std::string_view text;
};

std::span<const BuiltinTemplate> builtin_templates();

}  // namespace uq
