#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "machlite/dsl/ast.hpp"

namespace machlite::dsl {

struct ParseResult {
  std::optional<SourceProgram> program;
  Diagnostics diagnostics;

  bool ok() const { return program.has_value(); }
};

// Total: returns either a program or at least one diagnostic. Beyond syntax,
// reports duplicate declarations and identifiers used before declaration.
ParseResult parse(std::string_view text);

// Canonical source form. parse(print(p)) is structurally equal to p.
std::string print(const SourceProgram& program);

}  // namespace machlite::dsl
