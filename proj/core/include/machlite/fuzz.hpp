#pragma once

#include <cstdint>
#include <string>

#include "machlite/dsl/typed.hpp"

namespace machlite::fuzz {

struct Options {
  int max_nodes = 40;  // IR nodes, counted over all subgraphs
  int max_grid = 16;   // worker field extent on each axis
  int max_mem = 32;    // memory axis extent
  int max_statements = 14;
};

struct Program {
  std::uint64_t seed = 0;
  std::string source;
  GridConfig grid;
  int nodes = 0;
};

// Deterministic random program drawn from the legal statement forms. The
// result always compiles; exits compare only untainted controller values.
Program generate(std::uint64_t seed, const Options& opt = {});

}  // namespace machlite::fuzz
