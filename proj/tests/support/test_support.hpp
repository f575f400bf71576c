#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "machlite/driver.hpp"

namespace machlite::test {

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::filesystem::path programs_dir() { return MACHLITE_PROGRAMS_DIR; }

inline std::string program(const std::string& name) { return read_text(programs_dir() / (name + ".mach")); }

// Every bundled program, sorted by name.
inline std::vector<std::pair<std::string, std::string>> corpus() {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : std::filesystem::directory_iterator(programs_dir()))
    if (e.path().extension() == ".mach") out.emplace_back(e.path().stem().string(), read_text(e.path()));
  std::sort(out.begin(), out.end());
  return out;
}

inline Compiled build(const std::string& src, std::optional<GridConfig> grid = std::nullopt, std::uint64_t seed = 0) {
  CompileOptions o;
  o.grid = grid;
  o.seed = seed;
  return compile(src, o);
}

inline int node_count(const irg::IRGraph& g) {
  int n = 0;
  irg::ordered_walk(g, [&](const irg::Node&, int) { ++n; });
  return n;
}

inline const ref::VarValue& var(const ref::Store& s, const std::string& name) {
  const auto* v = s.find(name);
  if (!v) throw std::runtime_error("no variable " + name);
  return *v;
}

}  // namespace machlite::test
