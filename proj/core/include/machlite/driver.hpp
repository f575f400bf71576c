#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "machlite/dsl/parser.hpp"
#include "machlite/dsl/typed.hpp"
#include "machlite/irg/irg.hpp"
#include "machlite/lower/vm.hpp"
#include "machlite/mem/memory.hpp"
#include "machlite/ref/interp.hpp"
#include "machlite/sim/machine.hpp"

namespace machlite {

struct CompileOptions {
  std::optional<GridConfig> grid;  // unset: fit the declared LA extents
  std::uint64_t seed = 0;               // host-init generators
  mem::MemConfig mem;
  lower::LowerConfig lower;
};

struct Compiled {
  GridConfig grid;
  irg::IRGraph graph;
  mem::LifespanTable spans;
  mem::MemoryMap map;
  mem::SymbolTable symbols;
  lower::VMachineProgram vm;
};

// Smallest even worker field covering every LA's first two extents (2x2 minimum).
GridConfig fit_grid(const dsl::SourceProgram& p);

// Front end through the memory plan. Throws ProgramError (CapacityError for
// an over-budget plan).
Compiled compile_graph(std::string_view source, const CompileOptions& opt = {});
// compile_graph plus lowering.
Compiled compile(std::string_view source, const CompileOptions& opt = {});

struct RunOutput {
  ref::Store store;
  std::vector<ref::LoopExit> exits;
  std::int64_t cycles = 0;  // simulator cycles; IRG node executions for the reference
  std::optional<sim::Stats> stats;
};

RunOutput run_ref(const Compiled& c);
RunOutput run_sim(const Compiled& c, const sim::SimConfig& cfg = {}, sim::Machine* keep = nullptr);

struct DiffOutcome {
  ref::DiffReport report;
  bool exits_match = true;
  std::vector<ref::LoopExit> ref_exits, sim_exits;
  bool pass() const { return report.pass && exits_match; }
  std::string text() const;
};

DiffOutcome differential(const Compiled& c, double tol = 1e-5, const sim::SimConfig& cfg = {});

}  // namespace machlite
