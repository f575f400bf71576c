#include "machlite/driver.hpp"

#include <fmt/format.h>

namespace machlite {

GridConfig fit_grid(const dsl::SourceProgram& p) {
  int w = 2, h = 2;
  for (const auto& d : p.declarations)
    if (d.kind == OodsKind::LA && d.shape.size() >= 2) {
      w = std::max<int>(w, static_cast<int>(d.shape[0]));
      h = std::max<int>(h, static_cast<int>(d.shape[1]));
    }
  return {w + (w & 1), h + (h & 1)};
}

Compiled compile_graph(std::string_view source, const CompileOptions& opt) {
  auto parsed = dsl::parse(source);
  if (!parsed.ok()) throw ProgramError(parsed.diagnostics);
  Compiled c;
  c.grid = opt.grid ? *opt.grid : fit_grid(*parsed.program);
  auto typed = dsl::analyze(*parsed.program, c.grid);
  if (!typed.ok()) throw ProgramError(typed.diagnostics);
  c.graph = irg::build(dsl::lower_to_il(*typed.program, opt.seed));
  if (auto d = irg::validate(c.graph); !d.empty())
    throw InternalError("graph validation failed: " + format_diagnostics(d));
  c.spans = mem::compute_lifespans(c.graph);
  if (!c.spans.diagnostics.empty()) throw ProgramError(c.spans.diagnostics);
  c.map = mem::plan(c.graph, c.spans, opt.mem);
  c.symbols = mem::assign_addresses(c.map, opt.mem.worker_base, opt.mem.controller_base);
  return c;
}

Compiled compile(std::string_view source, const CompileOptions& opt) {
  Compiled c = compile_graph(source, opt);
  c.vm = lower::lower(c.graph, c.map, c.symbols, opt.lower);
  return c;
}

RunOutput run_ref(const Compiled& c) {
  auto r = ref::interpret(c.graph);
  return {std::move(r.store), std::move(r.exits), r.nodes_executed, std::nullopt};
}

RunOutput run_sim(const Compiled& c, const sim::SimConfig& cfg, sim::Machine* keep) {
  sim::Machine m(c.vm, cfg);
  const auto r = m.run();
  RunOutput out{m.store(), r.exits, r.cycles, m.stats()};
  if (keep) *keep = std::move(m);
  return out;
}

std::string DiffOutcome::text() const {
  std::string out;
  if (!exits_match) {
    auto list = [](const std::vector<ref::LoopExit>& v) {
      std::string s;
      for (const auto& e : v) s += fmt::format(" loop {} at {}", e.loop, e.counter);
      return s.empty() ? std::string(" none") : s;
    };
    out += fmt::format("loop exits differ: ref{} / sim{}\n", list(ref_exits), list(sim_exits));
  }
  return out + report.text();
}

DiffOutcome differential(const Compiled& c, double tol, const sim::SimConfig& cfg) {
  DiffOutcome d;
  auto r = run_ref(c);
  auto s = run_sim(c, cfg);
  d.report = ref::diff(r.store, s.store, tol);
  d.ref_exits = r.exits;
  d.sim_exits = s.exits;
  d.exits_match = r.exits == s.exits;
  return d;
}

}  // namespace machlite
