#include <CLI11.hpp>
#include <fmt/format.h>
#include <unistd.h>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include "machlite/driver.hpp"
#include "machlite/fuzz.hpp"

using namespace machlite;

namespace {

bool use_color() {
  if (const char* c = std::getenv("MACHLITE_COLOR")) {
    const std::string v = c;
    if (v == "0" || v == "never" || v == "off" || v == "no") return false;
    if (v == "1" || v == "always" || v == "on" || v == "yes") return true;
  }
  return isatty(fileno(stderr)) != 0;
}

std::string paint(const std::string& s, const char* code) {
  static const bool on = use_color();
  return on ? fmt::format("\x1b[{}m{}\x1b[0m", code, s) : s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ProgramError(fmt::format("cannot read '{}'", path));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

GridConfig parse_grid(const std::string& s) {
  int w = 0, h = 0;
  char x = 0;
  std::istringstream in(s);
  if (!(in >> w >> x >> h) || (x != 'x' && x != 'X') || !in.eof())
    throw ProgramError(fmt::format("--grid expects WxH, got '{}'", s));
  return {w, h};
}

struct Common {
  std::string file;
  std::string grid;
  std::uint64_t seed = 0;
  int n_resp = 4;
  int resp_capacity = 3000;
  sim::SimConfig sim;
};

void add_compile_flags(CLI::App* app, Common& c) {
  app->add_option("--grid", c.grid, "worker field WxH (default: fit the declared arrays)");
  app->add_option("--seed", c.seed, "seed for host-init random data")->default_val(0);
  app->add_option("--resp", c.n_resp, "response PEs (even, >= 2)")->default_val(4);
  app->add_option("--resp-capacity", c.resp_capacity, "words per response PE")->default_val(3000);
}

void add_sim_flags(CLI::App* app, Common& c) {
  app->add_option("--fifo-depth", c.sim.fifo_depth, "router input FIFO depth")->default_val(4);
  app->add_option("--hop-latency", c.sim.hop_latency, "cycles per hop (1 or 2)")->default_val(1);
  app->add_option("--control-latency", c.sim.control_path_latency, "broadcast to first merge exit")
      ->default_val(10);
  app->add_option("--setup-cycles", c.sim.rpc_setup_cycles, "RPC setup cost")->default_val(55);
  app->add_option("--deadlock-window", c.sim.deadlock_window, "cycles without progress before a fault")
      ->default_val(10000);
}

Compiled build(const Common& c, bool lower = true) {
  CompileOptions o;
  if (!c.grid.empty()) o.grid = parse_grid(c.grid);
  o.seed = c.seed;
  o.lower.n_resp = c.n_resp;
  o.lower.resp_capacity = c.resp_capacity;
  const std::string src = read_file(c.file);
  return lower ? compile(src, o) : compile_graph(src, o);
}

std::string outputs_only(const ref::Store& s) {
  ref::Store o;
  for (const auto& v : s.vars)
    if (v.output) o.vars.push_back(v);
  return ref::dump(o);
}

int do_compile(const Common& c, const std::string& emit) {
  const Compiled k = build(c, emit != "irg" && emit != "mem");
  if (emit == "irg") {
    std::cout << irg::to_json(k.graph) << "\n";
  } else if (emit == "mem") {
    std::cout << mem::format_table(k.graph, k.map);
  } else if (emit == "asm") {
    std::cout << lower::emit_asm(lower::emit_text(k.vm));
  } else if (emit == "paint") {
    std::cout << lower::emit_paint(lower::emit_text(k.vm));
  } else {
    const auto& l = k.vm.layout;
    std::cout << fmt::format("field {}x{} on a {}x{} grid, {} sections, {} rpcs, {} exec instructions\n",
                             k.grid.width, k.grid.height, l.width, l.height, k.vm.sections.size(),
                             k.vm.rpcs.rpcs.size(), k.vm.exec.size());
    std::cout << fmt::format("worker footprint {} words, controller footprint {} words\n", k.vm.footprint[0],
                             k.vm.footprint[1]);
  }
  return 0;
}

int do_run(const Common& c, const std::string& backend, const std::string& trace, bool stats) {
  const Compiled k = build(c);
  if (backend == "ref") {
    const auto r = run_ref(k);
    std::cout << outputs_only(r.store);
    for (const auto& e : r.exits) std::cout << fmt::format("exit loop {} at {}\n", e.loop, e.counter);
    if (stats) std::cerr << "ref backend: no cycle statistics\n";
    if (!trace.empty()) std::cerr << "ref backend: no trace\n";
    return 0;
  }
  sim::SimConfig cfg = c.sim;
  cfg.trace = !trace.empty();
  sim::Machine m(k.vm, cfg);
  std::optional<ExecutionFault> fault;
  try {
    m.run();
  } catch (const ExecutionFault& e) {
    fault = e;
  }
  if (!trace.empty()) {
    std::ofstream out(trace);
    if (!out) throw ProgramError(fmt::format("cannot write '{}'", trace));
    out << "cycle\tsrc\tdst\tcolor\tevent\tkind\tpayload\n";
    for (const auto& e : m.trace()) out << sim::format_event(e) << '\n';
  }
  if (fault) throw *fault;
  std::cout << ref::dump(m.store());
  for (const auto& e : m.exits()) std::cout << fmt::format("exit loop {} at {}\n", e.loop, e.counter);
  if (stats) std::cout << m.stats().text();
  return 0;
}

int do_diff(const Common& c, double tol) {
  const Compiled k = build(c);
  const DiffOutcome d = differential(k, tol, c.sim);
  std::string text = d.text();
  std::cout << text;
  std::cerr << (d.pass() ? paint("pass", "32") : paint("FAIL", "31")) << '\n';
  return d.pass() ? 0 : 1;
}

int do_fuzz(int programs, int max_nodes, std::uint64_t seed, int jobs, const Common& c, bool verbose) {
  fuzz::Options fo;
  fo.max_nodes = max_nodes;
  std::atomic<int> next{0}, failed{0}, internal{0};
  std::mutex io;
  auto worker = [&] {
    for (int i = next++; i < programs; i = next++) {
      const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
      std::string report;
      bool ok = false, bug = false;
      try {
        const fuzz::Program p = fuzz::generate(s, fo);
        CompileOptions o;
        o.grid = p.grid;
        const DiffOutcome d = differential(compile(p.source, o), 1e-5, c.sim);
        ok = d.pass();
        if (!ok) report = p.source + d.text();
      } catch (const InternalError& e) {
        bug = true;
        report = e.what();
      } catch (const std::exception& e) {
        report = e.what();
      }
      std::lock_guard lock(io);
      if (!ok) {
        ++failed;
        if (bug) ++internal;
        std::cout << fmt::format("seed {}: {}\n{}\n", s, paint("FAIL", "31"), report);
      } else if (verbose) {
        std::cout << fmt::format("seed {}: ok\n", s);
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 0; j < std::max(1, jobs); ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  std::cout << fmt::format("{} programs, {} failed\n", programs, failed.load());
  if (internal > 0) return 2;
  return failed > 0 ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"machlite: tensor DSL compiler and spatial grid simulator"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "machlite 0.1.0");

  Common c;
  std::string emit, backend = "sim", trace;
  bool stats = false, verbose = false;
  double tol = 1e-5;
  int programs = 200, max_nodes = 40, jobs = 1;

  auto* compile_cmd = app.add_subcommand("compile", "compile a program and print an artifact");
  compile_cmd->add_option("file", c.file, "source file")->required();
  add_compile_flags(compile_cmd, c);
  compile_cmd->add_option("--emit", emit, "artifact to print")
      ->check(CLI::IsMember({"irg", "mem", "asm", "paint"}));

  auto* run_cmd = app.add_subcommand("run", "run a program and print its outputs");
  run_cmd->add_option("file", c.file, "source file")->required();
  add_compile_flags(run_cmd, c);
  add_sim_flags(run_cmd, c);
  run_cmd->add_option("--backend", backend, "sim or ref")->check(CLI::IsMember({"sim", "ref"}))->default_val("sim");
  run_cmd->add_option("--trace", trace, "write a wavelet trace (sim)");
  run_cmd->add_flag("--stats", stats, "print cycle statistics (sim)");

  auto* diff_cmd = app.add_subcommand("diff", "run both backends and compare outputs");
  diff_cmd->add_option("file", c.file, "source file")->required();
  add_compile_flags(diff_cmd, c);
  add_sim_flags(diff_cmd, c);
  diff_cmd->add_option("--tol", tol, "relative tolerance for reduction-derived f32 values")->default_val(1e-5);

  auto* fuzz_cmd = app.add_subcommand("fuzz", "differential test on generated programs");
  fuzz_cmd->add_option("--programs", programs, "number of programs")->default_val(200);
  fuzz_cmd->add_option("--max-nodes", max_nodes, "IR node budget per program")->default_val(40);
  fuzz_cmd->add_option("--seed", c.seed, "first seed")->default_val(0);
  fuzz_cmd->add_option("--jobs,-j", jobs, "worker threads")->default_val(1);
  fuzz_cmd->add_flag("--verbose,-v", verbose, "report every seed");
  add_sim_flags(fuzz_cmd, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*compile_cmd) return do_compile(c, emit);
    if (*run_cmd) return do_run(c, backend, trace, stats);
    if (*diff_cmd) return do_diff(c, tol);
    if (*fuzz_cmd) return do_fuzz(programs, max_nodes, c.seed, jobs, c, verbose);
  } catch (const mem::CapacityError& e) {
    std::cerr << c.file << ": " << paint("capacity error", "31") << ": " << e.what() << '\n';
    return 1;
  } catch (const ProgramError& e) {
    for (const auto& d : e.diagnostics())
      std::cerr << (c.file.empty() ? "" : c.file + ":") << d.loc.line << ':' << d.loc.column << ": "
                << paint("error", "31") << ": " << d.message << '\n';
    return 1;
  } catch (const ExecutionFault& e) {
    std::cerr << paint("fault", "31") << ": " << e.what() << '\n';
    return 1;
  } catch (const InternalError& e) {
    std::cerr << paint("internal error", "35") << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << paint("internal error", "35") << ": " << e.what() << '\n';
    return 2;
  }
  return 0;
}
