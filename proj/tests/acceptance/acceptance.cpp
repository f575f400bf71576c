// Runs every acceptance criterion and prints one PASS/FAIL line for each.
// Exit status is nonzero when any criterion fails.

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>

#include "machlite/fuzz.hpp"
#include "test_support.hpp"

using namespace machlite;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  std::vector<std::string> problems;

  void check(bool ok, const std::string& what) {
    if (ok) return;
    pass = false;
    if (problems.size() < 8) problems.push_back(what);
  }
};

CompileOptions on_grid(GridConfig g, std::uint64_t seed = 0) {
  CompileOptions o;
  o.grid = g;
  o.seed = seed;
  return o;
}

const ref::VarValue* find_var(const ref::Store& s, const std::string& name) { return s.find(name); }

// ---------------------------------------------------------------- 1

Outcome oracle_equivalence() {
  Outcome o;
  const fuzz::Options fo;  // grid <= 16x16, <= 40 nodes
  int passed = 0, exits = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    try {
      const auto p = fuzz::generate(seed, fo);
      o.check(p.grid.width <= 16 && p.grid.height <= 16, fmt::format("seed {}: grid over 16x16", seed));
      const auto c = compile(p.source, on_grid(p.grid));
      o.check(test::node_count(c.graph) <= 40, fmt::format("seed {}: over 40 nodes", seed));
      const auto d = differential(c);
      o.check(d.pass(), fmt::format("seed {}: {}", seed, d.text()));
      passed += d.pass();
      exits += static_cast<int>(d.ref_exits.size());
    } catch (const std::exception& e) {
      o.check(false, fmt::format("seed {}: {}", seed, e.what()));
    }
  }
  o.detail = fmt::format("{}/200 programs agree, {} loop exits compared", passed, exits);
  return o;
}

// ---------------------------------------------------------------- 2

// Loop semantics stepped by hand over the frozen init data.
struct SumOracle {
  int exit_at = -1;
};

SumOracle step_running_sum(const std::string& src, std::uint64_t seed) {
  auto p = dsl::parse(src);
  const auto a = dsl::analyze(*p.program, fit_grid(*p.program));
  const auto il = dsl::lower_to_il(*a.program, seed);
  std::vector<Scalar> ga;
  for (const auto& v : il.vars)
    if (v.info.name == "myGA") ga = v.data;
  SumOracle o;
  float sum = 0.0f;
  for (int i = 0; i < static_cast<int>(ga.size()); ++i) {
    sum += ga[static_cast<std::size_t>(i)].as_f32();
    if (sum > 100.0f) {
      o.exit_at = i;
      break;
    }
  }
  return o;
}

Outcome running_sum_end_to_end() {
  Outcome o;
  std::vector<std::string> notes;
  for (const char* name : {"running_sum", "running_sum_exit"}) {
    const std::string src = test::program(name);
    const auto c = compile(src, [] {
      CompileOptions x;
      x.seed = 7;
      return x;
    }());
    const auto ref = run_ref(c);
    const auto sim = run_sim(c);
    const auto oracle = step_running_sum(src, 7);
    o.check(ref.exits == sim.exits, fmt::format("{}: exits differ between backends", name));
    const int ref_at = ref.exits.empty() ? -1 : ref.exits[0].counter;
    const int sim_at = sim.exits.empty() ? -1 : sim.exits[0].counter;
    o.check(ref_at == oracle.exit_at && sim_at == oracle.exit_at,
            fmt::format("{}: exit at ref {} sim {}, expected {}", name, ref_at, sim_at, oracle.exit_at));
    const auto* r = find_var(ref.store, "mySum");
    const auto* s = find_var(sim.store, "mySum");
    double rel = 1.0;
    if (r && s) {
      const double a = r->values[0].as_f32(), b = s->values[0].as_f32();
      rel = std::abs(a - b) / std::max(std::abs(a), 1e-30);
    }
    o.check(rel <= 1e-5, fmt::format("{}: mySum relative error {:.3g}", name, rel));
    const auto d = ref::diff(ref.store, sim.store);
    o.check(d.pass, fmt::format("{}: {}", name, d.text()));
    notes.push_back(fmt::format("{} exit {} (mySum rel {:.2g})",
                                name, oracle.exit_at < 0 ? std::string("none") : std::to_string(oracle.exit_at), rel));
  }
  o.detail = notes[0] + ", " + notes[1];
  return o;
}

// ---------------------------------------------------------------- 3

// Memlocs each node touches, read directly off the node fields.
std::vector<int> touched(const irg::Node& n) {
  std::vector<int> m;
  auto add = [&](int id) {
    if (id >= 0) m.push_back(id);
  };
  add(n.result);
  add(n.dest.mem.dyn_var);
  for (const auto& e : n.in) {
    add(e.memloc);
    add(e.slice.mem.dyn_var);
  }
  for (int k : n.masks) add(k);
  add(n.ga);
  add(n.iter);
  return m;
}

Outcome memory_safety() {
  Outcome o;
  fuzz::Options fo;
  fo.max_nodes = 20;
  int compact = 0, worst_num = 0, worst_den = 1;
  for (int i = 0; i < 500; ++i) {
    const auto p = fuzz::generate(static_cast<std::uint64_t>(10'000 + i), fo);
    const auto c = compile_graph(p.source, on_grid(p.grid));
    const auto& g = c.graph;
    o.check(test::node_count(g) <= 20, fmt::format("graph {}: over 20 nodes", i));

    // Reference intervals: first and last touching node, widened over loops
    // for values flowing into a body.
    std::map<int, std::pair<int, int>> used;
    std::vector<std::pair<int, int>> loops;
    irg::ordered_walk(g, [&](const irg::Node& n, int) {
      for (int m : touched(n)) {
        auto [it, fresh] = used.try_emplace(m, n.id, n.id);
        if (!fresh) {
          it->second.first = std::min(it->second.first, n.id);
          it->second.second = std::max(it->second.second, n.id);
        }
      }
      if (n.op == irg::Op::Loop) loops.push_back(g.subgraph_range(n.id));
    });
    for (const auto& [m, span] : used) {
      const auto* e = c.map.find(m);
      if (!e) {
        o.check(false, fmt::format("graph {}: memloc {} has no storage", i, m));
        continue;
      }
      int need_first = g.mem(m).initialized ? 0 : span.first;
      int need_last = g.mem(m).is_output() ? g.max_id : span.second;
      for (auto [b, end] : loops)
        if (need_first <= b && span.second >= b && span.second <= end) need_last = std::max(need_last, end);
      o.check(e->first <= need_first && e->last >= need_last,
              fmt::format("graph {}: memloc {} live [{}, {}] but used [{}, {}]", i, m, e->first, e->last,
                          need_first, need_last));
    }

    // Brute force over every node time and word.
    for (int sp = 0; sp < 2; ++sp) {
      const auto space = sp == 0 ? Placement::Worker : Placement::Controller;
      int peak = 0;
      for (int t = 0; t <= g.max_id; ++t) {
        std::vector<int> owner(static_cast<std::size_t>(c.map.footprint[static_cast<std::size_t>(sp)]), -1);
        int live = 0;
        for (const auto& e : c.map.entries) {
          if (e.space != space || t < e.first || t > e.last) continue;
          live += e.size_words;
          for (int w = e.offset; w < e.offset + e.size_words; ++w) {
            if (w < 0 || w >= static_cast<int>(owner.size())) {
              o.check(false, fmt::format("graph {}: memloc {} outside the footprint", i, e.memloc));
              continue;
            }
            int& slot = owner[static_cast<std::size_t>(w)];
            o.check(slot < 0, fmt::format("graph {}: memlocs {} and {} share word {} at node {}", i, slot,
                                          e.memloc, w, t));
            slot = e.memloc;
          }
        }
        peak = std::max(peak, live);
      }
      const int fp = c.map.footprint[static_cast<std::size_t>(sp)];
      o.check(peak == c.map.peak_live[static_cast<std::size_t>(sp)],
              fmt::format("graph {}: live peak {} but planner reports {}", i, peak,
                          c.map.peak_live[static_cast<std::size_t>(sp)]));
      o.check(fp <= 2 * peak, fmt::format("graph {}: footprint {} over twice the peak {}", i, fp, peak));
      if (c.map.compact[static_cast<std::size_t>(sp)]) {
        o.check(fp == peak, fmt::format("graph {}: compact plan with footprint {} != peak {}", i, fp, peak));
        compact += sp == 0;
      }
      if (peak > 0 && static_cast<long>(fp) * worst_den > static_cast<long>(worst_num) * peak) {
        worst_num = fp;
        worst_den = peak;
      }
    }
  }
  o.detail = fmt::format("500 graphs, {} worker plans non-fragmenting, worst footprint/peak {:.3f}", compact,
                         static_cast<double>(worst_num) / worst_den);
  return o;
}

// ---------------------------------------------------------------- 4

// `arrays` bank-sized f32 arrays that are all live at the final statement.
std::string capacity_program(int arrays, int bank_words) {
  const int m = bank_words / 2;
  std::string s;
  for (int k = 1; k < arrays; ++k) s += fmt::format("la a{}[2, 2, {}] f32 = {}.0\n", k, m, k);
  s += fmt::format("out la total[2, 2, {}] f32 = zeros\n", m);
  for (int k = 1; k < arrays; ++k) s += fmt::format("total += a{}\n", k);
  return s;
}

Outcome capacity() {
  Outcome o;
  const mem::MemConfig mc;
  const int per_array = mc.bank_words;
  // 8 bank-sized arrays fill the worker memory, so with the mask word pair
  // 8 is already over and 7 leaves room.
  const int fits = mc.worker_capacity / per_array - 1;
  // Over budget: rejected by the planner, so there is never a program to simulate.
  int needed = 0;
  bool threw = false;
  try {
    compile_graph(capacity_program(fits + 2, per_array), on_grid({2, 2}));
  } catch (const mem::CapacityError& e) {
    threw = e.space() == Placement::Worker && e.capacity() == 24576;
    needed = e.needed();
  }
  o.check(threw, "over-budget program did not raise a worker capacity error");
  o.check(needed > 24576, fmt::format("capacity error reports {} words needed", needed));
  bool lowered = false;
  try {
    compile(capacity_program(fits + 2, per_array), on_grid({2, 2}));
    lowered = true;
  } catch (const mem::CapacityError&) {
  }
  o.check(!lowered, "over-budget program reached lowering");
  // Under budget: plans, simulates and matches the reference.
  int accepted = 0;
  try {
    const auto c = compile(capacity_program(fits, per_array), on_grid({2, 2}));
    accepted = c.map.peak_live[0];
    o.check(accepted <= 24576 && accepted >= fits * per_array, fmt::format("control peak {}", accepted));
    o.check(differential(c).pass(), "control program differs between backends");
  } catch (const std::exception& e) {
    o.check(false, std::string("control program: ") + e.what());
  }
  o.detail = fmt::format("{} live words rejected, {} words accepted", needed, accepted);
  return o;
}

// ---------------------------------------------------------------- 5

Outcome control_path() {
  Outcome o;
  int broadcasts = 0;
  struct Variant {
    int latency, hop;
  };
  for (const Variant v : {Variant{10, 1}, Variant{14, 2}}) {
    for (const auto& [name, src] : test::corpus()) {
      sim::SimConfig cfg;
      cfg.control_path_latency = v.latency;
      cfg.hop_latency = v.hop;
      sim::Machine m(compile(src, [] {
                       CompileOptions x;
                       x.seed = 7;
                       return x;
                     }())
                         .vm,
                     cfg);
      m.run();
      std::map<int, std::int64_t> sent, exited;
      for (const auto& e : m.strip_log()) {
        if (e.kind == sim::StripEvent::Kind::Broadcast) sent[e.instance] = e.cycle;
        if (e.kind == sim::StripEvent::Kind::MergeExit && !exited.count(e.instance)) exited[e.instance] = e.cycle;
      }
      for (const auto& [inst, t] : sent) {
        const auto it = exited.find(inst);
        const std::int64_t lat = it == exited.end() ? -1 : it->second - t;
        o.check(lat == v.latency, fmt::format("{} L={} hop={}: broadcast {} first exit after {} cycles", name,
                                              v.latency, v.hop, inst, lat));
        ++broadcasts;
      }
    }
  }
  o.detail = fmt::format("{} broadcasts, first exit exactly L later (L=10 hop 1, L=14 hop 2)", broadcasts);
  return o;
}

// ---------------------------------------------------------------- 6

Outcome drain_order() {
  Outcome o;
  int instances = 0, spliced = 0;
  for (const auto& [name, src] : test::corpus()) {
    const auto c = compile(src, [] {
      CompileOptions x;
      x.seed = 7;
      return x;
    }());
    const auto& vm = c.vm;
    sim::Machine m(vm);
    m.run();
    const auto& l = m.layout();
    // Positions alternate sides of the merge PE and move outward.
    for (int k = 0; k < l.n_resp; ++k) {
      const int dx = l.resp_x(k) - l.merge_x;
      o.check(std::abs(dx) == k / 2 + 1 && (dx < 0) == (k % 2 == 0),
              fmt::format("{}: position {} at x offset {}", name, k, dx));
    }
    // Current args per section; splices persist in response memory.
    std::vector<std::vector<std::uint16_t>> args;
    for (const auto& s : vm.sections) args.push_back(s.args);
    struct Seen {
      int section = -1;
      std::array<std::vector<int>, 2> positions;
      std::array<std::vector<std::uint32_t>, 2> bus, out;
      std::vector<std::uint16_t> expect_args;
    };
    std::map<int, Seen> seen;
    for (const auto& e : m.strip_log()) {
      const int b = e.color == lower::color::ctrl ? 0 : 1;
      switch (e.kind) {
        case sim::StripEvent::Kind::Splice:
          args[static_cast<std::size_t>(e.section)][static_cast<std::size_t>(e.position)] =
              static_cast<std::uint16_t>(e.payload);
          ++spliced;
          break;
        case sim::StripEvent::Kind::Broadcast:
          seen[e.instance].section = e.section;
          seen[e.instance].expect_args = args[static_cast<std::size_t>(e.section)];
          break;
        case sim::StripEvent::Kind::RespToMerge:
          seen[e.instance].positions[static_cast<std::size_t>(b)].push_back(e.position);
          if (!e.marker) seen[e.instance].bus[static_cast<std::size_t>(b)].push_back(e.payload);
          break;
        case sim::StripEvent::Kind::MergeExit:
          seen[e.instance].out[static_cast<std::size_t>(b)].push_back(e.payload);
          break;
      }
    }
    for (const auto& [inst, s] : seen) {
      ++instances;
      const auto& sec = vm.sections.at(static_cast<std::size_t>(s.section));
      for (int b = 0; b < 2; ++b) {
        const auto& pos = s.positions[static_cast<std::size_t>(b)];
        o.check(std::is_sorted(pos.begin(), pos.end()) && !pos.empty() && pos.back() == l.n_resp - 1,
                fmt::format("{}: broadcast {} bus {} drains out of order", name, inst, b));
        o.check(s.bus[static_cast<std::size_t>(b)] == s.out[static_cast<std::size_t>(b)],
                fmt::format("{}: broadcast {} bus {} merge output differs from the drain", name, inst, b));
      }
      const std::vector<std::uint32_t> ctrl(sec.ctrl.begin(), sec.ctrl.end());
      const std::vector<std::uint32_t> want_args(s.expect_args.begin(), s.expect_args.end());
      o.check(s.bus[0] == ctrl, fmt::format("{}: broadcast {} control vector not rebuilt", name, inst));
      o.check(s.bus[1] == want_args, fmt::format("{}: broadcast {} arguments vector not rebuilt", name, inst));
    }
  }
  o.detail = fmt::format("{} broadcasts drained in position order and rebuilt, {} spliced words", instances, spliced);
  return o;
}

// ---------------------------------------------------------------- 7

Outcome back_pressure() {
  Outcome o;
  int runs = 0;
  for (const auto& [name, src] : test::corpus()) {
    const auto c = compile(src, [] {
      CompileOptions x;
      x.seed = 7;
      return x;
    }());
    const auto ref = run_ref(c);
    std::string first;
    for (int depth : {1, 4, 64}) {
      sim::SimConfig cfg;
      cfg.fifo_depth = depth;
      try {
        sim::Machine m(c.vm, cfg);
        m.run();
        const auto st = m.stats();
        const std::string dump = ref::dump(m.store());
        if (first.empty()) first = dump;
        o.check(dump == first, fmt::format("{}: depth {} changes results", name, depth));
        o.check(ref::diff(ref.store, m.store()).pass, fmt::format("{}: depth {} differs from ref", name, depth));
        o.check(m.exits() == ref.exits, fmt::format("{}: depth {} exits differ", name, depth));
        o.check(st.in_flight == 0, fmt::format("{}: depth {} leaves {} wavelets in flight", name, depth, st.in_flight));
        o.check(st.injected + st.copies == st.consumed + st.absorbed,
                fmt::format("{}: depth {} loses wavelets", name, depth));
        ++runs;
      } catch (const ExecutionFault& e) {
        o.check(false, fmt::format("{}: depth {}: {}", name, depth, e.what()));
      }
    }
  }
  o.detail = fmt::format("{} runs at depths 1/4/64 identical, no loss, no deadlock", runs);
  return o;
}

// ---------------------------------------------------------------- 8

Outcome routing() {
  Outcome o;
  const auto c = compile("", on_grid({10, 10}));
  sim::Machine m(c.vm);
  const int W = m.layout().width, H = m.layout().height;
  std::mt19937_64 rng(8);
  int control = 0, rejected = 0;
  for (int i = 0; i < 1000; ++i) {
    const int sx = static_cast<int>(rng() % W), sy = static_cast<int>(rng() % H);
    const int dx = static_cast<int>(rng() % W), dy = static_cast<int>(rng() % H);
    const int len = static_cast<int>(rng() % 48);
    std::vector<std::uint16_t> payload(static_cast<std::size_t>(len));
    for (auto& w : payload) w = static_cast<std::uint16_t>(rng());
    if (len > sim::kMaxLengthField) {
      bool threw = false;
      try {
        m.send_message(sx, sy, dx, dy, payload, sim::Termination::Length);
      } catch (const ExecutionFault&) {
        threw = true;
      }
      o.check(threw, fmt::format("pair {}: {}-word length-terminated message accepted", i, len));
      rejected += threw;
    }
    const int id = m.send_message(sx, sy, dx, dy, payload);
    m.run();
    const auto& r = m.messages().at(static_cast<std::size_t>(id));
    const int manhattan = std::abs(dx - sx) + std::abs(dy - sy);
    o.check(r.hops == manhattan, fmt::format("pair {}: {} hops for distance {}", i, r.hops, manhattan));
    // Expected path: all X steps first, then all Y steps.
    std::vector<std::pair<int, int>> path{{sx, sy}};
    for (int x = sx; x != dx;) path.push_back({x += dx > sx ? 1 : -1, sy});
    for (int y = sy; y != dy;) path.push_back({dx, y += dy > sy ? 1 : -1});
    o.check(r.path == path, fmt::format("pair {}: ({}, {}) -> ({}, {}) not X then Y", i, sx, sy, dx, dy));
    if (dx != sx && dy != sy)
      o.check(r.turn_x == dx && r.turn_y == sy, fmt::format("pair {}: turn at ({}, {})", i, r.turn_x, r.turn_y));
    o.check(r.control_terminated == (len > sim::kMaxLengthField),
            fmt::format("pair {}: {} words with control termination {}", i, len, r.control_terminated));
    control += r.control_terminated;
    const auto in = m.inbox(dx, dy);
    o.check(!in.empty() && in.back() == payload, fmt::format("pair {}: payload not delivered", i));
  }
  o.detail = fmt::format("1000 pairs on a {}x{} grid, {} control-terminated, {} oversize length fields rejected", W,
                         H, control, rejected);
  return o;
}

// ---------------------------------------------------------------- 9

Outcome participation() {
  Outcome o;
  std::mt19937_64 rng(9);
  auto draw = [&](int extent, int& a, int& b, int& s) {
    a = static_cast<int>(rng() % extent);
    b = a + 1 + static_cast<int>(rng() % (extent - a));
    s = 1 + static_cast<int>(rng() % 4);
  };
  int total = 0;
  for (int i = 0; i < 100; ++i) {
    int x0, x1, xs, y0, y1, ys, m0, m1, ms;
    draw(16, x0, x1, xs);
    draw(16, y0, y1, ys);
    draw(6, m0, m1, ms);
    const std::string src = fmt::format(
        "out la A[16, 16, 6] f32 = zeros\nA[{}:{}:{}, {}:{}:{}, {}:{}] += 1.0\n", x0, x1, xs, y0, y1, ys, m0, m1);
    const auto c = compile(src, on_grid({16, 16}));
    sim::Machine m(c.vm);
    m.run();
    // Slice product: every start + k * step below the stop.
    std::set<std::pair<int, int>> want;
    for (int x = x0; x < x1; x += xs)
      for (int y = y0; y < y1; y += ys) want.insert({x, y});
    std::set<std::pair<int, int>> got;
    const auto p = m.participation();
    for (int x = 0; x < 16; ++x)
      for (int y = 0; y < 16; ++y)
        if (p[static_cast<std::size_t>(x * 16 + y)] > 0) got.insert({x, y});
    o.check(got == want, fmt::format("slicing {}: {} PEs ran, {} expected", i, got.size(), want.size()));
    total += static_cast<int>(want.size());
  }
  o.detail = fmt::format("100 slicings on 16x16, {} participating PEs in total", total);
  return o;
}

// ---------------------------------------------------------------- 10

Outcome gather_throughput() {
  Outcome o;
  const sim::SimConfig cfg;
  std::vector<std::string> notes;
  for (int len : {16, 64, 256, 1024}) {
    const std::string src = fmt::format(
        "la s[4, 4, {0}] f32 = random(seed=1)\nla w[4, 4, {0}] f32 = random(seed=2)\n"
        "la ix[4, 4, {0}] i16 = random(seed=3, lo=0, hi={0})\nout la h[4, 4, {0}] f32 = zeros\n"
        "h = take(s, ix) * w\n",
        len);
    const auto c = compile(src, on_grid({4, 4}));
    sim::Machine m(c.vm, cfg);
    m.run();
    const auto st = m.stats();
    const int id = c.vm.rpcs.find("gather_mul_f32");
    if (id < 0) {
      o.check(false, "no fused gather RPC");
      continue;
    }
    const auto& r = st.rpcs[static_cast<std::size_t>(id)];
    o.check(r.invocations == 16, fmt::format("L={}: {} invocations", len, r.invocations));
    o.check(r.max_body == 2 * len && r.body_cycles == 16 * 2 * len,
            fmt::format("L={}: body {} cycles (max {}), expected {} per PE", len, r.body_cycles, r.max_body, 2 * len));
    // Setup is charged without the cycles spent waiting for argument wavelets.
    const std::int64_t occupied = r.max_setup_busy + r.max_body;
    o.check(r.max_setup_busy <= cfg.rpc_setup_cycles,
            fmt::format("L={}: setup {} cycles over {}", len, r.max_setup_busy, cfg.rpc_setup_cycles));
    o.check(std::abs(occupied - 2 * len) <= cfg.rpc_setup_cycles,
            fmt::format("L={}: occupied {} cycles, outside 2L +- {}", len, occupied, cfg.rpc_setup_cycles));
    const auto d = ref::diff(run_ref(c).store, m.store());
    o.check(d.pass, fmt::format("L={}: {}", len, d.text()));
    notes.push_back(fmt::format("L={} body {} setup {} (+{} waiting)", len, r.max_body, r.max_setup_busy,
                                r.max_setup - r.max_setup_busy));
  }
  o.detail.clear();
  for (const auto& n : notes) o.detail += (o.detail.empty() ? "" : ", ") + n;
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> all{
      {1, "oracle equivalence", oracle_equivalence},
      {2, "running sum end to end", running_sum_end_to_end},
      {3, "memory safety and peak", memory_safety},
      {4, "capacity", capacity},
      {5, "control path latency", control_path},
      {6, "drain order", drain_order},
      {7, "back pressure", back_pressure},
      {8, "routing", routing},
      {9, "participation", participation},
      {10, "gather throughput", gather_throughput},
  };
  int failed = 0;
  for (const auto& c : all) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.problems.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << fmt::format("criterion {:2} {:<24} {}  {} ({:.1f}s)\n", c.id, c.name, o.pass ? "PASS" : "FAIL",
                             o.detail, secs);
    for (const auto& p : o.problems) std::cout << "    " << p << "\n";
    std::cout.flush();
    failed += !o.pass;
  }
  std::cout << fmt::format("{} of {} criteria passed\n", static_cast<int>(all.size()) - failed, all.size());
  return failed == 0 ? 0 : 1;
}
