#include <gtest/gtest.h>

#include <random>
#include <set>

#include "machlite/fuzz.hpp"
#include "test_support.hpp"

using namespace machlite;
using test::build;

namespace {

const std::string kFive =
    "la A[4, 4, 4] f32 = random(seed=1)\nla B[4, 4, 4] f32 = random(seed=2)\n"
    "out la E[4, 4, 4] f32 = zeros\ngs s f32 = 2.0\n";

std::string five_ops(bool gs_in_third) {
  return kFive + "E = A + B\nE = E * A\n" + (gs_in_third ? "E = E + s\n" : "E = E - B\n") +
         "E = E * 3.0\nE = E + A\n";
}

// Counts maximal runs of worker nodes with no boundary between them. A node
// taking a controller value stands alone.
int boundary_oracle(const irg::IRGraph& g) {
  int sections = 0;
  bool open = false;
  for (const auto& n : g.root.nodes) {
    bool ctrl_arg = false;
    for (const auto& e : n.in)
      if (!e.literal() && g.mem(e.memloc).placement == Placement::Controller) ctrl_arg = true;
    if (ctrl_arg) {
      ++sections;
      open = false;
    } else if (!open) {
      ++sections;
      open = true;
    }
  }
  return sections;
}

}  // namespace

TEST(Partition, ListingOneHasLoopAndReduceSections) {
  const auto c = build(test::program("running_sum"));
  ASSERT_EQ(c.vm.sections.size(), 2u);
  const auto& rp = c.vm.rpcs.rpcs;
  ASSERT_EQ(c.vm.sections[0].ctrl.size(), 1u);
  EXPECT_EQ(rp[static_cast<std::size_t>(c.vm.sections[0].ctrl[0])].name, "ar_ar_add_f32");
  std::vector<std::string> tail;
  for (int id : c.vm.sections[1].ctrl) tail.push_back(rp[static_cast<std::size_t>(id)].name);
  EXPECT_EQ(tail, (std::vector<std::string>{"ar_reduce_sum_f32", "special_reduce_broadcast_f32"}));
  // The running sum stays on the executive.
  int gs_ops = 0;
  for (const auto& i : c.vm.exec) gs_ops += i.op == lower::ExecOp::GsOp;
  EXPECT_EQ(gs_ops, 1);
}

TEST(Partition, StraightLineIsOneSection) {
  const auto c = build(five_ops(false), GridConfig{4, 4});
  ASSERT_EQ(c.vm.sections.size(), 1u);
  EXPECT_EQ(c.vm.sections[0].ctrl.size(), 5u);
  EXPECT_TRUE(c.vm.sections[0].splices.empty());
}

TEST(Partition, ControllerArgumentSplitsSections) {
  const auto c = build(five_ops(true), GridConfig{4, 4});
  EXPECT_EQ(static_cast<int>(c.vm.sections.size()), boundary_oracle(c.graph));
  ASSERT_EQ(c.vm.sections.size(), 3u);
  EXPECT_EQ(c.vm.sections[0].ctrl.size(), 2u);
  EXPECT_EQ(c.vm.sections[1].ctrl.size(), 1u);
  EXPECT_EQ(c.vm.sections[2].ctrl.size(), 2u);
  EXPECT_EQ(c.vm.sections[1].splices.size(), 2u);  // both halves of the f32
}

TEST(Partition, SectionArgsMatchRpcArity) {
  for (const auto& [name, src] : test::corpus()) {
    const auto c = build(src);
    for (const auto& s : c.vm.sections) {
      std::size_t arity = 0;
      for (int id : s.ctrl) arity += static_cast<std::size_t>(c.vm.rpcs.rpcs[static_cast<std::size_t>(id)].arity);
      EXPECT_EQ(s.args.size(), arity) << name << " section " << s.index;
      for (const auto& sp : s.splices) EXPECT_LT(sp.position, static_cast<int>(s.args.size()));
    }
  }
}

TEST(Distribute, EvenAndUnevenSplits) {
  EXPECT_EQ(lower::split_range(6, 2, 0), std::make_pair(0, 3));
  EXPECT_EQ(lower::split_range(6, 2, 1), std::make_pair(3, 6));
  const auto a = lower::split_range(5, 2, 0);
  const auto b = lower::split_range(5, 2, 1);
  EXPECT_EQ(a.second - a.first, 3);
  EXPECT_EQ(b.second - b.first, 2);
}

TEST(Distribute, SplitPropertiesHoldExhaustively) {
  for (int n = 0; n <= 40; ++n)
    for (int parts = 1; parts <= 8; ++parts) {
      int next = 0, lo = n, hi = 0;
      for (int k = 0; k < parts; ++k) {
        const auto [b, e] = lower::split_range(n, parts, k);
        EXPECT_EQ(b, next);
        next = e;
        lo = std::min(lo, e - b);
        hi = std::max(hi, e - b);
        if (k > 0) {
          const auto [pb, pe] = lower::split_range(n, parts, k - 1);
          EXPECT_GE(pe - pb, e - b);  // inner positions never hold less
        }
      }
      EXPECT_EQ(next, n);
      EXPECT_LE(hi - lo, 1);
    }
}

TEST(Distribute, DrainOrderConcatenationRebuildsVectors) {
  lower::Section s;
  s.ctrl = {0, 1, 2};
  for (int i = 0; i < 8; ++i) s.args.push_back(static_cast<std::uint16_t>(100 + i));
  const auto resp = lower::distribute({s}, 4);
  ASSERT_EQ(resp.size(), 4u);
  std::vector<std::uint16_t> args;
  std::vector<int> ctrl;
  for (const auto& r : resp) {
    const auto& ch = r.chunks.at(0);
    for (int k = ch.args_begin; k < ch.args_end; ++k) args.push_back(s.args[static_cast<std::size_t>(k)]);
    for (int k = ch.ctrl_begin; k < ch.ctrl_end; ++k) ctrl.push_back(s.ctrl[static_cast<std::size_t>(k)]);
    EXPECT_EQ(ch.args_end - ch.args_begin, 2);
  }
  EXPECT_EQ(args, s.args);
  EXPECT_EQ(ctrl, s.ctrl);
}

TEST(Masks, SliceProductCount) {
  const auto c = build(
      "la A[10, 10, 10] f32 = zeros\nA[1:4, 3:5, 1:2] += A[1:4, 3:5, 8:9]\nA += 1.0\n");
  int sliced = 0, full = 0;
  for (const auto& m : c.vm.masks) {
    int ones = 0;
    for (auto b : m.bits) ones += b;
    if (ones == 6) {
      ++sliced;
      for (int x = 0; x < 10; ++x)
        for (int y = 0; y < 10; ++y)
          EXPECT_EQ(m.bits[static_cast<std::size_t>(x * 10 + y)], x >= 1 && x < 4 && y >= 3 && y < 5);
    }
    full += ones == 100;
  }
  EXPECT_EQ(sliced, 1);
  EXPECT_EQ(full, 1);
}

TEST(Masks, IdenticalSlicingsShareOneEntry) {
  const auto c = build(
      "la A[8, 8, 2] f32 = zeros\nA[0:8:2, 1:7, :] += 1.0\nA[0:8:2, 1:7, :] *= 3.0\nA += 2.0\nA -= 1.0\n",
      GridConfig{8, 8});
  EXPECT_EQ(c.vm.masks.size(), 2u);
  std::set<int> mask_refs;
  for (const auto& n : c.graph.root.nodes)
    for (int m : n.masks) mask_refs.insert(m);
  EXPECT_EQ(mask_refs.size(), 2u);
}

TEST(Rpc, ElementwiseAddSignature) {
  const auto c = build(test::program("running_sum"));
  const int id = c.vm.rpcs.find("ar_ar_add_f32");
  ASSERT_GE(id, 0);
  EXPECT_EQ(c.vm.rpcs.rpcs[static_cast<std::size_t>(id)].arity, 5);
  const int red = c.vm.rpcs.find("ar_reduce_sum_f32");
  const int bc = c.vm.rpcs.find("special_reduce_broadcast_f32");
  ASSERT_GE(red, 0);
  ASSERT_GE(bc, 0);
  EXPECT_NE(red, bc);
}

TEST(Rpc, NamesRoundTrip) {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto p = fuzz::generate(s);
    CompileOptions o;
    o.grid = p.grid;
    for (const auto& r : compile(p.source, o).vm.rpcs.rpcs) {
      const auto back = lower::rpc_from_name(r.name);
      ASSERT_TRUE(back.has_value()) << r.name;
      EXPECT_EQ(lower::rpc_name(*back), r.name);
      EXPECT_EQ(back->kernel, r.kernel);
    }
  }
}

TEST(Rpc, EveryRpcHasAReductionRowBody) {
  const auto c = build("la A[4, 4, 2] f32 = zeros\nA += 1.0\nA = A + A\n", GridConfig{4, 4});
  const auto l = lower::emit_text(c.vm);
  const auto& red = l.at("reduction.tsl");
  for (const auto& r : c.vm.rpcs.rpcs) EXPECT_NE(red.find("rpc " + r.name + "("), std::string::npos) << r.name;
}

TEST(Rpc, OverflowingTaskTableUsesVirtualTasks) {
  std::string src = "la A[4, 4, 2] f32 = random(seed=1)\nla I[4, 4, 2] i16 = random(seed=2, lo=0, hi=2)\n";
  const char* ops[] = {"+", "-", "*"};
  for (const char* op : ops) src += std::string("A = A ") + op + " A\nA = A " + op + " 2.0\nA = 2.0 " + op + " A\n";
  src += "I = I + I\nI = I - 1\nI = I * I\nI = 1 - I\nA = take(A, I)\nA = take(A, I) * A\nput(A, I, A)\n";
  src += "put_add(A, I, A)\nshift(A, A, col, +1)\nshift(A, A, row, -1)\n";
  CompileOptions o;
  o.grid = GridConfig{4, 4};
  const auto c = compile(src, o);
  const auto& t = c.vm.rpcs;
  ASSERT_GT(t.rpcs.size(), 16u);
  ASSERT_EQ(t.virtual_tasks.size(), t.rpcs.size());
  std::set<std::pair<int, int>> slots;
  for (const auto& v : t.virtual_tasks) {
    EXPECT_GE(v.hw_task, 0);
    EXPECT_LT(v.hw_task, 16);
    EXPECT_TRUE(slots.insert({v.hw_task, v.context}).second);
  }
  EXPECT_TRUE(differential(c).pass());
}

TEST(Emit, ListingOneExecutive) {
  const auto c = build(test::program("running_sum"));
  const auto l = lower::emit_text(c.vm);
  const auto& ex = l.at("exec.tsl");
  EXPECT_NE(ex.find("< 10"), std::string::npos);
  int broadcasts = 0;
  for (const auto& i : c.vm.exec) {
    broadcasts += i.op == lower::ExecOp::Broadcast;
    if (i.op == lower::ExecOp::IterTest) EXPECT_EQ(i.a, 10);
  }
  EXPECT_EQ(broadcasts, 2);
  std::size_t n = 0;
  for (auto p = ex.find(".i broadcast"); p != std::string::npos; p = ex.find(".i broadcast", p + 1)) ++n;
  EXPECT_EQ(n, 2u);
}

TEST(Emit, EmptyProgramPaintsOnly) {
  const auto c = build("");
  EXPECT_TRUE(c.vm.sections.empty());
  const auto l = lower::emit_text(c.vm);
  ASSERT_EQ(l.size(), 1u);
  EXPECT_EQ(l.begin()->first, "layout.paint");
  EXPECT_EQ(lower::load_text(l), c.vm);
}

TEST(Emit, DeterministicAndReloadable) {
  std::vector<std::string> sources;
  for (const auto& [name, src] : test::corpus()) sources.push_back(src);
  for (std::uint64_t s = 100; s < 130; ++s) sources.push_back(fuzz::generate(s).source);
  for (const auto& src : sources) {
    const auto a = compile(src);
    const auto b = compile(src);
    EXPECT_EQ(lower::emit_text(a.vm), lower::emit_text(b.vm));
    EXPECT_EQ(lower::load_text(lower::emit_text(a.vm)), a.vm);
  }
}

TEST(Emit, MalformedListingIsRejected) {
  auto l = lower::emit_text(build(test::program("running_sum")).vm);
  l["worker.tsl"] += ".rpc id=0 name=no_such_kernel\n";
  EXPECT_THROW(lower::load_text(l), ProgramError);
}

TEST(Layout, TenByTenField) {
  const auto l = lower::make_layout(10, 10, 4);
  EXPECT_EQ(l.width, 14);
  EXPECT_EQ(l.height, 13);
  std::map<lower::Role, int> count;
  for (auto r : l.roles) ++count[r];
  EXPECT_EQ(count[lower::Role::Worker], 100);
  EXPECT_EQ(count[lower::Role::Reduction], 2 * 10);
  EXPECT_EQ(count[lower::Role::Executive], 1);
  EXPECT_EQ(count[lower::Role::Merge], 1);
  EXPECT_EQ(count[lower::Role::Response] + count[lower::Role::Reserve], l.n_resp);
  EXPECT_GE(l.n_resp, 4);
  int assigned = 0;
  for (auto r : l.roles) assigned += r != lower::Role::Idle;
  EXPECT_GT(assigned, 0);
  // Worker rows split around the reduction and control rows.
  for (int fy = 0; fy < 10; ++fy)
    for (int fx = 0; fx < 10; ++fx) EXPECT_EQ(l.role(l.grid_x(fx), l.grid_y(fy)), lower::Role::Worker);
}

TEST(Layout, CheckerboardPhases) {
  const auto l = lower::make_layout(6, 4, 4);
  for (int fy = 0; fy < 4; ++fy)
    for (int fx = 0; fx < 6; ++fx) {
      const auto ph = l.phase[static_cast<std::size_t>(l.index(l.grid_x(fx), l.grid_y(fy)))];
      EXPECT_EQ(ph, (fx + fy) % 2);
    }
}

TEST(Layout, ResponsePositionsOscillateOutward) {
  const auto l = lower::make_layout(10, 10, 6);
  std::vector<int> xs;
  for (int k = 0; k < 6; ++k) xs.push_back(l.resp_x(k));
  EXPECT_EQ(xs, (std::vector<int>{l.merge_x - 1, l.merge_x + 1, l.merge_x - 2, l.merge_x + 2, l.merge_x - 3,
                                  l.merge_x + 3}));
}

TEST(Layout, EmptyOrOddFieldRejected) {
  EXPECT_THROW(lower::make_layout(0, 0, 4), ProgramError);
  EXPECT_THROW(lower::make_layout(3, 4, 4), ProgramError);
}
