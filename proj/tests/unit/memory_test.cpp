#include <gtest/gtest.h>

#include <map>

#include "machlite/fuzz.hpp"
#include "test_support.hpp"

using namespace machlite;

namespace {

Compiled graph_of(const std::string& src, GridConfig grid = {4, 4}) {
  CompileOptions o;
  o.grid = grid;
  return compile_graph(src, o);
}

int memloc_named(const irg::IRGraph& g, const std::string& name) {
  for (const auto& m : g.memlocs)
    if (m.name == name) return m.id;
  return -1;
}

// Overlap check written from scratch: every pair of entries in one space
// that shares a node in time must not share a word.
int brute_force_conflicts(const mem::MemoryMap& map) {
  int bad = 0;
  for (std::size_t i = 0; i < map.entries.size(); ++i)
    for (std::size_t j = i + 1; j < map.entries.size(); ++j) {
      const auto& a = map.entries[i];
      const auto& b = map.entries[j];
      if (a.space != b.space) continue;
      const bool time = a.first <= b.last && b.first <= a.last;
      const bool words = a.offset < b.offset + b.size_words && b.offset < a.offset + a.size_words;
      bad += time && words;
    }
  return bad;
}

}  // namespace

TEST(Lifespan, OutputLivesToTheEnd) {
  std::string src =
      "la A[4, 4, 2] f32 = random(seed=1)\n"
      "la B[4, 4, 2] f32 = zeros\n"
      "out la E[4, 4, 2] f32\n"
      "B = A + 1.0\nB = B * 2.0\nE = B - A\n";
  for (int i = 0; i < 7; ++i) src += "A = A + B\n";
  const auto c = graph_of(src);
  const auto& g = c.graph;
  EXPECT_EQ(test::node_count(g), 10);
  const int e = memloc_named(g, "E");
  const auto* s = c.spans.find(e);
  ASSERT_NE(s, nullptr);
  EXPECT_EQ(s->first, 3);
  EXPECT_EQ(s->last, 10);
  EXPECT_EQ(g.max_id, 10);
  // Initialized data is live from entry.
  EXPECT_EQ(c.spans.find(memloc_named(g, "A"))->first, 0);
}

TEST(Lifespan, TemporarySpansProducerToConsumer) {
  const auto c = graph_of(
      "la A[4, 4, 2] f32 = random(seed=1)\nla B[4, 4, 2] f32 = random(seed=2)\n"
      "out la E[4, 4, 2] f32\nE = A * 2.0\nE = (A + B) * E\nE = E + 1.0\n");
  const auto& g = c.graph;
  const irg::Node& producer = g.root.nodes[1];
  ASSERT_EQ(g.mem(producer.result).role, irg::MemRole::Temp);
  const auto* s = c.spans.find(producer.result);
  ASSERT_NE(s, nullptr);
  EXPECT_EQ(s->first, producer.id);
  EXPECT_EQ(s->last, g.root.nodes[2].id);
}

TEST(Lifespan, ParentValueReadInLoopCoversSubgraph) {
  const auto c = graph_of(
      "ga G[4] f32 = [1.0, 2.0, 3.0, 4.0]\n"
      "la K[4, 4, 2] f32 = zeros\n"
      "K = K + 3.0\n"
      "out la A[4, 4, 2] f32 = zeros\n"
      "for x in G {\n  A += K\n  A *= 0.5\n  A -= 1.0\n}\n");
  const auto& g = c.graph;
  const irg::Node* loop = nullptr;
  for (const auto& n : g.root.nodes)
    if (n.op == irg::Op::Loop) loop = &n;
  ASSERT_NE(loop, nullptr);
  const auto [lo, hi] = g.subgraph_range(loop->id);
  const auto* s = c.spans.find(memloc_named(g, "K"));
  ASSERT_NE(s, nullptr);
  EXPECT_GE(s->last, hi);
  EXPECT_LE(s->first, lo);
}

TEST(Lifespan, UndefinedReferenceIsDiagnosed) {
  auto c = graph_of("la A[4, 4, 2] f32 = zeros\nout la E[4, 4, 2] f32\nE = A + 1.0\n");
  c.graph.root.nodes[0].in[0].memloc = 99;
  const auto t = mem::compute_lifespans(c.graph);
  EXPECT_FALSE(t.diagnostics.empty());
}

TEST(BestFit, DisjointLifetimesReuseOffset) {
  mem::BestFit a(Placement::Worker, 24576);
  const int x = a.alloc(8);
  a.release(x, 8);
  const int y = a.alloc(8);
  EXPECT_EQ(x, y);
  EXPECT_EQ(a.footprint(), 8);
  EXPECT_TRUE(a.compact());
}

TEST(BestFit, PicksSmallestFittingBlockAndSplits) {
  mem::BestFit a(Placement::Worker, 24576);
  const int b4 = a.alloc(4);
  a.alloc(2);
  const int b8 = a.alloc(8);
  a.alloc(2);
  const int b16 = a.alloc(16);
  a.alloc(2);
  a.release(b4, 4);
  a.release(b8, 8);
  a.release(b16, 16);
  ASSERT_EQ(a.free_list().size(), 3u);
  const int got = a.alloc(6);
  EXPECT_EQ(got, b8);
  const std::vector<mem::FreeBlock> want{{b4, 4}, {b8 + 6, 2}, {b16, 16}};
  EXPECT_EQ(a.free_list(), want);
}

TEST(BestFit, ReleasedNeighboursCoalesce) {
  mem::BestFit a(Placement::Worker, 24576);
  const int p = a.alloc(4), q = a.alloc(4), r = a.alloc(4);
  a.alloc(2);
  a.release(p, 4);
  a.release(r, 4);
  a.release(q, 4);
  const std::vector<mem::FreeBlock> want{{p, 12}};
  EXPECT_EQ(a.free_list(), want);
}

TEST(BestFit, CapacityExceeded) {
  mem::BestFit a(Placement::Worker, 100);
  a.alloc(60);
  EXPECT_THROW(a.alloc(60), mem::CapacityError);
}

TEST(BestFit, SmallBlocksDoNotStraddleBanks) {
  mem::BestFit a(Placement::Worker, 24576, 0, 3072);
  a.alloc(3000);
  const int o = a.alloc(mem::BestFit::Request{200, 2, true});
  EXPECT_EQ(o / 3072, (o + 199) / 3072);
}

TEST(Plan, EmptyGraph) {
  irg::IRGraph g;
  const auto map = mem::plan(g, mem::compute_lifespans(g));
  EXPECT_TRUE(map.entries.empty());
  EXPECT_EQ(map.footprint[0], 0);
  EXPECT_EQ(map.footprint[1], 0);
}

TEST(Plan, ControllerBaseOffsetsAddresses) {
  const auto c = graph_of(test::program("running_sum"), {10, 10});
  const auto st = mem::assign_addresses(c.map, 0, 0x5fe0);
  int seen = 0;
  for (const auto& e : c.map.entries)
    if (e.space == Placement::Controller && e.offset == 0) {
      EXPECT_EQ(st.at(e.memloc), 0x5fe0);
      ++seen;
    }
  EXPECT_GE(seen, 1);
}

TEST(Plan, SharedOffsetsGiveSharedAddresses) {
  const auto c = graph_of(
      "la A[4, 4, 2] f32 = random(seed=1)\nout la E[4, 4, 2] f32\n"
      "E = (A + 1.0) * 2.0\nE = (E + 3.0) * 2.0\n");
  std::map<int, std::vector<int>> by_offset;
  for (const auto& e : c.map.entries)
    if (e.space == Placement::Worker) by_offset[e.offset].push_back(e.memloc);
  bool shared = false;
  for (const auto& [off, ids] : by_offset)
    if (ids.size() > 1) {
      shared = true;
      for (int id : ids) EXPECT_EQ(c.symbols.at(id), c.symbols.at(ids[0]));
    }
  EXPECT_TRUE(shared);
}

TEST(Plan, CapacityErrorBeforeLowering) {
  const std::string over =
      "la A[2, 2, 7000] f32 = random(seed=1)\nla B[2, 2, 7000] f32 = random(seed=2)\n"
      "out la C[2, 2, 7000] f32\nC = A + B\n";
  try {
    graph_of(over, {2, 2});
    FAIL() << "expected a capacity error";
  } catch (const mem::CapacityError& e) {
    EXPECT_EQ(e.space(), Placement::Worker);
    EXPECT_GT(e.needed(), 24576);
    EXPECT_EQ(e.capacity(), 24576);
  }
}

class PlanProperties : public ::testing::TestWithParam<int> {};

TEST_P(PlanProperties, SafeBoundedAndDeterministic) {
  fuzz::Options fo;
  fo.max_nodes = 20;
  for (int k = 0; k < 25; ++k) {
    const auto seed = static_cast<std::uint64_t>(GetParam() * 25 + k);
    const auto p = fuzz::generate(seed, fo);
    const auto c = graph_of(p.source, p.grid);
    EXPECT_EQ(brute_force_conflicts(c.map), 0) << p.source;
    EXPECT_TRUE(mem::find_conflicts(c.map).empty());
    for (const auto& e : c.map.entries) {
      const int sp = mem::space_index(e.space);
      EXPECT_GE(e.offset, 0);
      EXPECT_LE(e.offset + e.size_words, c.map.footprint[static_cast<std::size_t>(sp)]);
      EXPECT_EQ(e.offset % 2, 0);
    }
    for (int sp = 0; sp < 2; ++sp) {
      EXPECT_GE(c.map.footprint[static_cast<std::size_t>(sp)], c.map.peak_live[static_cast<std::size_t>(sp)]);
      if (c.map.compact[static_cast<std::size_t>(sp)])
        EXPECT_EQ(c.map.footprint[static_cast<std::size_t>(sp)], c.map.peak_live[static_cast<std::size_t>(sp)]);
    }
    const auto again = mem::plan(c.graph, c.spans);
    ASSERT_EQ(again.entries.size(), c.map.entries.size());
    for (std::size_t i = 0; i < again.entries.size(); ++i)
      EXPECT_EQ(again.entries[i].offset, c.map.entries[i].offset);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, PlanProperties, ::testing::Range(0, 4));
