#include <gtest/gtest.h>

#include <functional>
#include <random>
#include <set>

#include "test_support.hpp"

using namespace machlite;

namespace {

irg::IRGraph graph_of(const std::string& src, GridConfig grid = {4, 4}) {
  CompileOptions o;
  o.grid = grid;
  return compile_graph(src, o).graph;
}

int temps(const irg::IRGraph& g) {
  int n = 0;
  for (const auto& m : g.memlocs) n += m.role == irg::MemRole::Temp;
  return n;
}

const std::string kDecls =
    "la A[4, 4, 8] f32 = random(seed=1)\n"
    "la B[4, 4, 8] f32 = random(seed=2)\n"
    "la D[4, 4, 8] f32 = random(seed=3)\n"
    "out la E[4, 4, 8] f32 = zeros\n";

// Preorder enumeration written independently of ordered_walk.
void preorder(const irg::Graph& g, std::vector<std::pair<int, int>>& out, int depth) {
  std::vector<const irg::Node*> nodes;
  for (const auto& n : g.nodes) nodes.push_back(&n);
  std::sort(nodes.begin(), nodes.end(), [](auto* a, auto* b) { return a->id < b->id; });
  for (const auto* n : nodes) {
    out.emplace_back(n->id, depth);
    if (auto it = g.subgraphs.find(n->id); it != g.subgraphs.end()) preorder(it->second, out, depth + 1);
  }
}

}  // namespace

TEST(Irg, CompoundExpressionUsesOneTemp) {
  const auto g = graph_of(kDecls + "E = (A + B) * D\n");
  ASSERT_EQ(g.root.nodes.size(), 2u);
  const auto& n1 = g.root.nodes[0];
  const auto& n2 = g.root.nodes[1];
  EXPECT_EQ(n1.op, irg::Op::Binary);
  EXPECT_EQ(n1.binop, BinOp::Add);
  EXPECT_EQ(n2.op, irg::Op::Binary);
  EXPECT_EQ(n2.binop, BinOp::Mul);
  EXPECT_EQ(temps(g), 1);
  EXPECT_EQ(g.mem(n1.result).role, irg::MemRole::Temp);
  EXPECT_EQ(g.mem(n2.result).name, "E");
  ASSERT_EQ(n2.in.size(), 2u);
  EXPECT_EQ(n2.in[0].src, n1.id);
  EXPECT_EQ(n2.in[0].memloc, n1.result);
  EXPECT_EQ(n2.in[1].src, 0);
  for (const auto& e : n2.in) {
    EXPECT_EQ(e.slice.region, PeRegion::full(4, 4));
    EXPECT_EQ(e.slice.mem.length, 8);
  }
  std::vector<int> order;
  irg::ordered_walk(g, [&](const irg::Node& n, int) { order.push_back(n.id); });
  EXPECT_EQ(order, (std::vector<int>{n1.id, n2.id}));
  EXPECT_TRUE(irg::validate(g).empty());
}

TEST(Irg, PlainAssignmentIsOneCopy) {
  const auto g = graph_of(kDecls + "E = A\n");
  ASSERT_EQ(g.root.nodes.size(), 1u);
  EXPECT_EQ(g.root.nodes[0].op, irg::Op::Copy);
  EXPECT_EQ(temps(g), 0);
}

TEST(Irg, DeviceLoopBuildsSubgraphWithTransfers) {
  const auto g = graph_of(
      "ga G[5] f32 = [1.0, 2.0, 3.0, 4.0, 5.0]\n"
      "out gs s f32 = 0.0\n"
      "out la A[4, 4, 2] f32 = zeros\n"
      "for x in G {\n  s = s + x\n  exit_if s > 6.0\n  A += 1.0\n}\n");
  const irg::Node* loop = nullptr;
  for (const auto& n : g.root.nodes)
    if (n.op == irg::Op::Loop) loop = &n;
  ASSERT_NE(loop, nullptr);
  EXPECT_EQ(loop->stop - loop->start, 5);
  ASSERT_TRUE(g.root.subgraphs.count(loop->id));
  const auto& body = g.root.subgraphs.at(loop->id);
  int work = 0;
  for (const auto& n : body.nodes)
    work += n.op != irg::Op::TransferExport && n.op != irg::Op::TransferImport;
  EXPECT_GE(work, 3);
  bool s_carried = false;
  for (const auto& t : g.root.transfers) s_carried |= g.mem(t.memloc).name == "s";
  EXPECT_TRUE(s_carried);
  const auto [lo, hi] = g.subgraph_range(loop->id);
  for (const auto& n : body.nodes) {
    EXPECT_GE(n.id, lo);
    EXPECT_LE(n.id, hi);
    EXPECT_GT(n.id, loop->id);
  }
  EXPECT_TRUE(irg::validate(g).empty()) << format_diagnostics(irg::validate(g));
}

TEST(Irg, EmptyGraphWalksNothing) {
  const auto g = graph_of("gs a = 1.0\n");
  int n = 0;
  irg::ordered_walk(g, [&](const irg::Node&, int) { ++n; });
  EXPECT_EQ(n, 0);
  EXPECT_TRUE(irg::validate(g).empty());
}

TEST(Irg, NestedWalkMatchesRecursiveOracle) {
  const auto g = graph_of(
      "ga G[3] f32 = [1.0, 2.0, 3.0]\n"
      "ga H[2] f32 = [1.0, 1.0]\n"
      "out gs s f32 = 0.0\n"
      "out la A[4, 4, 2] f32 = zeros\n"
      "A += 2.0\n"
      "for x in G {\n  A += 1.0\n  for y in H {\n    s = s + y\n    A *= 1.5\n  }\n  s = s + x\n}\n"
      "A -= 1.0\n");
  std::vector<std::pair<int, int>> walk, oracle;
  irg::ordered_walk(g, [&](const irg::Node& n, int d) { walk.emplace_back(n.id, d); });
  preorder(g.root, oracle, 0);
  EXPECT_EQ(walk, oracle);
  int max_depth = 0;
  for (const auto& [id, d] : walk) max_depth = std::max(max_depth, d);
  EXPECT_EQ(max_depth, 2);
  for (std::size_t i = 1; i < walk.size(); ++i) EXPECT_LT(walk[i - 1].first, walk[i].first);
}

TEST(Irg, ValidateFlagsBackwardEdge) {
  auto g = graph_of(kDecls + "E = (A + B) * D\n");
  g.root.nodes[0].in[0].src = g.root.nodes[1].id;
  const auto d = irg::validate(g);
  EXPECT_EQ(d.size(), 1u) << format_diagnostics(d);
}

TEST(Irg, ValidateNamesBothDuplicates) {
  auto g = graph_of(kDecls + "E = A + B\nE = E * D\nE = E - A\n");
  ASSERT_EQ(g.root.nodes.size(), 3u);
  const int dup = g.root.nodes[1].id;
  g.root.nodes[2].id = dup;
  const auto d = irg::validate(g);
  ASSERT_FALSE(d.empty());
  const std::string text = format_diagnostics(d);
  int mentions = 0;
  for (std::size_t p = text.find(std::to_string(dup)); p != std::string::npos;
       p = text.find(std::to_string(dup), p + 1))
    ++mentions;
  EXPECT_GE(mentions, 2) << text;
}

TEST(Irg, BuildIsDeterministic) {
  const auto src = test::program("gather");
  const auto a = irg::to_json(graph_of(src, {6, 4}));
  const auto b = irg::to_json(graph_of(src, {6, 4}));
  EXPECT_EQ(a, b);
}

TEST(Irg, TempsEqualInteriorNodesOfRandomExpressions) {
  std::mt19937 rng(17);
  const char* names[] = {"A", "B", "D"};
  const char* ops[] = {"+", "-", "*"};
  for (int trial = 0; trial < 60; ++trial) {
    int interior = 0;
    std::function<std::string(int)> gen = [&](int depth) -> std::string {
      if (depth == 0 || rng() % 3 == 0) return names[rng() % 3];
      ++interior;
      return "(" + gen(depth - 1) + " " + ops[rng() % 3] + " " + gen(depth - 1) + ")";
    };
    std::string expr = gen(4);
    if (interior == 0) continue;
    const auto g = graph_of(kDecls + "E = " + expr + "\n");
    EXPECT_EQ(static_cast<int>(g.root.nodes.size()), interior) << expr;
    EXPECT_EQ(temps(g), interior - 1) << expr;
    EXPECT_TRUE(irg::validate(g).empty());
  }
}

TEST(Irg, EdgeViewCoversEveryInput) {
  const auto g = graph_of(test::program("gather"), {6, 4});
  std::size_t inputs = 0;
  irg::ordered_walk(g, [&](const irg::Node& n, int) {
    for (const auto& e : n.in) inputs += !e.literal();
  });
  std::size_t edges = 0;
  for (const auto& e : g.edges()) edges += e.memloc >= 0;
  EXPECT_EQ(edges, inputs);
}
