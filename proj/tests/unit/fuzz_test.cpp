#include <gtest/gtest.h>

#include "machlite/fuzz.hpp"
#include "test_support.hpp"

using namespace machlite;

TEST(Fuzz, SameSeedSameProgram) {
  for (std::uint64_t s : {0ull, 1ull, 77ull, 123456789ull}) {
    const auto a = fuzz::generate(s);
    const auto b = fuzz::generate(s);
    EXPECT_EQ(a.source, b.source);
    EXPECT_EQ(a.grid, b.grid);
    EXPECT_EQ(a.nodes, b.nodes);
  }
  EXPECT_NE(fuzz::generate(1).source, fuzz::generate(2).source);
}

TEST(Fuzz, ProgramsRespectBounds) {
  fuzz::Options o;
  o.max_nodes = 25;
  for (std::uint64_t s = 0; s < 60; ++s) {
    const auto p = fuzz::generate(s, o);
    EXPECT_LE(p.grid.width, o.max_grid);
    EXPECT_LE(p.grid.height, o.max_grid);
    EXPECT_EQ(p.grid.width % 2, 0);
    EXPECT_EQ(p.grid.height % 2, 0);
    CompileOptions co;
    co.grid = p.grid;
    const auto c = compile(p.source, co);
    EXPECT_EQ(test::node_count(c.graph), p.nodes);
    EXPECT_LE(p.nodes, o.max_nodes);
    EXPECT_GT(p.nodes, 0) << p.source;
  }
}

TEST(Fuzz, SmallBatchAgreesAcrossBackends) {
  for (std::uint64_t s = 500; s < 520; ++s) {
    const auto p = fuzz::generate(s);
    CompileOptions co;
    co.grid = p.grid;
    const auto d = differential(compile(p.source, co));
    EXPECT_TRUE(d.pass()) << p.source << d.text();
  }
}
