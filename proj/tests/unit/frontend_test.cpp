#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "machlite/fuzz.hpp"
#include "test_support.hpp"

using namespace machlite;
using machlite::test::program;

namespace {

dsl::SourceProgram parse_ok(const std::string& src) {
  auto r = dsl::parse(src);
  EXPECT_TRUE(r.ok()) << format_diagnostics(r.diagnostics);
  return r.ok() ? *r.program : dsl::SourceProgram{};
}

dsl::TypedProgram analyze_ok(const std::string& src, GridConfig grid = {}) {
  auto a = dsl::analyze(parse_ok(src), grid);
  EXPECT_TRUE(a.ok()) << format_diagnostics(a.diagnostics);
  return a.ok() ? *a.program : dsl::TypedProgram{};
}

std::string analyze_error(const std::string& src, GridConfig grid = {}) {
  auto p = dsl::parse(src);
  if (!p.ok()) return format_diagnostics(p.diagnostics);
  auto a = dsl::analyze(*p.program, grid);
  return a.ok() ? std::string{} : format_diagnostics(a.diagnostics);
}

}  // namespace

TEST(Parse, MinimalScalarDeclaration) {
  const auto p = parse_ok("gs s = 0.0\n");
  ASSERT_EQ(p.declarations.size(), 1u);
  const auto& d = p.declarations[0];
  EXPECT_EQ(d.name, "s");
  EXPECT_EQ(d.kind, OodsKind::GS);
  EXPECT_EQ(d.dtype, DType::F32);
  ASSERT_TRUE(d.init.has_value());
  EXPECT_EQ(d.init->kind, dsl::InitSpec::Kind::Constant);
  EXPECT_EQ(d.init->constant, 0.0);
  EXPECT_TRUE(p.statements.empty());
}

TEST(Parse, ListingOneShape) {
  const auto p = parse_ok(program("running_sum"));
  EXPECT_EQ(p.declarations.size(), 4u);
  int loops = 0, reduces = 0;
  for (const auto& s : p.statements) {
    loops += std::holds_alternative<dsl::ForStmt>(s.node);
    reduces += std::holds_alternative<dsl::ReduceStmt>(s.node);
  }
  EXPECT_EQ(loops, 1);
  EXPECT_EQ(reduces, 1);
  EXPECT_EQ(p.statements.size(), 2u);
  const auto& loop = std::get<dsl::ForStmt>(p.statements[0].node);
  EXPECT_EQ(loop.iterable, "myGA");
  ASSERT_EQ(loop.body.size(), 3u);
  EXPECT_TRUE(std::holds_alternative<dsl::ExitStmt>(loop.body[1].node));
  ASSERT_EQ(p.pragmas.size(), 2u);
  EXPECT_EQ(p.pragmas[0].kind, dsl::Pragma::Kind::Host);
  EXPECT_EQ(p.pragmas[1].kind, dsl::Pragma::Kind::Ignore);
}

TEST(Parse, LowRankArrayRejected) {
  const std::string err = analyze_error("la A[2, 2]\n");
  EXPECT_NE(err.find("rank"), std::string::npos) << err;
}

TEST(Parse, SyntaxErrorCarriesLocation) {
  auto r = dsl::parse("gs a = 1.0\ngs b = = 2.0\n");
  ASSERT_FALSE(r.ok());
  ASSERT_FALSE(r.diagnostics.empty());
  EXPECT_EQ(r.diagnostics[0].loc.line, 2);
  EXPECT_GT(r.diagnostics[0].loc.column, 0);
}

TEST(Parse, DuplicateDeclaration) {
  auto r = dsl::parse("gs a = 1.0\ngs a = 2.0\n");
  ASSERT_FALSE(r.ok());
  EXPECT_NE(format_diagnostics(r.diagnostics).find("a"), std::string::npos);
  EXPECT_EQ(r.diagnostics[0].loc.line, 2);
}

TEST(Parse, UnknownIdentifier) {
  auto r = dsl::parse("gs a = 1.0\na = b + 1.0\n");
  ASSERT_FALSE(r.ok());
  EXPECT_NE(format_diagnostics(r.diagnostics).find("'b'"), std::string::npos)
      << format_diagnostics(r.diagnostics);
}

TEST(Parse, TotalOnGarbage) {
  std::mt19937 rng(3);
  const std::string alphabet = "la gs[]{}:,=+-*/()0123456789.\n#@ abcxyz_";
  for (int i = 0; i < 300; ++i) {
    std::string s;
    const int n = static_cast<int>(rng() % 60);
    for (int k = 0; k < n; ++k) s += alphabet[rng() % alphabet.size()];
    auto r = dsl::parse(s);
    EXPECT_TRUE(r.ok() || !r.diagnostics.empty()) << s;
  }
}

TEST(Parse, PrintRoundTripsCorpusAndFuzzPrograms) {
  std::vector<std::string> sources;
  for (const auto& [name, text] : test::corpus()) sources.push_back(text);
  for (std::uint64_t s = 0; s < 40; ++s) sources.push_back(fuzz::generate(s).source);
  for (const auto& src : sources) {
    const auto p = parse_ok(src);
    const std::string printed = dsl::print(p);
    const auto q = parse_ok(printed);
    EXPECT_EQ(p, q) << printed;
    EXPECT_EQ(dsl::print(q), printed);
  }
}

TEST(Analyze, FullExtentVectorLength) {
  const auto t = analyze_ok("la A[10, 10, 10] f32 = zeros\nla B[10, 10, 10] f32 = zeros\nA += B\n");
  ASSERT_EQ(t.body.size(), 1u);
  const auto& a = std::get<dsl::TAssign>(t.body[0].node);
  EXPECT_EQ(a.dst.slice.mem.length, 10);
  EXPECT_EQ(a.dst.slice.region, PeRegion::full(10, 10));
}

TEST(Analyze, SliceRegionAndLength) {
  const auto t = analyze_ok(
      "la A[10, 10, 10] f32 = zeros\nA[1:4, 3:5, 1:2] += A[1:4, 3:5, 8:9]\n");
  const auto& a = std::get<dsl::TAssign>(t.body[0].node);
  EXPECT_EQ(a.dst.slice.region.count_x(), 3);
  EXPECT_EQ(a.dst.slice.region.count_y(), 2);
  EXPECT_EQ(a.dst.slice.mem.start, 1);
  EXPECT_EQ(a.dst.slice.mem.length, 1);
}

TEST(Analyze, PeExtentExceeded) {
  const std::string err = analyze_error("la A[12, 10, 10] f32 = zeros\n");
  EXPECT_NE(err.find("exceeds"), std::string::npos) << err;
}

TEST(Analyze, IllegalKindCombination) {
  const std::string err =
      analyze_error("la A[10, 10, 10] f32 = zeros\nga G[10] f32 = zeros\nA = A + G\n");
  EXPECT_FALSE(err.empty());
}

TEST(Analyze, ShapeMismatch) {
  const std::string err = analyze_error(
      "la A[10, 10, 10] f32 = zeros\nA[0:2, :, :] = A[0:3, :, :]\n");
  EXPECT_NE(err.find("mismatch"), std::string::npos) << err;
}

TEST(Analyze, DeterministicAcrossRuns) {
  const auto src = program("stencil");
  const auto a = analyze_ok(src, {8, 8});
  const auto b = analyze_ok(src, {8, 8});
  EXPECT_EQ(a, b);
}

TEST(Il, DeviceLoopWithConditionalExit) {
  const auto t = analyze_ok(program("running_sum"));
  const auto il = dsl::lower_to_il(t, 7);
  const dsl::ILLoop* loop = nullptr;
  for (const auto& s : il.body)
    if (const auto* l = std::get_if<dsl::ILLoop>(&s.node)) loop = l;
  ASSERT_NE(loop, nullptr);
  EXPECT_EQ((loop->stop - loop->start) / loop->step, 10);
  const dsl::TExit* exit = nullptr;
  for (const auto& s : loop->body)
    if (const auto* e = std::get_if<dsl::TExit>(&s.node)) exit = e;
  ASSERT_NE(exit, nullptr);
  EXPECT_EQ(exit->cmp, CmpOp::GT);
  EXPECT_EQ(exit->rhs.leaf.kind, dsl::Operand::Kind::Literal);
  EXPECT_EQ(exit->rhs.leaf.literal.as_f32(), 100.0f);
}

TEST(Il, RangeLoopUnrolls) {
  const auto t = analyze_ok(
      "la A[4, 4, 8] f32 = zeros\nfor k in range[0:6:2] {\n  A[:, :, k:k+1] += 1.0\n}\n", {4, 4});
  const auto il = dsl::lower_to_il(t);
  ASSERT_EQ(il.body.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    const auto& a = std::get<dsl::TAssign>(il.body[static_cast<std::size_t>(i)].node);
    EXPECT_EQ(a.dst.slice.mem.start, 2 * i);
    EXPECT_EQ(a.dst.slice.mem.length, 1);
  }
}

TEST(Il, FullReduceCoversEveryPe) {
  const auto t = analyze_ok(program("running_sum"));
  const auto il = dsl::lower_to_il(t);
  const auto& r = std::get<dsl::TReduce>(il.body.back().node);
  EXPECT_EQ(r.src.slice.region, PeRegion::full(10, 10));
  EXPECT_EQ(r.src.slice.mem.length, 10);
}

TEST(Il, UnseededRandomFollowsRunSeed) {
  const auto t = analyze_ok(program("running_sum"));
  const auto a = dsl::lower_to_il(t, 1);
  const auto b = dsl::lower_to_il(t, 1);
  const auto c = dsl::lower_to_il(t, 2);
  EXPECT_EQ(a, b);
  EXPECT_NE(a.vars[0].data, c.vars[0].data);
}

TEST(Il, I16RandomStaysInHalfOpenRange) {
  dsl::InitSpec spec;
  spec.kind = dsl::InitSpec::Kind::Random;
  spec.lo = 3;
  spec.hi = 9;
  spec.seed = 11;
  const auto v = dsl::generate_init(spec, DType::I16, 5000, 0, 0);
  std::vector<int> seen(16, 0);
  for (const auto& s : v) {
    ASSERT_GE(s.as_i16(), 3);
    ASSERT_LT(s.as_i16(), 9);
    ++seen[static_cast<std::size_t>(s.as_i16())];
  }
  for (int k = 3; k < 9; ++k) EXPECT_GT(seen[static_cast<std::size_t>(k)], 0) << k;
}
