#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace machlite;
using test::var;

namespace {

struct Frozen {
  dsl::ILProgram il;
  const std::vector<Scalar>& data(const std::string& name) const {
    for (const auto& v : il.vars)
      if (v.info.name == name) return v.data;
    throw std::runtime_error("no var " + name);
  }
};

Frozen freeze(const std::string& src, std::uint64_t seed, GridConfig grid = {10, 10}) {
  auto p = dsl::parse(src);
  auto a = dsl::analyze(*p.program, grid);
  return {dsl::lower_to_il(*a.program, seed)};
}

// Listing-one semantics evaluated directly on the frozen init data.
struct ListingOracle {
  int exit_at = -1;  // GA index the exit fired on, -1 when the loop ran out
  std::vector<float> la;
  double sum = 0.0;
};

ListingOracle listing_oracle(const Frozen& f) {
  ListingOracle o;
  for (const auto& s : f.data("myLA")) o.la.push_back(s.as_f32());
  const auto& ga = f.data("myGA");
  float gs = 0.0f;
  for (int i = 0; i < static_cast<int>(ga.size()); ++i) {
    gs = gs + ga[static_cast<std::size_t>(i)].as_f32();
    if (gs > 100.0f) {
      o.exit_at = i;
      break;
    }
    for (int x = 1; x < 4; ++x)
      for (int y = 3; y < 5; ++y) {
        const std::size_t base = static_cast<std::size_t>((x * 10 + y) * 10);
        o.la[base + 1] = o.la[base + 1] + o.la[base + 8];
      }
  }
  for (float v : o.la) o.sum += v;
  return o;
}

}  // namespace

TEST(Reference, ListingBreakMatchesHandSteppedOracle) {
  const auto src = test::program("running_sum_exit");
  const auto oracle = listing_oracle(freeze(src, 7));
  ASSERT_GE(oracle.exit_at, 1);
  const auto c = test::build(src, std::nullopt, 7);
  const auto r = run_ref(c);
  ASSERT_EQ(r.exits.size(), 1u);
  EXPECT_EQ(r.exits[0].counter, oracle.exit_at);
  const auto& la = var(r.store, "myLA");
  for (std::size_t i = 0; i < la.values.size(); ++i) ASSERT_EQ(la.values[i].as_f32(), oracle.la[i]) << i;
  const double got = var(r.store, "mySum").values[0].as_f32();
  EXPECT_LT(std::abs(got - oracle.sum) / std::abs(oracle.sum), 1e-6);
}

TEST(Reference, ListingWithoutBreakRunsAllIterations) {
  const auto src = test::program("running_sum");
  const auto oracle = listing_oracle(freeze(src, 7));
  EXPECT_EQ(oracle.exit_at, -1);
  const auto r = run_ref(test::build(src, std::nullopt, 7));
  EXPECT_TRUE(r.exits.empty());
  const auto& la = var(r.store, "myLA");
  for (std::size_t i = 0; i < la.values.size(); ++i) ASSERT_EQ(la.values[i].as_f32(), oracle.la[i]) << i;
}

TEST(Reference, ZeroInputsGiveZeroReduction) {
  const auto c = test::build("la A[4, 4, 3] f32 = zeros\nout uls s f32\nreduce(A, s)\n", GridConfig{4, 4});
  const auto r = run_ref(c);
  EXPECT_EQ(var(r.store, "s").values[0].as_f32(), 0.0f);
}

TEST(Reference, ElementwiseChainMatchesDirectEvaluation) {
  const std::string src =
      "la A[4, 4, 5] f32 = random(seed=1)\nla B[4, 4, 5] f32 = random(seed=2, lo=1.0, hi=2.0)\n"
      "la I[4, 4, 5] i16 = random(seed=3, lo=-100, hi=100)\n"
      "out la E[4, 4, 5] f32\nout la J[4, 4, 5] i16\n"
      "E = (A + B) * A\nE = E / B\nE[1:3, :, 2:4] -= 0.5\nJ = I * 3\nJ = J - I\nJ = 7 - J\n";
  const auto f = freeze(src, 0, {4, 4});
  const auto& A = f.data("A");
  const auto& B = f.data("B");
  const auto& I = f.data("I");
  std::vector<float> E(A.size());
  std::vector<std::int16_t> J(I.size());
  for (std::size_t i = 0; i < A.size(); ++i) {
    const float a = A[i].as_f32(), b = B[i].as_f32();
    float e = (a + b) * a;
    e = e / b;
    const int x = static_cast<int>(i / 20), k = static_cast<int>(i % 5);
    if (x >= 1 && x < 3 && k >= 2 && k < 4) e = e - 0.5f;
    E[i] = e;
    std::int16_t j = static_cast<std::int16_t>(I[i].as_i16() * 3);
    j = static_cast<std::int16_t>(j - I[i].as_i16());
    J[i] = static_cast<std::int16_t>(7 - j);
  }
  const auto c = test::build(src, GridConfig{4, 4});
  EXPECT_EQ(test::node_count(c.graph), 7);
  const auto r = run_ref(c);
  const auto& e = var(r.store, "E");
  const auto& j = var(r.store, "J");
  for (std::size_t i = 0; i < E.size(); ++i) {
    ASSERT_EQ(e.values[i].as_f32(), E[i]) << i;
    ASSERT_EQ(j.values[i].as_i16(), J[i]) << i;
  }
}

TEST(Reference, I16ArithmeticWraps) {
  const auto c = test::build("ls a i16 = 30000\nout ls b i16\nb = a + a\n", GridConfig{2, 2});
  const auto r = run_ref(c);
  EXPECT_EQ(var(r.store, "b").values[0].as_i16(), static_cast<std::int16_t>(60000 - 65536));
}

TEST(Reference, DynamicStopOutOfRangeFaults) {
  const auto c = test::build("ls n i16 = 9\nla a[2, 2, 4] i16 = zeros\nout la b[2, 2, 4] i16 = zeros\n"
                             "b[:, :, 0:n] = a[:, :, 0:n] + 1\n",
                             GridConfig{2, 2});
  EXPECT_THROW(run_ref(c), ExecutionFault);
  EXPECT_THROW(run_sim(c), ExecutionFault);
}

TEST(Reference, AddressedStorageAgreesWithSymbolic) {
  for (const auto& [name, src] : test::corpus()) {
    const auto c = test::build(src);
    const auto sym = ref::interpret(c.graph);
    const auto adr = ref::interpret(c.graph, &c.symbols);
    // Dead non-output variables may have had their words reused.
    auto outputs = [](const ref::Store& s) {
      ref::Store o;
      for (const auto& v : s.vars)
        if (v.output) o.vars.push_back(v);
      return ref::dump(o);
    };
    EXPECT_EQ(outputs(sym.store), outputs(adr.store)) << name;
    EXPECT_EQ(sym.exits, adr.exits) << name;
  }
}

TEST(Reference, DiffIdenticalAndCorrupted) {
  const auto c = test::build(test::program("gather"));
  const auto r = run_ref(c);
  const auto same = ref::diff(r.store, r.store);
  EXPECT_TRUE(same.pass);
  auto bad = r.store;
  for (auto& v : bad.vars)
    if (v.name == "g") v.values[17] = Scalar::f32(v.values[17].as_f32() + 1.0f);
  const auto d = ref::diff(r.store, bad);
  EXPECT_FALSE(d.pass);
  bool flagged = false;
  for (const auto& v : d.vars)
    if (v.name == "g") {
      flagged = !v.pass;
      EXPECT_TRUE(v.exact);
      EXPECT_EQ(v.first_bad, 17);
    }
  EXPECT_TRUE(flagged);
  auto missing = r.store;
  missing.vars.pop_back();
  EXPECT_FALSE(ref::diff(r.store, missing).pass);
}

TEST(Reference, ReductionResultsUseTolerance) {
  const auto c = test::build("la A[4, 4, 8] f32 = random(seed=3)\nout uls s f32\nreduce(A, s)\n", GridConfig{4, 4});
  const auto r = run_ref(c);
  auto near = r.store;
  for (auto& v : near.vars)
    if (v.name == "s") {
      EXPECT_TRUE(v.tainted);
      v.values[0] = Scalar::f32(v.values[0].as_f32() * (1.0f + 2e-6f));
    }
  EXPECT_TRUE(ref::diff(r.store, near, 1e-5).pass);
  EXPECT_FALSE(ref::diff(r.store, near, 1e-7).pass);
}
