#include <benchmark/benchmark.h>
#include <fmt/format.h>

#include <fstream>
#include <sstream>

#include "machlite/driver.hpp"
#include "machlite/fuzz.hpp"

using namespace machlite;

namespace {

std::string program(const char* name) {
  std::ifstream in(fmt::format("{}/{}.mach", MACHLITE_PROGRAMS_DIR, name));
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void BM_Compile(benchmark::State& state) {
  const std::string src = program("running_sum");
  for (auto _ : state) benchmark::DoNotOptimize(compile(src));
}
BENCHMARK(BM_Compile);

void BM_GenerateFuzz(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(fuzz::generate(seed++));
}
BENCHMARK(BM_GenerateFuzz);

void BM_PlanMemory(benchmark::State& state) {
  fuzz::Options fo;
  fo.max_nodes = static_cast<int>(state.range(0));
  const auto p = fuzz::generate(3, fo);
  CompileOptions o;
  o.grid = p.grid;
  for (auto _ : state) benchmark::DoNotOptimize(compile_graph(p.source, o));
}
BENCHMARK(BM_PlanMemory)->Arg(10)->Arg(40);

void BM_SimulateListing(benchmark::State& state) {
  const auto c = compile(program("running_sum"));
  std::int64_t cycles = 0;
  for (auto _ : state) {
    sim::Machine m(c.vm);
    cycles += m.run().cycles;
  }
  state.counters["cycles/s"] = benchmark::Counter(static_cast<double>(cycles), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_SimulateListing)->Unit(benchmark::kMillisecond);

void BM_SimulateGather(benchmark::State& state) {
  const int len = static_cast<int>(state.range(0));
  const auto c = compile(fmt::format("la s[4, 4, {0}] f32 = random(seed=1)\nla ix[4, 4, {0}] i16 = "
                                     "random(seed=2, lo=0, hi={0})\nout la h[4, 4, {0}] f32 = zeros\nh = take(s, ix)\n",
                                     len));
  for (auto _ : state) {
    sim::Machine m(c.vm);
    benchmark::DoNotOptimize(m.run());
  }
}
BENCHMARK(BM_SimulateGather)->Arg(64)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_Reference(benchmark::State& state) {
  const auto c = compile(program("running_sum"));
  for (auto _ : state) benchmark::DoNotOptimize(run_ref(c));
}
BENCHMARK(BM_Reference);

}  // namespace

BENCHMARK_MAIN();
