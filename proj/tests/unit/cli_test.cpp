#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "test_support.hpp"

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI through the shell; stderr is folded into the output.
Result cli(const std::string& args, const std::string& env = "MACHLITE_COLOR=never") {
  const std::string cmd = env + " " + MACHLITE_CLI + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string prog(const std::string& name) { return (machlite::test::programs_dir() / (name + ".mach")).string(); }

std::string temp_file(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / ("machlite_cli_" + name);
  std::ofstream(p) << text;
  return p.string();
}

}  // namespace

TEST(Cli, CompileSummary) {
  const auto r = cli("compile " + prog("running_sum"));
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("field 10x10 on a 14x13 grid, 2 sections"), std::string::npos) << r.out;
}

TEST(Cli, EmitArtifacts) {
  const auto irg = cli("compile " + prog("running_sum") + " --emit irg");
  EXPECT_EQ(irg.code, 0);
  EXPECT_EQ(irg.out.front(), '{');
  const auto mem = cli("compile " + prog("running_sum") + " --emit mem");
  EXPECT_NE(mem.out.find("myLA"), std::string::npos);
  const auto as = cli("compile " + prog("running_sum") + " --emit asm");
  EXPECT_NE(as.out.find("==> exec.tsl <=="), std::string::npos);
  EXPECT_NE(as.out.find("ar_ar_add_f32"), std::string::npos);
  const auto paint = cli("compile " + prog("running_sum") + " --emit paint");
  EXPECT_NE(paint.out.find(".grid width=14 height=13"), std::string::npos) << paint.out;
  EXPECT_EQ(cli("compile " + prog("running_sum") + " --emit bogus").code, 1);
}

TEST(Cli, RunBackendsAgree) {
  const auto sim = cli("run " + prog("running_sum_exit") + " --seed 7");
  const auto ref = cli("run " + prog("running_sum_exit") + " --seed 7 --backend ref");
  EXPECT_EQ(sim.code, 0) << sim.out;
  EXPECT_EQ(ref.code, 0) << ref.out;
  EXPECT_NE(sim.out.find("exit loop"), std::string::npos);
  auto exit_line = [](const std::string& s) { return s.substr(s.find("exit loop")); };
  EXPECT_EQ(exit_line(sim.out), exit_line(ref.out));
}

TEST(Cli, RunStatsAndTrace) {
  const std::string trace = (std::filesystem::temp_directory_path() / "machlite_cli_trace.tsv").string();
  const auto r = cli("run " + prog("gather") + " --stats --trace " + trace);
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("wavelets injected"), std::string::npos);
  std::ifstream in(trace);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "cycle\tsrc\tdst\tcolor\tevent\tkind\tpayload");
  std::string line;
  EXPECT_TRUE(static_cast<bool>(std::getline(in, line)));
}

TEST(Cli, DiffPasses) {
  const auto r = cli("diff " + prog("stencil") + " --fifo-depth 1");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("pass"), std::string::npos);
}

TEST(Cli, ProgramErrorsExitOne) {
  const auto bad = temp_file("rank.mach", "la A[2, 2] f32\n");
  const auto r = cli("compile " + bad);
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find(bad + ":1:1: error:"), std::string::npos) << r.out;
  const auto syn = temp_file("syntax.mach", "gs a = 1.0\ngs b = = 2.0\n");
  const auto s = cli("compile " + syn);
  EXPECT_EQ(s.code, 1);
  EXPECT_NE(s.out.find(syn + ":2:"), std::string::npos) << s.out;
  EXPECT_EQ(cli("compile /no/such/file.mach").code, 1);
  EXPECT_EQ(cli("run " + prog("running_sum") + " --hop-latency 5").code, 1);
}

TEST(Cli, CapacityAndFaultsExitOne) {
  const auto big = temp_file("big.mach",
                             "la A[2, 2, 7000] f32 = zeros\nla B[2, 2, 7000] f32 = zeros\nout la C[2, 2, 7000] f32\n"
                             "C = A + B\n");
  const auto c = cli("compile " + big);
  EXPECT_EQ(c.code, 1);
  EXPECT_NE(c.out.find("capacity"), std::string::npos) << c.out;
  const auto oob = temp_file("oob.mach",
                             "la s[2, 2, 3] f32 = zeros\nla ix[2, 2, 3] i16 = 9\nout la g[2, 2, 3] f32 = zeros\n"
                             "g = take(s, ix)\n");
  const auto f = cli("run " + oob);
  EXPECT_EQ(f.code, 1);
  EXPECT_NE(f.out.find("fault"), std::string::npos) << f.out;
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, ColorControl) {
  const auto bad = temp_file("rank2.mach", "la A[2, 2] f32\n");
  EXPECT_EQ(cli("compile " + bad).out.find("\x1b["), std::string::npos);
  EXPECT_NE(cli("compile " + bad, "MACHLITE_COLOR=always").out.find("\x1b[31m"), std::string::npos);
}

TEST(Cli, FuzzSmoke) {
  const auto r = cli("fuzz --programs 12 --seed 40 -j 2");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("12 programs, 0 failed"), std::string::npos) << r.out;
}
