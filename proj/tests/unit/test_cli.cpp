#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "alab/io.hpp"
#include "helpers.hpp"

namespace alab {
namespace {

struct Outcome {
  int code = -1;
  std::string output;
};

Outcome run_cli(const std::string& args, const std::string& name) {
  const auto dir = test::temp_dir("cli-" + name);
  const auto log = dir / "out.txt";
  const std::string cmd = std::string(ALAB_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  o.output.assign(std::istreambuf_iterator<char>(in), {});
  return o;
}

TEST(Cli, NoArgumentsIsAUsageError) {
  const Outcome o = run_cli("", "none");
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.output.find("gen-family"), std::string::npos) << o.output;
}

TEST(Cli, UnknownSubcommandIsAUsageError) { EXPECT_EQ(run_cli("frobnicate", "unknown").code, 2); }

TEST(Cli, MissingConfigNamesThePath) {
  const Outcome o = run_cli("pipeline --config /nonexistent/plan.json --out /tmp/alab-unit-cli-x", "missing");
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.output.find("/nonexistent/plan.json"), std::string::npos) << o.output;
}

TEST(Cli, GenFamilyWritesAManifest) {
  const auto dir = test::temp_dir("cli-family");
  const Outcome o = run_cli("gen-family --n 100 --eq 50 --ineq 50 --seed 3 --out " + (dir / "fam.json").string(),
                            "genfam");
  ASSERT_EQ(o.code, 0) << o.output;
  const io::json m = io::read_json(dir / "fam.json");
  EXPECT_EQ(m.at("format"), "pf-v1");
  EXPECT_EQ(m.at("dims").at("n"), 100);
}

TEST(Cli, VersionFlag) {
  const Outcome o = run_cli("--version", "version");
  EXPECT_EQ(o.code, 0);
  EXPECT_NE(o.output.find("0.1.0"), std::string::npos) << o.output;
}

}  // namespace
}  // namespace alab
