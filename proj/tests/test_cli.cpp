// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

namespace {

namespace fs = std::filesystem;

int run(const std::string& args) {
  const std::string cmd = std::string(TRPTS_CLI) + " " + args + " --quiet >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("trpts_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// The tiny configuration with extra lines inserted into one of its sections.
fs::path write_config(const std::string& name, const std::string& section, const std::string& lines) {
  auto text = slurp(TRPTS_TINY_CONFIG);
  const auto header = "[" + section + "]\n";
  const auto at = text.find(header);
  if (at == std::string::npos) {
    text += "\n" + header + lines;
  } else {
    text.insert(at + header.size(), lines);
  }
  const auto path = fs::temp_directory_path() / ("trpts_cli_" + name + ".ini");
  std::ofstream(path) << text;
  return path;
}

const std::string kTiny = std::string("--config ") + TRPTS_TINY_CONFIG;

TEST(Cli, GenDataIsByteIdenticalAcrossRuns) {
  const auto a = scratch("gen_a"), b = scratch("gen_b");
  ASSERT_EQ(run("gen-data " + kTiny + " --out " + a.string()), 0);
  ASSERT_EQ(run("gen-data " + kTiny + " --out " + b.string()), 0);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(b / rel)) << rel;
  }
  const auto c = scratch("gen_c");
  ASSERT_EQ(run("gen-data " + kTiny + " --seed 4 --out " + c.string()), 0);
  EXPECT_NE(slurp(a / "data/shape-class/train.trpt"), slurp(c / "data/shape-class/train.trpt"));
  // refuses to overwrite without --force
  EXPECT_EQ(run("gen-data " + kTiny + " --out " + a.string()), 1);
  EXPECT_EQ(run("gen-data " + kTiny + " --out " + a.string() + " --force"), 0);
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("gen-data"), 1);
  EXPECT_EQ(run("no-such-command --out x"), 1);
  EXPECT_EQ(run("plan " + kTiny + " --out x --mode diagonal"), 1);
}

TEST(Cli, ConfigErrorsExitTwo) {
  const auto dir = scratch("config");
  EXPECT_EQ(run("gen-data --config " + write_config("unknown", "model", "depth = 3\n").string() + " --out " +
                dir.string()),
            2);
  EXPECT_EQ(run("gen-data --config " + write_config("range", "plan", "rho = 0\n").string() + " --out " +
                dir.string()),
            2);
  EXPECT_EQ(run("select " + kTiny + " --top-m 0 --out " + dir.string()), 2);
  fs::remove_all(dir);
}

TEST(Cli, DivergentTrainingExitsThree) {
  const auto dir = scratch("numeric");
  const auto cfg = write_config("diverge", "pretrain", "learning_rate = 1e30\nfinal_learning_rate = 1e30\n");
  ASSERT_EQ(run("gen-data --config " + cfg.string() + " --out " + dir.string()), 0);
  EXPECT_EQ(run("pretrain --config " + cfg.string() + " --out " + dir.string()), 3);
  fs::remove_all(dir);
}

TEST(Cli, MissingUpstreamOutputsExitFive) {
  const auto dir = scratch("io");
  EXPECT_EQ(run("finetune " + kTiny + " --out " + dir.string()), 5);
  fs::remove_all(dir);
}

}  // namespace
