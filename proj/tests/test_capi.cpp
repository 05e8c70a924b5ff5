// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

// Exercises the library only through its C interface.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "trpts/trpts.h"

namespace {

namespace fs = std::filesystem;

const char* kConfig = TRPTS_TINY_CONFIG;

struct Context {
  trpts_context* ctx = nullptr;
  explicit Context(const char* path = kConfig) { EXPECT_EQ(trpts_context_create(path, &ctx), TRPTS_OK); }
  ~Context() { trpts_context_destroy(ctx); }
  operator trpts_context*() const { return ctx; }
};

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("trpts_capi_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Relative path -> contents of every file below root.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

const std::vector<std::string> kStages = {"gen-data", "pretrain", "score",    "select", "plan",
                                          "finetune", "eval",     "report"};

TEST(CApi, VersionAndStatusNames) {
  EXPECT_STRNE(trpts_version(), "");
  EXPECT_STREQ(trpts_status_name(TRPTS_ERR_CONFIG), "configuration error");
  EXPECT_STREQ(trpts_last_error(), "");
}

TEST(CApi, ContextSetGetAndHash) {
  Context c;
  char hash[17], other[17];
  ASSERT_EQ(trpts_context_config_hash(c, hash), TRPTS_OK);
  EXPECT_EQ(std::string(hash).size(), 16u);
  ASSERT_EQ(trpts_context_set(c, "select.top_m", "7.5"), TRPTS_OK);
  ASSERT_EQ(trpts_context_config_hash(c, other), TRPTS_OK);
  EXPECT_STRNE(hash, other);
  size_t needed = 0;
  char small[2];
  ASSERT_EQ(trpts_context_get(c, "select.top_m", small, sizeof small, &needed), TRPTS_OK);
  EXPECT_STREQ(small, "7");
  EXPECT_EQ(needed, 4u);
  std::vector<char> buf(needed);
  ASSERT_EQ(trpts_context_get(c, "select.top_m", buf.data(), buf.size(), &needed), TRPTS_OK);
  EXPECT_STREQ(buf.data(), "7.5");
  EXPECT_EQ(trpts_context_set(c, "select.bogus", "1"), TRPTS_ERR_CONFIG);
  EXPECT_NE(std::string(trpts_last_error()).find("select.bogus"), std::string::npos);
  EXPECT_EQ(trpts_context_set(nullptr, "select.top_m", "1"), TRPTS_ERR_USAGE);
}

TEST(CApi, MissingOrInvalidConfig) {
  trpts_context* ctx = nullptr;
  EXPECT_EQ(trpts_context_create("/nonexistent/trpts.ini", &ctx), TRPTS_ERR_CONFIG);
  EXPECT_EQ(ctx, nullptr);
  ASSERT_EQ(trpts_context_create(nullptr, &ctx), TRPTS_OK);
  trpts_context_destroy(ctx);
}

TEST(CApi, StagesMatchPipelineAndAreDeterministic) {
  const auto staged = scratch("staged"), whole = scratch("whole");
  {
    Context c;
    std::vector<std::string> lines;
    trpts_context_set_logger(
        c, [](const char* m, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(m); }, &lines);
    for (const auto& s : kStages) ASSERT_EQ(trpts_run_stage(c, s.c_str(), staged.c_str(), 0), TRPTS_OK) << s;
    EXPECT_FALSE(lines.empty());
  }
  {
    Context c;
    ASSERT_EQ(trpts_run_pipeline(c, whole.c_str(), 0), TRPTS_OK) << trpts_last_error();
  }
  const auto a = tree(staged), b = tree(whole);
  EXPECT_EQ(a.size(), b.size());
  for (const auto& [name, content] : a) {
    ASSERT_TRUE(b.count(name)) << name;
    EXPECT_EQ(content, b.at(name)) << name;
  }
  for (const char* f : {"data/manifest.json", "pretrain/checkpoint.trpt", "score/fisher.trpt", "select/mask.trpt",
                        "plan/plan.json", "finetune/checkpoint.trpt", "eval/eval.json", "report/experiment.json",
                        "report/overlap.csv", "report/flops.json"}) {
    EXPECT_TRUE(a.count(f)) << f;
  }
  fs::remove_all(whole);

  // Existing stage output is kept unless forced.
  Context c;
  const auto before = slurp(staged / "select" / "selection.json");
  EXPECT_EQ(trpts_run_stage(c, "select", staged.c_str(), 0), TRPTS_ERR_USAGE);
  EXPECT_NE(std::string(trpts_last_error()).find("--force"), std::string::npos);
  // A forced rerun touches only its own directory.
  ASSERT_EQ(trpts_context_set(c, "select.top_m", "20"), TRPTS_OK);
  ASSERT_EQ(trpts_run_stage(c, "select", staged.c_str(), 1), TRPTS_OK);
  const auto after = tree(staged);
  EXPECT_NE(slurp(staged / "select" / "selection.json"), before);
  for (const auto& [name, content] : a) {
    if (name.rfind("select/", 0) != 0) EXPECT_EQ(after.at(name), content) << name;
  }
  EXPECT_EQ(trpts_run_stage(c, "no-such-stage", staged.c_str(), 1), TRPTS_ERR_USAGE);
  fs::remove_all(staged);
}

TEST(CApi, StageWithoutInputsIsIoError) {
  const auto dir = scratch("empty");
  Context c;
  EXPECT_EQ(trpts_run_stage(c, "score", dir.c_str(), 0), TRPTS_ERR_IO);
  EXPECT_NE(std::string(trpts_last_error()).find("pretrain"), std::string::npos);
  fs::remove_all(dir);
}

TEST(CApi, ModelLoadPredictEvaluate) {
  const auto dir = scratch("model");
  Context c;
  for (const char* s : {"gen-data", "pretrain"}) ASSERT_EQ(trpts_run_stage(c, s, dir.c_str(), 0), TRPTS_OK);
  trpts_model* model = nullptr;
  ASSERT_EQ(trpts_model_load((dir / "pretrain" / "checkpoint.trpt").c_str(), &model), TRPTS_OK);
  int64_t n = 0;
  int32_t k = 0;
  ASSERT_EQ(trpts_model_num_parameters(model, &n), TRPTS_OK);
  ASSERT_EQ(trpts_model_num_classes(model, &k), TRPTS_OK);
  EXPECT_GT(n, 0);
  EXPECT_EQ(k, 4);
  std::vector<float> images(2 * 16 * 16, 0.5f);
  int64_t labels[2] = {-1, -1};
  ASSERT_EQ(trpts_model_predict(model, images.data(), 2, labels), TRPTS_OK);
  EXPECT_EQ(labels[0], labels[1]);
  EXPECT_GE(labels[0], 0);
  EXPECT_LT(labels[0], 4);
  double acc = -1;
  ASSERT_EQ(trpts_model_evaluate(model, (dir / "data" / "shape-class" / "val.trpt").c_str(), nullptr, &acc),
            TRPTS_OK);
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
  EXPECT_EQ(trpts_model_predict(model, images.data(), 0, labels), TRPTS_ERR_USAGE);
  EXPECT_EQ(trpts_model_evaluate(model, "/nonexistent.trpt", nullptr, &acc), TRPTS_ERR_IO);
  trpts_model_destroy(model);
  EXPECT_EQ(trpts_model_load("/nonexistent.trpt", &model), TRPTS_ERR_IO);
  fs::remove_all(dir);
}

}  // namespace
