// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

// trpts command-line driver. Every subcommand runs one pipeline stage inside
// the experiment directory given by --out.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "trpts/trpts.h"

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "INI configuration file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Master seed (overrides run.seed)");
  cmd->add_option("--out", c.out, "Experiment directory")->required();
  cmd->add_flag("--force", c.force, "Overwrite existing stage outputs");
  cmd->add_flag("--quiet", c.quiet, "Suppress progress messages");
}

void log_to_stderr(const char* message, void*) { std::fprintf(stderr, "trpts: %s\n", message); }

int fail(trpts_status status) {
  std::fprintf(stderr, "trpts: %s: %s\n", trpts_status_name(status), trpts_last_error());
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-relevant parameter and token selection for ViT fine-tuning"};
  app.set_version_flag("--version", std::string(trpts_version()));
  app.require_subcommand(1);

  Common common;
  // Numeric overrides stay textual so the configuration parser sees them verbatim.
  std::optional<std::string> top_m, c_min, rho, mode, layers;

  const std::vector<std::pair<std::string, std::string>> commands = {
      {"gen-data", "Render the synthetic datasets"},
      {"pretrain", "Train the backbone on task A"},
      {"score", "Estimate Fisher scores on the downstream tasks"},
      {"select", "Select task-relevant parameters"},
      {"plan", "Place token refinement layers"},
      {"finetune", "Masked fine-tuning on task B"},
      {"eval", "Evaluate the fine-tuned model"},
      {"report", "Write FLOPs, distribution, overlap and token reports"},
      {"ablate", "Run the component and placement ablations"},
      {"run", "Run gen-data through report in one go"},
  };
  for (const auto& [name, help] : commands) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, common);
    if (name == "select") {
      cmd->add_option("--top-m", top_m, "Top-M percent of scoped parameters")->check(CLI::Number);
      cmd->add_option("--c-min", c_min, "Connections per neuron in the least important layer")
          ->check(CLI::PositiveNumber);
    }
    if (name == "plan") {
      cmd->add_option("--rho", rho, "Token select rate in (0,1]")->check(CLI::Number);
      cmd->add_option("--mode", mode, "Placement mode")
          ->check(CLI::IsMember({"sparse", "dense", "random", "explicit"}));
      cmd->add_option("--layers", layers, "Comma-separated refining layers (explicit mode)");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(TRPTS_ERR_USAGE);
  }
  const std::string stage = app.get_subcommands().front()->get_name();

  trpts_context* ctx = nullptr;
  if (auto s = trpts_context_create(common.config.empty() ? nullptr : common.config.c_str(), &ctx); s != TRPTS_OK) {
    return fail(s);
  }
  std::vector<std::pair<std::string, std::string>> overrides;
  if (common.seed) overrides.emplace_back("run.seed", std::to_string(*common.seed));
  if (top_m) overrides.emplace_back("select.top_m", *top_m);
  if (c_min) overrides.emplace_back("select.c_min", *c_min);
  if (rho) overrides.emplace_back("plan.rho", *rho);
  if (mode) overrides.emplace_back("plan.mode", *mode);
  if (layers) overrides.emplace_back("plan.layers", *layers);

  trpts_status status = TRPTS_OK;
  for (const auto& [key, value] : overrides) {
    status = trpts_context_set(ctx, key.c_str(), value.c_str());
    if (status != TRPTS_OK) break;
  }
  if (status == TRPTS_OK && !common.quiet) status = trpts_context_set_logger(ctx, log_to_stderr, nullptr);
  if (status == TRPTS_OK) {
    status = stage == "run" ? trpts_run_pipeline(ctx, common.out.c_str(), common.force)
                            : trpts_run_stage(ctx, stage.c_str(), common.out.c_str(), common.force);
  }
  trpts_context_destroy(ctx);
  return status == TRPTS_OK ? 0 : fail(status);
}
