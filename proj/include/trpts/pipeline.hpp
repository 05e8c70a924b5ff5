// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end experiment stages. Every stage reads its inputs from and writes
// its outputs to one experiment directory:
//
//   data/manifest.json, data/<task>/<split>.trpt
//   pretrain/checkpoint.trpt, metrics.csv, summary.json
//   score/fisher.trpt, fisher_compare.trpt, summary.json
//   select/mask.trpt, mask_compare.trpt, selection.json
//   plan/plan.json
//   finetune/checkpoint.trpt, metrics.csv
//   eval/eval.json
//   report/experiment.json, flops.{json,csv}, layer_distribution.{json,csv},
//          overlap.{json,csv}, kept_tokens.json
//   ablate/table4.{csv,json}, table5.{csv,json}, runs.json
//
// A stage refuses to overwrite its own directory unless forced.

#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

#include "trpts/analysis.hpp"
#include "trpts/config.hpp"

namespace trpts {

/// Process-wide allocator tuning for the large short-lived buffers of the
/// autodiff engine. Safe to call more than once.
void configure_runtime();

using Logger = std::function<void(const std::string&)>;

struct StageContext {
  RunConfig config;
  std::filesystem::path out;
  bool force = false;
  Logger log;
};

void stage_gen_data(const StageContext& ctx);
void stage_pretrain(const StageContext& ctx);
void stage_score(const StageContext& ctx);
void stage_select(const StageContext& ctx);
void stage_plan(const StageContext& ctx);
void stage_finetune(const StageContext& ctx);
void stage_eval(const StageContext& ctx);
ExperimentReport stage_report(const StageContext& ctx);
void stage_ablate(const StageContext& ctx);

/// gen-data through report in order.
ExperimentReport run_pipeline(const StageContext& ctx);

/// Stage names in pipeline order, and dispatch by name.
const std::vector<std::string>& stage_names();
void run_stage(const std::string& name, const StageContext& ctx);

Dataset load_split(const std::filesystem::path& out, TaskFamily task, const std::string& split);
RefinePlan load_plan(const std::filesystem::path& out);
RefinePlan read_plan_file(const std::filesystem::path& path);

}  // namespace trpts
