// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include "trpts/pipeline.hpp"

#include <malloc.h>

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "trpts/error.hpp"
#include "trpts/rng.hpp"

namespace trpts {

namespace fs = std::filesystem;
using nlohmann::json;

void configure_runtime() {
  // Keep freed tensor buffers in the heap instead of returning them to the
  // kernel; every step reallocates the same sizes.
  ::mallopt(M_MMAP_THRESHOLD, 1 << 30);
  ::mallopt(M_TRIM_THRESHOLD, -1);
}

namespace {

void note(const StageContext& ctx, const std::string& message) {
  if (ctx.log) ctx.log(message);
}

fs::path prepare_stage_dir(const StageContext& ctx, const std::string& stage) {
  const auto dir = ctx.out / stage;
  if (fs::exists(dir)) {
    if (!ctx.force) {
      throw UsageError("output directory " + dir.string() + " already exists (use --force to overwrite)");
    }
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  return dir;
}

void require_file(const fs::path& path, const std::string& producer) {
  if (!fs::exists(path)) {
    throw IoError("missing " + path.string() + "; run the '" + producer + "' stage first");
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream bytes;
  bytes << in.rdbuf();
  return fnv1a64(bytes.str());
}

std::vector<TaskFamily> downstream_tasks(const RunConfig& c) {
  std::vector<TaskFamily> tasks{c.data.task_b};
  if (c.data.compare_task != c.data.task_b) tasks.push_back(c.data.compare_task);
  return tasks;
}

ViTModel<float> pretrained_model(const StageContext& ctx) {
  const auto path = ctx.out / "pretrain" / "checkpoint.trpt";
  require_file(path, "pretrain");
  auto model = load_checkpoint(path);
  auto expected = ctx.config.model;
  expected.num_classes = model.config().num_classes;
  expected.seed = model.config().seed;
  if (!(model.config() == expected)) {
    throw ConfigError("pretrained checkpoint does not match the [model] configuration");
  }
  return model;
}

/// The downstream head is re-initialized identically for scoring and training.
ViTModel<float> downstream_model(const ViTModel<float>& pretrained, const RunConfig& c) {
  ViTModel<float> model(pretrained);
  model.reset_head(c.data.num_classes, c.run.seed);
  return model;
}

FisherScores load_scores(const StageContext& ctx, const ParamLayout& layout, const std::string& file) {
  const auto path = ctx.out / "score" / file;
  require_file(path, "score");
  return FisherScores::from_pack(TensorPack::read(path), layout);
}

SelectionMask load_mask(const StageContext& ctx, const ParamLayout& layout, const std::string& file) {
  const auto path = ctx.out / "select" / file;
  require_file(path, "select");
  return SelectionMask::from_pack(TensorPack::read(path), layout);
}

json plan_json(const RefinePlan& plan) {
  return {{"layers", plan.layers}, {"rho", plan.rho}, {"mode", to_string(plan.mode)}};
}

RefinePlan make_plan(const RunConfig& c, std::span<const double> w, PlacementMode mode, double rho,
                     std::uint64_t seed) {
  return plan_refining_layers(w, c.plan.num_layers, mode, rho, seed, c.plan.layers);
}

template <typename F>
auto with_stage_name(const std::string& stage, F&& body) -> decltype(body()) {
  const std::string prefix = "stage '" + stage + "': ";
  try {
    return body();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const NumericError& e) {
    throw NumericError(prefix + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(prefix + e.what());
  } catch (const InputError& e) {
    throw InputError(prefix + e.what());
  } catch (const UsageError& e) {
    throw UsageError(prefix + e.what());
  } catch (const IoError& e) {
    throw IoError(prefix + e.what());
  } catch (const fs::filesystem_error& e) {
    throw IoError(prefix + e.what());
  }
}

}  // namespace

Dataset load_split(const fs::path& out, TaskFamily task, const std::string& split) {
  const auto path = out / "data" / to_string(task) / (split + ".trpt");
  require_file(path, "gen-data");
  return Dataset::from_pack(TensorPack::read(path), to_string(task) + "/" + split);
}

RefinePlan load_plan(const fs::path& out) {
  const auto path = out / "plan" / "plan.json";
  require_file(path, "plan");
  return read_plan_file(path);
}

RefinePlan read_plan_file(const fs::path& path) {
  const auto j = read_json(path);
  RefinePlan plan;
  try {
    plan.layers = j.at("layers").get<std::vector<int>>();
    plan.rho = j.at("rho").get<double>();
    plan.mode = parse_placement_mode(j.at("mode").get<std::string>());
  } catch (const json::exception& e) {
    throw InputError("malformed plan file: " + std::string(e.what()));
  }
  return plan;
}

void stage_gen_data(const StageContext& ctx) {
  with_stage_name("gen-data", [&] {
    const auto& c = ctx.config;
    c.validate();
    const auto dir = prepare_stage_dir(ctx, "data");
    json tasks = json::array();
    std::vector<std::pair<TaskFamily, bool>> wanted{{c.data.task_a, true}};
    for (auto t : downstream_tasks(c)) {
      if (t != c.data.task_a) wanted.emplace_back(t, false);
    }
    for (const auto& [family, pretraining] : wanted) {
      const auto spec = c.data.spec(family, pretraining, c.model.image_height, c.run.seed);
      const auto splits = generate_task(spec);
      fs::create_directories(dir / to_string(family));
      json entry = {{"task", to_string(family)}, {"num_classes", spec.num_classes}, {"noise", spec.noise}};
      for (const auto* data : {&splits.train, &splits.val, &splits.test}) {
        const auto split = data->name.substr(data->name.find('/') + 1);
        const auto path = dir / to_string(family) / (split + ".trpt");
        data->to_pack().write(path);
        entry["splits"][split] = {{"file", to_string(family) + "/" + split + ".trpt"},
                                  {"count", data->size()},
                                  {"fnv1a64", hex64(file_hash(path))}};
      }
      tasks.push_back(entry);
      note(ctx, "generated " + to_string(family));
    }
    write_json(dir / "manifest.json", {{"config_hash", c.hash()},
                                       {"seed", c.run.seed},
                                       {"image_size", c.model.image_height},
                                       {"tasks", tasks},
                                       {"config", c.to_map()}});
  });
}

void stage_pretrain(const StageContext& ctx) {
  with_stage_name("pretrain", [&] {
    const auto& c = ctx.config;
    c.validate();
    const auto train = load_split(ctx.out, c.data.task_a, "train");
    const auto val = load_split(ctx.out, c.data.task_a, "val");
    const auto test = load_split(ctx.out, c.data.task_a, "test");
    const auto dir = prepare_stage_dir(ctx, "pretrain");
    auto config = c.model;
    config.num_classes = train.num_classes;
    ViTModel<float> model(config);
    auto result = fine_tune<float>(model, full_mask(model.parameters().layout()), nullptr, train, val, c.pretrain,
                                   [&](const EpochMetrics& m) {
                                     note(ctx, "pretrain epoch " + std::to_string(m.epoch) + " loss " +
                                                   std::to_string(m.train_loss) + " val " +
                                                   std::to_string(m.val_accuracy));
                                   });
    save_checkpoint(model, dir / "checkpoint.trpt");
    write_metrics_csv(dir / "metrics.csv", result.history);
    write_json(dir / "summary.json", {{"config_hash", c.hash()},
                                      {"task", to_string(c.data.task_a)},
                                      {"val_accuracy", result.history.back().val_accuracy},
                                      {"test_accuracy", evaluate<float>(model, nullptr, test)},
                                      {"parameters", model.parameters().total_numel()},
                                      {"config", c.to_map()}});
  });
}

void stage_score(const StageContext& ctx) {
  with_stage_name("score", [&] {
    const auto& c = ctx.config;
    c.validate();
    const auto pretrained = pretrained_model(ctx);
    std::vector<Dataset> train;
    for (auto t : downstream_tasks(c)) train.push_back(load_split(ctx.out, t, "train"));
    const auto dir = prepare_stage_dir(ctx, "score");
    json summary = {{"config_hash", c.hash()}, {"tasks", json::array()}};
    for (std::size_t i = 0; i < train.size(); ++i) {
      auto model = downstream_model(pretrained, c);
      const auto scores = estimate_fim<float>(model, train[i], c.score);
      scores.to_pack().write(dir / (i == 0 ? "fisher.trpt" : "fisher_compare.trpt"));
      summary["tasks"].push_back({{"task", to_string(downstream_tasks(c)[i])},
                                  {"sample_count", scores.sample_count},
                                  {"batch_count", scores.batch_count}});
      note(ctx, "scored " + train[i].name);
    }
    write_json(dir / "summary.json", summary);
  });
}

void stage_select(const StageContext& ctx) {
  with_stage_name("select", [&] {
    const auto& c = ctx.config;
    c.validate();
    const auto layout = downstream_model(pretrained_model(ctx), c).parameters().layout();
    const auto tasks = downstream_tasks(c);
    std::vector<FisherScores> scores{load_scores(ctx, layout, "fisher.trpt")};
    if (tasks.size() > 1) scores.push_back(load_scores(ctx, layout, "fisher_compare.trpt"));
    const auto dir = prepare_stage_dir(ctx, "select");
    json selection;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const auto result = select_parameters(scores[i], c.select, c.model.num_layers);
      result.mask.to_pack().write(dir / (i == 0 ? "mask.trpt" : "mask_compare.trpt"));
      json s = {{"task", to_string(tasks[i])},
                {"selected", result.mask.selected()},
                {"total", result.mask.total()},
                {"trainable_fraction", result.mask.trainable_fraction()},
                {"top_m_size", result.importance.top_m_size},
                {"layer_counts", result.importance.counts},
                {"layer_weights", result.importance.w},
                {"budgets", result.budget.c},
                {"selected_per_layer", result.mask.selected_per_layer(c.model.num_layers)}};
      if (i == 0) {
        selection = s;
        selection["config_hash"] = c.hash();
      } else {
        selection["compare"] = s;
      }
      note(ctx, "selected " + std::to_string(result.mask.selected()) + " of " +
                    std::to_string(result.mask.total()) + " parameters for " + to_string(tasks[i]));
    }
    write_json(dir / "selection.json", selection);
  });
}

void stage_plan(const StageContext& ctx) {
  with_stage_name("plan", [&] {
    const auto& c = ctx.config;
    c.validate();
    const auto selection_path = ctx.out / "select" / "selection.json";
    require_file(selection_path, "select");
    const auto w = read_json(selection_path).at("layer_weights").get<std::vector<double>>();
    if (static_cast<int>(w.size()) != c.model.num_layers) {
      throw InputError("selection has " + std::to_string(w.size()) + " layer weights for a " +
                       std::to_string(c.model.num_layers) + "-layer model");
    }
    const auto plan = make_plan(c, w, c.plan.mode, c.plan.rho, c.run.seed);
    const auto dir = prepare_stage_dir(ctx, "plan");
    auto j = plan_json(plan);
    j["config_hash"] = c.hash();
    write_json(dir / "plan.json", j);
  });
}

void stage_finetune(const StageContext& ctx) {
  with_stage_name("finetune", [&] {
    const auto& c = ctx.config;
    c.validate();
    auto model = downstream_model(pretrained_model(ctx), c);
    const auto mask = load_mask(ctx, model.parameters().layout(), "mask.trpt");
    const auto plan = load_plan(ctx.out);
    const auto train = load_split(ctx.out, c.data.task_b, "train");
    const auto val = load_split(ctx.out, c.data.task_b, "val");
    const auto dir = prepare_stage_dir(ctx, "finetune");
    const auto result = fine_tune<float>(model, mask, &plan, train, val, c.finetune, [&](const EpochMetrics& m) {
      note(ctx, "finetune epoch " + std::to_string(m.epoch) + " loss " + std::to_string(m.train_loss) +
                    " val " + std::to_string(m.val_accuracy));
    });
    save_checkpoint(model, dir / "checkpoint.trpt");
    write_metrics_csv(dir / "metrics.csv", result.history);
  });
}

void stage_eval(const StageContext& ctx) {
  with_stage_name("eval", [&] {
    const auto& c = ctx.config;
    c.validate();
    const auto path = ctx.out / "finetune" / "checkpoint.trpt";
    require_file(path, "finetune");
    const auto model = load_checkpoint(path);
    const auto plan = load_plan(ctx.out);
    const auto val = load_split(ctx.out, c.data.task_b, "val");
    const auto test = load_split(ctx.out, c.data.task_b, "test");
    const auto dir = prepare_stage_dir(ctx, "eval");
    write_json(dir / "eval.json", {{"config_hash", c.hash()},
                                   {"task", to_string(c.data.task_b)},
                                   {"val_accuracy", evaluate<float>(model, &plan, val)},
                                   {"test_accuracy", evaluate<float>(model, &plan, test)}});
  });
}

ExperimentReport stage_report(const StageContext& ctx) {
  return with_stage_name("report", [&] {
    const auto& c = ctx.config;
    c.validate();
    const auto eval_path = ctx.out / "eval" / "eval.json";
    require_file(eval_path, "eval");
    const auto eval = read_json(eval_path);
    const auto selection = read_json(ctx.out / "select" / "selection.json");
    const auto plan = load_plan(ctx.out);
    const auto model = downstream_model(pretrained_model(ctx), c);
    const auto layout = model.parameters().layout();
    const auto tasks = downstream_tasks(c);

    std::vector<SelectionMask> masks{load_mask(ctx, layout, "mask.trpt")};
    std::vector<FisherScores> scores{load_scores(ctx, layout, "fisher.trpt")};
    if (tasks.size() > 1) {
      masks.push_back(load_mask(ctx, layout, "mask_compare.trpt"));
      scores.push_back(load_scores(ctx, layout, "fisher_compare.trpt"));
    }
    const auto finetuned = load_checkpoint(ctx.out / "finetune" / "checkpoint.trpt");
    const auto test = load_split(ctx.out, c.data.task_b, "test");
    const auto dir = prepare_stage_dir(ctx, "report");

    ExperimentReport report;
    report.name = "tr-pts";
    report.task = to_string(c.data.task_b);
    report.seed = c.run.seed;
    report.config_hash = c.hash();
    report.accuracy = eval.at("test_accuracy").get<double>();
    report.val_accuracy = eval.at("val_accuracy").get<double>();
    report.selected = masks[0].selected();
    report.total = masks[0].total();
    report.trainable_fraction = masks[0].trainable_fraction();
    report.layer_weights = selection.at("layer_weights").get<std::vector<double>>();
    report.budgets = selection.at("budgets").get<std::vector<std::int64_t>>();
    report.plan = plan;
    report.flops = flops_report(finetuned.config(), &plan);
    auto experiment = report.to_json();
    experiment["config"] = c.to_map();
    write_json(dir / "experiment.json", experiment);

    write_json(dir / "flops.json", report.flops.to_json());
    std::ostringstream flops_csv;
    flops_csv << "layer,tokens,attention_flops,mlp_flops\n";
    for (const auto& l : report.flops.layers) {
      flops_csv << l.layer << ',' << l.tokens << ',' << l.attention << ',' << l.mlp << '\n';
    }
    write_text(dir / "flops.csv", flops_csv.str());

    json dist_json = json::array();
    std::ostringstream dist_csv;
    dist_csv << "task,block,count,fraction\n";
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const auto top = top_m_set(scores[i], c.select);
      const auto dist = layer_distribution(top, layout, c.model.num_layers);
      labels.push_back(to_string(tasks[i]));
      auto j = dist.to_json();
      j["task"] = labels.back();
      dist_json.push_back(j);
      for (std::size_t l = 0; l < dist.counts.size(); ++l) {
        dist_csv << labels.back() << ',' << l << ',' << dist.counts[l] << ',' << dist.fractions[l] << '\n';
      }
      dist_csv << labels.back() << ",non-block," << dist.non_block_count << ',' << dist.non_block_fraction << '\n';
    }
    write_json(dir / "layer_distribution.json", dist_json);
    write_text(dir / "layer_distribution.csv", dist_csv.str());

    if (masks.size() >= 2) {
      const auto overlap = overlap_matrix(masks);
      write_json(dir / "overlap.json", {{"tasks", labels}, {"matrix", overlap}});
      write_text(dir / "overlap.csv", matrix_to_csv(labels, overlap));
    }

    // Kept-token maps of the first test images.
    const std::int64_t shown = std::min<std::int64_t>(8, test.size());
    std::vector<std::int64_t> first(static_cast<std::size_t>(shown));
    for (std::int64_t i = 0; i < shown; ++i) first[i] = i;
    const auto batch = make_batch(test, first);
    ForwardOptions options;
    options.record_refinements = true;
    NoGradGuard no_grad;
    const auto trace = finetuned.forward(batch.images, batch.size(), &plan, options);
    json kept = json::array();
    for (std::int64_t i = 0; i < shown; ++i) {
      json layers = json::array();
      for (const auto& r : trace.refinements[static_cast<std::size_t>(i)]) {
        layers.push_back({{"layer", r.layer},
                          {"kept_patch_indices", r.kept_patch_indices},
                          {"merged_from_indices", r.merged_from_indices}});
      }
      kept.push_back({{"sample", i}, {"label", batch.labels[static_cast<std::size_t>(i)]}, {"refinements", layers}});
    }
    write_json(dir / "kept_tokens.json", {{"config_hash", c.hash()}, {"samples", kept}});
    return report;
  });
}

namespace {

struct VariantKey {
  bool param = false;
  std::optional<RefinePlan> plan;
  std::string key() const {
    std::string k = param ? "param" : "head";
    if (plan) {
      k += "|" + to_string(plan->mode) + "|" + std::to_string(plan->rho) + "|";
      for (int l : plan->layers) k += std::to_string(l) + ",";
    }
    return k;
  }
};

}  // namespace

void stage_ablate(const StageContext& ctx) {
  with_stage_name("ablate", [&] {
    const auto& base = ctx.config;
    base.validate();
    const auto pretrained = pretrained_model(ctx);
    const auto dir = prepare_stage_dir(ctx, "ablate");

    std::vector<AblationEntry> components(4), placement;
    for (int cell = 0; cell < 4; ++cell) {
      components[cell].token_selection = cell & 1;
      components[cell].param_selection = cell & 2;
    }
    const PlacementMode modes[] = {PlacementMode::kDense, PlacementMode::kRandom, PlacementMode::kSparse};
    for (auto mode : modes) {
      for (double rho : {0.95, 0.8}) {
        AblationEntry e;
        e.token_selection = e.param_selection = true;
        e.placement = mode;
        e.rho = rho;
        placement.push_back(e);
      }
    }

    json runs = json::array();
    for (auto seed : base.run.ablation_seeds) {
      auto c = base;
      c.set("run.seed", std::to_string(seed));
      c.finetune.evaluate_every_epoch = false;
      const auto splits = generate_task(c.data.spec(c.data.task_b, false, c.model.image_height, seed));
      auto scoring = downstream_model(pretrained, c);
      const auto scores = estimate_fim<float>(scoring, splits.train, c.score);
      const auto selection = select_parameters(scores, c.select, c.model.num_layers);
      const auto layout = scoring.parameters().layout();
      const auto head_mask = pattern_mask(layout, c.select.always_trainable);
      const auto& w = selection.importance.w;

      std::map<std::string, std::pair<double, double>> cache;  // key -> (val, test)
      auto run = [&](const VariantKey& v, const std::string& label) {
        const auto key = v.key();
        if (auto it = cache.find(key); it != cache.end()) return it->second;
        auto model = downstream_model(pretrained, c);
        const RefinePlan* plan = v.plan ? &*v.plan : nullptr;
        const auto& mask = v.param ? selection.mask : head_mask;
        fine_tune<float>(model, mask, plan, splits.train, splits.val, c.finetune);
        const std::pair<double, double> acc{evaluate<float>(model, plan, splits.val),
                                            evaluate<float>(model, plan, splits.test)};
        runs.push_back({{"seed", seed},
                        {"variant", label},
                        {"param_selection", v.param},
                        {"plan", v.plan ? plan_json(*v.plan) : json(nullptr)},
                        {"trainable_fraction", mask.trainable_fraction()},
                        {"val_accuracy", acc.first},
                        {"test_accuracy", acc.second}});
        note(ctx, "ablate seed " + std::to_string(seed) + " " + label + " val " + std::to_string(acc.first));
        cache.emplace(key, acc);
        return acc;
      };
      auto record = [&](AblationEntry& e, const VariantKey& v, const std::string& label) {
        const auto acc = run(v, label);
        e.accuracies.push_back(acc.first);
        e.trainable_fraction = (v.param ? selection.mask : head_mask).trainable_fraction();
        e.flops_reduction = v.plan ? flops_report(c.model, &*v.plan).reduction : 0.0;
      };

      const auto main_plan = make_plan(c, w, c.plan.mode, c.plan.rho, seed);
      for (int cell = 0; cell < 4; ++cell) {
        VariantKey v{(cell & 2) != 0, (cell & 1) ? std::optional<RefinePlan>(main_plan) : std::nullopt};
        record(components[cell], v, ablation_table({}, AblationKind::kComponents).rows[cell].configuration);
      }
      for (auto& e : placement) {
        VariantKey v{true, make_plan(c, w, e.placement, e.rho, seed)};
        std::ostringstream rho;
        rho << e.rho;
        record(e, v, to_string(e.placement) + "@" + rho.str());
      }
    }

    const auto table4 = ablation_table(components, AblationKind::kComponents);
    const auto table5 = ablation_table(placement, AblationKind::kPlacement);
    write_text(dir / "table4.csv", table4.to_csv());
    write_text(dir / "table5.csv", table5.to_csv());
    auto j4 = table4.to_json(), j5 = table5.to_json();
    j4["config_hash"] = j5["config_hash"] = base.hash();
    j4["config"] = j5["config"] = base.to_map();
    write_json(dir / "table4.json", j4);
    write_json(dir / "table5.json", j5);
    write_json(dir / "runs.json", {{"config_hash", base.hash()}, {"runs", runs}});
  });
}

ExperimentReport run_pipeline(const StageContext& ctx) {
  stage_gen_data(ctx);
  stage_pretrain(ctx);
  stage_score(ctx);
  stage_select(ctx);
  stage_plan(ctx);
  stage_finetune(ctx);
  stage_eval(ctx);
  return stage_report(ctx);
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names = {"gen-data", "pretrain", "score", "select", "plan",
                                                 "finetune", "eval",     "report", "ablate"};
  return names;
}

void run_stage(const std::string& name, const StageContext& ctx) {
  if (name == "gen-data") return stage_gen_data(ctx);
  if (name == "pretrain") return stage_pretrain(ctx);
  if (name == "score") return stage_score(ctx);
  if (name == "select") return stage_select(ctx);
  if (name == "plan") return stage_plan(ctx);
  if (name == "finetune") return stage_finetune(ctx);
  if (name == "eval") return stage_eval(ctx);
  if (name == "report") {
    stage_report(ctx);
    return;
  }
  if (name == "ablate") return stage_ablate(ctx);
  throw UsageError("unknown stage '" + name + "'");
}

}  // namespace trpts
