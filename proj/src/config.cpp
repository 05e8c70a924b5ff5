// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include "trpts/config.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "trpts/error.hpp"
#include "trpts/rng.hpp"

namespace trpts {

SyntheticTaskSpec DataSettings::spec(TaskFamily family, bool pretraining, int image_size,
                                     std::uint64_t seed) const {
  SyntheticTaskSpec s;
  s.family = family;
  s.image_size = image_size;
  s.num_classes = num_classes;
  s.noise = noise;
  s.seed = seed;
  s.train_size = pretraining ? pretrain_train : finetune_train;
  s.val_size = pretraining ? pretrain_val : finetune_val;
  s.test_size = pretraining ? pretrain_test : finetune_test;
  return s;
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, end);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  const auto trimmed = boost::algorithm::trim_copy(text);
  T value{};
  auto [end, ec] = std::from_chars(trimmed.data(), trimmed.data() + trimmed.size(), value);
  if (ec != std::errc() || end != trimmed.data() + trimmed.size() || trimmed.empty()) {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const auto t = boost::algorithm::to_lower_copy(boost::algorithm::trim_copy(text));
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError("invalid boolean '" + text + "' for " + key);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  const auto trimmed = boost::algorithm::trim_copy(text);
  if (trimmed.empty()) return out;
  boost::algorithm::split(out, trimmed, boost::algorithm::is_any_of(","));
  for (auto& s : out) boost::algorithm::trim(s);
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split_list(text)) out.push_back(parse_number<T>(key, item));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_same_v<T, std::string>) {
      out += values[i];
    } else {
      out += std::to_string(values[i]);
    }
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T, typename Owner>
Field int_field(std::string key, Owner RunConfig::*section, T Owner::*member) {
  return {key, [=](const RunConfig& c) { return std::to_string(c.*section.*member); },
          [=](RunConfig& c, const std::string& v) { c.*section.*member = parse_number<T>(key, v); }};
}

template <typename Owner>
Field double_field(std::string key, Owner RunConfig::*section, double Owner::*member) {
  return {key, [=](const RunConfig& c) { return format_double(c.*section.*member); },
          [=](RunConfig& c, const std::string& v) { c.*section.*member = parse_number<double>(key, v); }};
}

void add_train_fields(std::vector<Field>& f, const std::string& s, TrainConfig RunConfig::*section) {
  f.push_back(double_field(s + ".learning_rate", section, &TrainConfig::learning_rate));
  f.push_back(double_field(s + ".final_learning_rate", section, &TrainConfig::final_learning_rate));
  f.push_back(int_field(s + ".warmup_steps", section, &TrainConfig::warmup_steps));
  f.push_back(int_field(s + ".epochs", section, &TrainConfig::epochs));
  f.push_back(int_field(s + ".batch_size", section, &TrainConfig::batch_size));
  f.push_back({s + ".optimizer", [=](const RunConfig& c) { return to_string((c.*section).optimizer); },
               [=](RunConfig& c, const std::string& v) {
                 (c.*section).optimizer = parse_optimizer(boost::algorithm::trim_copy(v));
               }});
  f.push_back(double_field(s + ".beta1", section, &TrainConfig::beta1));
  f.push_back(double_field(s + ".beta2", section, &TrainConfig::beta2));
  f.push_back(double_field(s + ".epsilon", section, &TrainConfig::epsilon));
  f.push_back(double_field(s + ".weight_decay", section, &TrainConfig::weight_decay));
}

Field task_field(std::string key, TaskFamily DataSettings::*member) {
  return {key, [=](const RunConfig& c) { return to_string(c.data.*member); },
          [=](RunConfig& c, const std::string& v) {
            c.data.*member = parse_task_family(boost::algorithm::trim_copy(v));
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"model.image_size", [](const RunConfig& c) { return std::to_string(c.model.image_height); },
                 [](RunConfig& c, const std::string& v) {
                   c.model.image_height = c.model.image_width = parse_number<int>("model.image_size", v);
                 }});
    f.push_back(int_field("model.channels", &RunConfig::model, &ModelConfig::channels));
    f.push_back(int_field("model.patch_size", &RunConfig::model, &ModelConfig::patch_size));
    f.push_back(int_field("model.embed_dim", &RunConfig::model, &ModelConfig::embed_dim));
    f.push_back(int_field("model.num_layers", &RunConfig::model, &ModelConfig::num_layers));
    f.push_back(int_field("model.num_heads", &RunConfig::model, &ModelConfig::num_heads));
    f.push_back(int_field("model.mlp_ratio", &RunConfig::model, &ModelConfig::mlp_ratio));

    f.push_back(task_field("data.task_a", &DataSettings::task_a));
    f.push_back(task_field("data.task_b", &DataSettings::task_b));
    f.push_back(task_field("data.compare_task", &DataSettings::compare_task));
    f.push_back(int_field("data.num_classes", &RunConfig::data, &DataSettings::num_classes));
    f.push_back(double_field("data.noise", &RunConfig::data, &DataSettings::noise));
    f.push_back(int_field("data.pretrain_train", &RunConfig::data, &DataSettings::pretrain_train));
    f.push_back(int_field("data.pretrain_val", &RunConfig::data, &DataSettings::pretrain_val));
    f.push_back(int_field("data.pretrain_test", &RunConfig::data, &DataSettings::pretrain_test));
    f.push_back(int_field("data.finetune_train", &RunConfig::data, &DataSettings::finetune_train));
    f.push_back(int_field("data.finetune_val", &RunConfig::data, &DataSettings::finetune_val));
    f.push_back(int_field("data.finetune_test", &RunConfig::data, &DataSettings::finetune_test));

    add_train_fields(f, "pretrain", &RunConfig::pretrain);

    f.push_back(int_field("score.num_batches", &RunConfig::score, &FimOptions::num_batches));
    f.push_back(int_field("score.batch_size", &RunConfig::score, &FimOptions::batch_size));
    f.push_back({"score.with_replacement",
                 [](const RunConfig& c) { return std::string(c.score.with_replacement ? "true" : "false"); },
                 [](RunConfig& c, const std::string& v) {
                   c.score.with_replacement = parse_bool("score.with_replacement", v);
                 }});

    f.push_back(double_field("select.top_m", &RunConfig::select, &SelectorConfig::top_m_percent));
    f.push_back(int_field("select.c_min", &RunConfig::select, &SelectorConfig::c_min));
    f.push_back({"select.scope", [](const RunConfig& c) { return join(c.select.scope); },
                 [](RunConfig& c, const std::string& v) { c.select.scope = split_list(v); }});
    f.push_back({"select.always_trainable", [](const RunConfig& c) { return join(c.select.always_trainable); },
                 [](RunConfig& c, const std::string& v) { c.select.always_trainable = split_list(v); }});

    f.push_back(double_field("plan.rho", &RunConfig::plan, &PlanSettings::rho));
    f.push_back({"plan.mode", [](const RunConfig& c) { return to_string(c.plan.mode); },
                 [](RunConfig& c, const std::string& v) {
                   c.plan.mode = parse_placement_mode(boost::algorithm::trim_copy(v));
                 }});
    f.push_back(int_field("plan.num_layers", &RunConfig::plan, &PlanSettings::num_layers));
    f.push_back({"plan.layers", [](const RunConfig& c) { return join(c.plan.layers); },
                 [](RunConfig& c, const std::string& v) { c.plan.layers = parse_list<int>("plan.layers", v); }});

    add_train_fields(f, "finetune", &RunConfig::finetune);

    f.push_back(int_field("run.seed", &RunConfig::run, &RunSettings::seed));
    f.push_back({"run.ablation_seeds", [](const RunConfig& c) { return join(c.run.ablation_seeds); },
                 [](RunConfig& c, const std::string& v) {
                   c.run.ablation_seeds = parse_list<std::uint64_t>("run.ablation_seeds", v);
                 }});
    return f;
  }();
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

}  // namespace

RunConfig::RunConfig() {
  pretrain.learning_rate = 1e-3;
  pretrain.final_learning_rate = 1e-5;
  pretrain.warmup_steps = 200;
  pretrain.epochs = 20;
  pretrain.batching_stream = "batching/pretrain";
  finetune.learning_rate = 3e-3;
  finetune.final_learning_rate = 1e-5;
  finetune.epochs = 10;
  finetune.batching_stream = "batching/finetune";
  finalize();
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.push_back(f.key);
    return out;
  }();
  return names;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  field(key).set(*this, value);
  finalize();
}

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto& f : fields()) out[f.key] = f.get(*this);
  return out;
}

std::string RunConfig::dump() const {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const auto s = f.key.substr(0, dot);
    if (s != section) {
      out << (section.empty() ? "" : "\n") << '[' << s << "]\n";
      section = s;
    }
    out << f.key.substr(dot + 1) << " = " << f.get(*this) << '\n';
  }
  return out.str();
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(dump())));
  return buf;
}

RunConfig RunConfig::parse(const std::string& ini_text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(ini_text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("malformed configuration: ") + e.what());
  }
  RunConfig config;
  for (const auto& [section, entries] : tree) {
    if (entries.empty() && !entries.data().empty()) {
      throw ConfigError("configuration key '" + section + "' is outside any section");
    }
    for (const auto& [key, value] : entries) field(section + "." + key).set(config, value.data());
  }
  config.finalize();
  return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read configuration file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

void RunConfig::finalize() {
  model.num_classes = data.num_classes;
  model.seed = run.seed;
  pretrain.seed = run.seed;
  finetune.seed = run.seed;
  score.seed = run.seed;
}

void RunConfig::validate() const {
  model.validate();
  pretrain.validate();
  finetune.validate();
  select.validate();
  if (score.batch_size < 1) throw ConfigError("score.batch_size must be at least 1");
  if (score.num_batches < 0) throw ConfigError("score.num_batches must be non-negative");
  if (!(plan.rho > 0.0 && plan.rho <= 1.0)) throw ConfigError("plan.rho must lie in (0,1]");
  if (plan.num_layers < 0 || plan.num_layers >= model.num_layers) {
    throw ConfigError("plan.num_layers must lie in [0, model.num_layers)");
  }
  for (auto family : {data.task_a, data.task_b, data.compare_task}) {
    data.spec(family, family == data.task_a, model.image_height, run.seed).validate();
  }
  if (run.ablation_seeds.empty()) throw ConfigError("run.ablation_seeds must not be empty");
}

}  // namespace trpts
