// Copyright 2026 The TR-PTS Authors
// SPDX-License-Identifier: Apache-2.0

#include "trpts/trpts.h"

#include <algorithm>
#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "trpts/error.hpp"
#include "trpts/pipeline.hpp"

struct trpts_context {
  trpts::RunConfig config;
  trpts_log_fn log = nullptr;
  void* log_user = nullptr;
};

struct trpts_model {
  trpts::ViTModel<float> model;
};

namespace {

thread_local std::string t_last_error;

template <typename F>
trpts_status guarded(F&& body) {
  t_last_error.clear();
  try {
    body();
    return TRPTS_OK;
  } catch (const trpts::ConfigError& e) {
    t_last_error = e.what();
    return TRPTS_ERR_CONFIG;
  } catch (const trpts::NumericError& e) {
    t_last_error = e.what();
    return TRPTS_ERR_NUMERIC;
  } catch (const trpts::InputError& e) {
    t_last_error = e.what();
    return TRPTS_ERR_INPUT;
  } catch (const trpts::IoError& e) {
    t_last_error = e.what();
    return TRPTS_ERR_IO;
  } catch (const trpts::UsageError& e) {
    t_last_error = e.what();
    return TRPTS_ERR_USAGE;
  } catch (const std::bad_alloc&) {
    t_last_error = "out of memory";
    return TRPTS_ERR_INTERNAL;
  } catch (const std::exception& e) {
    t_last_error = e.what();
    return TRPTS_ERR_INTERNAL;
  } catch (...) {
    t_last_error = "unknown failure";
    return TRPTS_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (!p) throw trpts::UsageError(std::string(what) + " must not be null");
}

trpts::StageContext stage_context(const trpts_context* ctx, const char* out_dir, int force) {
  require(out_dir, "out_dir");
  trpts::StageContext sc{ctx->config, out_dir, force != 0, {}};
  if (ctx->log) {
    auto fn = ctx->log;
    auto user = ctx->log_user;
    sc.log = [fn, user](const std::string& m) { fn(m.c_str(), user); };
  }
  return sc;
}

}  // namespace

extern "C" {

const char* trpts_version(void) { return "0.1.0"; }

const char* trpts_status_name(trpts_status status) {
  switch (status) {
    case TRPTS_OK: return "ok";
    case TRPTS_ERR_USAGE: return "usage error";
    case TRPTS_ERR_CONFIG: return "configuration error";
    case TRPTS_ERR_NUMERIC: return "numeric error";
    case TRPTS_ERR_INPUT: return "input error";
    case TRPTS_ERR_IO: return "i/o error";
    case TRPTS_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* trpts_last_error(void) { return t_last_error.c_str(); }

trpts_status trpts_context_create(const char* config_path, trpts_context** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    trpts::configure_runtime();
    auto ctx = std::make_unique<trpts_context>();
    if (config_path) ctx->config = trpts::RunConfig::load(config_path);
    *out = ctx.release();
  });
}

void trpts_context_destroy(trpts_context* ctx) { delete ctx; }

trpts_status trpts_context_set(trpts_context* ctx, const char* key, const char* value) {
  return guarded([&] {
    require(ctx, "ctx");
    require(key, "key");
    require(value, "value");
    ctx->config.set(key, value);
  });
}

trpts_status trpts_context_get(const trpts_context* ctx, const char* key, char* buf, size_t capacity,
                               size_t* needed) {
  return guarded([&] {
    require(ctx, "ctx");
    require(key, "key");
    const auto value = ctx->config.get(key);
    if (needed) *needed = value.size() + 1;
    if (buf && capacity > 0) {
      const auto n = std::min(capacity - 1, value.size());
      std::memcpy(buf, value.data(), n);
      buf[n] = '\0';
    }
  });
}

trpts_status trpts_context_config_hash(const trpts_context* ctx, char out[17]) {
  return guarded([&] {
    require(ctx, "ctx");
    require(out, "out");
    const auto h = ctx->config.hash();
    std::memcpy(out, h.c_str(), 17);
  });
}

trpts_status trpts_context_set_logger(trpts_context* ctx, trpts_log_fn fn, void* user_data) {
  return guarded([&] {
    require(ctx, "ctx");
    ctx->log = fn;
    ctx->log_user = user_data;
  });
}

trpts_status trpts_run_stage(trpts_context* ctx, const char* stage, const char* out_dir, int force) {
  return guarded([&] {
    require(ctx, "ctx");
    require(stage, "stage");
    trpts::run_stage(stage, stage_context(ctx, out_dir, force));
  });
}

trpts_status trpts_run_pipeline(trpts_context* ctx, const char* out_dir, int force) {
  return guarded([&] {
    require(ctx, "ctx");
    trpts::run_pipeline(stage_context(ctx, out_dir, force));
  });
}

trpts_status trpts_model_load(const char* checkpoint_path, trpts_model** out) {
  return guarded([&] {
    require(checkpoint_path, "checkpoint_path");
    require(out, "out");
    *out = nullptr;
    trpts::configure_runtime();
    *out = new trpts_model{trpts::load_checkpoint(checkpoint_path)};
  });
}

void trpts_model_destroy(trpts_model* model) { delete model; }

trpts_status trpts_model_num_parameters(const trpts_model* model, int64_t* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = model->model.parameters().total_numel();
  });
}

trpts_status trpts_model_num_classes(const trpts_model* model, int32_t* out) {
  return guarded([&] {
    require(model, "model");
    require(out, "out");
    *out = model->model.config().num_classes;
  });
}

trpts_status trpts_model_predict(const trpts_model* model, const float* images, int64_t batch, int64_t* labels) {
  return guarded([&] {
    require(model, "model");
    require(images, "images");
    require(labels, "labels");
    if (batch <= 0) throw trpts::UsageError("batch must be positive");
    const auto n = static_cast<std::size_t>(batch * model->model.config().image_numel());
    trpts::NoGradGuard no_grad;
    const auto trace = model->model.forward(std::span<const float>(images, n), batch);
    const auto pred = trpts::argmax_rows(trace.logits);
    std::copy(pred.begin(), pred.end(), labels);
  });
}

trpts_status trpts_model_evaluate(const trpts_model* model, const char* dataset_path, const char* plan_path,
                                  double* accuracy) {
  return guarded([&] {
    require(model, "model");
    require(dataset_path, "dataset_path");
    require(accuracy, "accuracy");
    const auto data = trpts::Dataset::from_pack(trpts::TensorPack::read(dataset_path));
    if (plan_path) {
      const auto plan = trpts::read_plan_file(plan_path);
      *accuracy = trpts::evaluate<float>(model->model, &plan, data);
    } else {
      *accuracy = trpts::evaluate<float>(model->model, nullptr, data);
    }
  });
}

}  // extern "C"
