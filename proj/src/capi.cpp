// Copyright 2026 The DIFE Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "dife/dife.h"

#include <cstring>
#include <exception>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dife/autodiff.hpp"
#include "dife/errors.hpp"
#include "dife/runner.hpp"

struct dife_config {
  dife::RunConfig cfg;
};

struct dife_model {
  dife::RunConfig cfg;
  std::unique_ptr<dife::SegNet> net;
};

struct dife_report {
  std::vector<dife::GradCheckResult> results;
};

namespace {

thread_local std::string g_last_error;

dife_status status_of(dife::ErrorKind kind) {
  switch (kind) {
    case dife::ErrorKind::kConfig:
    case dife::ErrorKind::kData:
    case dife::ErrorKind::kFormat:
    case dife::ErrorKind::kIo:
    case dife::ErrorKind::kDimension:
      return DIFE_CONFIG_ERROR;
    case dife::ErrorKind::kNumeric:
      return DIFE_NUMERIC_ERROR;
    default:
      return DIFE_INTERNAL_ERROR;
  }
}

template <typename Fn>
dife_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    return fn();
  } catch (const dife::Error& e) {
    g_last_error = e.what();
    return status_of(e.kind());
  } catch (const std::exception& e) {
    g_last_error = std::string("internal error: ") + e.what();
    return DIFE_INTERNAL_ERROR;
  } catch (...) {
    g_last_error = "internal error: unknown exception";
    return DIFE_INTERNAL_ERROR;
  }
}

dife_status null_arg(const char* what) {
  g_last_error = std::string("contract error: null ") + what;
  return DIFE_INTERNAL_ERROR;
}

dife::LogFn wrap(dife_log_fn log, void* user) {
  if (log == nullptr) return {};
  return [log, user](const std::string& line) { log(line.c_str(), user); };
}

}  // namespace

extern "C" {

const char* dife_version(void) { return "1.0.0"; }

const char* dife_last_error(void) { return g_last_error.c_str(); }

const char* dife_status_name(dife_status status) {
  switch (status) {
    case DIFE_OK: return "ok";
    case DIFE_CHECK_FAILED: return "check failed";
    case DIFE_CONFIG_ERROR: return "config/data error";
    case DIFE_NUMERIC_ERROR: return "numerical failure";
    case DIFE_INTERNAL_ERROR: return "internal error";
  }
  return "unknown";
}

dife_status dife_config_new(dife_config** out) {
  if (out == nullptr) return null_arg("out");
  return guarded([&] {
    *out = new dife_config{};
    return DIFE_OK;
  });
}

dife_status dife_config_load(const char* path, dife_config** out) {
  if (path == nullptr || out == nullptr) return null_arg("argument");
  return guarded([&] {
    *out = new dife_config{dife::load_config(path)};
    return DIFE_OK;
  });
}

void dife_config_free(dife_config* cfg) { delete cfg; }

dife_status dife_config_set(dife_config* cfg, const char* key, const char* value) {
  if (cfg == nullptr || key == nullptr || value == nullptr) return null_arg("argument");
  return guarded([&] {
    cfg->cfg.set(key, value);
    return DIFE_OK;
  });
}

dife_status dife_config_assign(dife_config* cfg, const char* assignment) {
  if (cfg == nullptr || assignment == nullptr) return null_arg("argument");
  return guarded([&] {
    const auto [key, value] = dife::split_assignment(assignment);
    cfg->cfg.set(key, value);
    return DIFE_OK;
  });
}

dife_status dife_config_get(const dife_config* cfg, const char* key, char* buf,
                            size_t len, size_t* needed) {
  if (cfg == nullptr || key == nullptr) return null_arg("argument");
  return guarded([&] {
    const std::string value = cfg->cfg.get(key);
    if (needed != nullptr) *needed = value.size();
    if (buf != nullptr && len > 0) {
      const std::size_t n = std::min(len - 1, value.size());
      std::memcpy(buf, value.data(), n);
      buf[n] = '\0';
    }
    return DIFE_OK;
  });
}

dife_status dife_config_validate(const dife_config* cfg) {
  if (cfg == nullptr) return null_arg("config");
  return guarded([&] {
    cfg->cfg.validate();
    return DIFE_OK;
  });
}

dife_status dife_config_resolved(const dife_config* cfg, char** out) {
  if (cfg == nullptr || out == nullptr) return null_arg("argument");
  return guarded([&] {
    const std::string text = cfg->cfg.resolved();
    char* s = new char[text.size() + 1];
    std::memcpy(s, text.c_str(), text.size() + 1);
    *out = s;
    return DIFE_OK;
  });
}

void dife_string_free(char* s) { delete[] s; }

dife_status dife_generate(const char* out_dir, int count, uint64_t seed, int height,
                          int width, int force, dife_dataset_summary* summary) {
  if (out_dir == nullptr) return null_arg("out_dir");
  return guarded([&] {
    const dife::GenerateSummary s =
        dife::run_generate(out_dir, count, seed, height, width, force != 0);
    if (summary != nullptr) {
      *summary = {s.count, s.sizes.train, s.sizes.val, s.sizes.test, s.manifest_rows};
    }
    return DIFE_OK;
  });
}

dife_status dife_train(const dife_config* cfg, dife_log_fn log, void* user,
                       dife_train_summary* summary) {
  if (cfg == nullptr) return null_arg("config");
  return guarded([&] {
    const dife::TrainSummary s = dife::run_train(cfg->cfg, wrap(log, user));
    if (summary != nullptr) {
      *summary = {s.best_val_miou, s.best_epoch, s.epochs_run, s.early_stopped ? 1 : 0,
                  static_cast<int>(s.warnings.size())};
    }
    return DIFE_OK;
  });
}

dife_status dife_model_load(const dife_config* cfg, const char* checkpoint,
                            dife_model** out) {
  if (cfg == nullptr || checkpoint == nullptr || out == nullptr) return null_arg("argument");
  return guarded([&] {
    auto model = std::make_unique<dife_model>();
    model->cfg = cfg->cfg;
    model->net = dife::load_model(model->cfg, checkpoint);
    *out = model.release();
    return DIFE_OK;
  });
}

void dife_model_free(dife_model* model) { delete model; }

dife_status dife_model_evaluate(dife_model* model, const char* data_root,
                                const char* domain, const char* split,
                                const char* out_dir, dife_metrics* metrics) {
  if (model == nullptr || data_root == nullptr || domain == nullptr || split == nullptr ||
      out_dir == nullptr) {
    return null_arg("argument");
  }
  return guarded([&] {
    const dife::metrics::MetricsReport r = dife::evaluate_split(
        *model->net, data_root, dife::data::parse_domain(domain),
        dife::data::parse_split(split), out_dir);
    if (metrics != nullptr) {
      *metrics = {r.miou, r.mdsc, r.mprec, r.mrec, r.pix_acc,
                  static_cast<int>(r.sample_miou.size())};
    }
    return DIFE_OK;
  });
}

dife_status dife_ablate(const dife_config* cfg, const char* axis, int workers,
                        dife_log_fn log, void* user, int* rows) {
  if (cfg == nullptr || axis == nullptr) return null_arg("argument");
  return guarded([&] {
    const auto result =
        dife::run_ablate(cfg->cfg, axis, workers <= 0 ? 1 : workers, wrap(log, user));
    if (rows != nullptr) *rows = static_cast<int>(result.size());
    return DIFE_OK;
  });
}

dife_status dife_gradcheck(const char* module, int seeds, dife_report** out) {
  if (module == nullptr || out == nullptr) return null_arg("argument");
  return guarded([&] {
    auto report = std::make_unique<dife_report>();
    report->results = dife::run_gradcheck(module, seeds);
    bool ok = true;
    for (const auto& r : report->results) ok = ok && r.passed();
    *out = report.release();
    if (!ok) g_last_error = "gradient check failed";
    return ok ? DIFE_OK : DIFE_CHECK_FAILED;
  });
}

size_t dife_report_size(const dife_report* report) {
  return report == nullptr ? 0 : report->results.size();
}

const char* dife_report_name(const dife_report* report, size_t i) {
  if (report == nullptr || i >= report->results.size()) return "";
  return report->results[i].name.c_str();
}

double dife_report_error(const dife_report* report, size_t i) {
  if (report == nullptr || i >= report->results.size()) return 0.0;
  return report->results[i].max_relative_error;
}

double dife_report_tolerance(const dife_report* report, size_t i) {
  if (report == nullptr || i >= report->results.size()) return 0.0;
  return report->results[i].tolerance;
}

int dife_report_passed(const dife_report* report, size_t i) {
  if (report == nullptr || i >= report->results.size()) return 0;
  return report->results[i].passed() ? 1 : 0;
}

void dife_report_free(dife_report* report) { delete report; }

void dife_debug_inject_fault(const char* op) {
  dife::debug::set_backward_fault(op == nullptr ? std::string() : std::string(op));
}

}  // extern "C"
