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

// End-to-end commands shared by the C API and the tests: dataset
// generation, training, evaluation, ablation sweeps and gradient checks.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dife/config.hpp"
#include "dife/gradcheck.hpp"
#include "dife/metrics.hpp"

namespace dife {

using LogFn = std::function<void(const std::string&)>;

struct GenerateSummary {
  int count = 0;
  data::SplitSizes sizes;
  std::size_t manifest_rows = 0;
};

/// Writes both domains under `out_dir`. An existing non-empty directory is
/// refused (ConfigError) unless `force`, which clears it first.
GenerateSummary run_generate(const std::string& out_dir, int count, std::uint64_t seed,
                             int h, int w, bool force);

struct TrainSummary {
  double best_val_miou = 0.0;
  int best_epoch = 0;
  int epochs_run = 0;
  bool early_stopped = false;
  std::string checkpoint;
  std::vector<std::string> warnings;
};

/// Trains on `<data_root>/source/{train,val}` and writes config.resolved,
/// train_log.csv, model.ckpt and, for selective whitening, one
/// isw_mask_stage<k>.csv per stage into cfg.out_dir. Networks without any
/// DIFE stage use the plain path.
TrainSummary run_train(const RunConfig& cfg, const LogFn& log = {});

/// Network built from cfg.net with `checkpoint` loaded; any name or shape
/// mismatch is a ConfigError.
std::unique_ptr<SegNet> load_model(const RunConfig& cfg, const std::string& checkpoint);

/// Evaluates one split and writes metrics.csv, summary.csv and
/// sample_iou.csv into `out_dir`.
metrics::MetricsReport evaluate_split(SegNet& net, const std::string& data_root,
                                      data::Domain domain, data::Split split,
                                      const std::string& out_dir);

/// load_model followed by evaluate_split.
metrics::MetricsReport run_eval(const RunConfig& cfg, const std::string& checkpoint,
                                const std::string& data_root, data::Domain domain,
                                data::Split split, const std::string& out_dir);

struct AblationCell {
  std::string label;
  RunConfig cfg;
};

/// Axis names: k, lambda, placement, dcloss.
std::vector<AblationCell> ablation_cells(const RunConfig& base, const std::string& axis);

struct AblationRow {
  std::string label;
  RunConfig cfg;
  double val_miou = 0.0;
  double source_test_miou = 0.0;
  double target_miou = 0.0;
  std::vector<double> target_sample_iou;
};

/// Trains every cell of `axis` on the source split and evaluates the
/// source and target test splits. Cells run on up to `workers` threads, each
/// single-threaded; output order follows the cell order. Writes
/// ablation.csv and ttest.csv (each cell against the first, on per-sample
/// target IoU) into cfg.out_dir.
std::vector<AblationRow> run_ablate(const RunConfig& cfg, const std::string& axis,
                                    int workers, const LogFn& log = {});

/// `module` is one of gradcheck_modules() or "all"; suites run for seeds
/// 0..seeds-1.
std::vector<GradCheckResult> run_gradcheck(const std::string& module, int seeds);

}  // namespace dife
