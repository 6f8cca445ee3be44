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

// SGD training with a polynomial schedule, ISW warmup, early stopping, and
// evaluation.

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dife/metrics.hpp"
#include "dife/seg_net.hpp"
#include "dife/synth_data.hpp"

namespace dife {

struct TrainConfig {
  double lr0 = 1e-2;
  double momentum = 0.9;
  double poly_power = 0.9;
  int epochs = 30;
  int batch_size = 8;
  std::uint64_t seed = 0;
  int warmup_epochs = 5;
  int early_stop_patience = 10;
  bool augment = true;  // random flip / scale-crop on training batches

  void validate() const;
};

/// lr0 * (1 - step / total_steps)^power.
double poly_lr(long long step, long long total_steps, const TrainConfig& cfg);

/// Heavy-ball update: buf = momentum * buf + grad; value -= lr * buf.
/// A non-finite gradient throws NumericError naming the parameter before
/// anything is modified.
void sgd_step(std::span<Parameter* const> params, double lr, double momentum);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;  // at the first step of the epoch
  double task = 0.0;
  double isw = 0.0;
  double dc = 0.0;
  double total = 0.0;
  double val_miou = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  double best_val_miou = 0.0;
  bool early_stopped = false;
  std::vector<std::string> warnings;
  std::vector<isw::CovarianceStats> stats;  // one per whitening stage
};

struct TrainHooks {
  data::PhotometricTransform twin;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Trains `net` on `train_set`, selecting weights by validation mIoU. During
/// the first warmup_epochs only the task and causality terms are optimized
/// while covariance statistics accumulate; the ISW mask is then frozen and
/// the whitening term joins. The best-validation weights are restored on
/// return. Empty splits are a ConfigError.
TrainResult train(SegNet& net, const TrainConfig& cfg,
                  const std::vector<data::DomainSample>& train_set,
                  const std::vector<data::DomainSample>& val_set,
                  const TrainHooks& hooks = {});

/// Same schedule and sampling with the plain network and task loss only.
TrainResult train_baseline(SegNet& net, const TrainConfig& cfg,
                           const std::vector<data::DomainSample>& train_set,
                           const std::vector<data::DomainSample>& val_set,
                           const TrainHooks& hooks = {});

/// Argmax predictions over `samples`, counted per sample and merged.
/// `plain` evaluates the DIFE-free path.
metrics::MetricsReport evaluate(SegNet& net, const std::vector<data::DomainSample>& samples,
                                int num_classes, bool plain = false);

/// epoch,lr,task,isw,dc,total,val_mIoU
void write_train_log_csv(std::span<const EpochLog> rows, const std::string& path);

/// Packs the listed samples into a batch tensor and flattened labels.
Tensor stack_images(const std::vector<data::DomainSample>& samples,
                    std::span<const std::size_t> indices);
std::vector<int> stack_labels(const std::vector<data::DomainSample>& samples,
                              std::span<const std::size_t> indices);

}  // namespace dife
