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

#include "dife/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "dife/errors.hpp"

namespace dife {

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("train.lr0 must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw ConfigError("train.momentum must lie in [0, 1)");
  }
  if (!(poly_power > 0.0)) throw ConfigError("train.poly_power must be > 0");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (warmup_epochs < 0) throw ConfigError("train.warmup_epochs must be >= 0");
  if (early_stop_patience < 1) throw ConfigError("train.early_stop_patience must be >= 1");
}

double poly_lr(long long step, long long total_steps, const TrainConfig& cfg) {
  if (total_steps <= 0) throw ContractError("poly_lr needs total_steps > 0");
  if (step < 0 || step > total_steps) {
    throw ContractError("poly_lr step " + std::to_string(step) + " outside [0, " +
                        std::to_string(total_steps) + "]");
  }
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return cfg.lr0 * std::pow(1.0 - frac, cfg.poly_power);
}

void sgd_step(std::span<Parameter* const> params, double lr, double momentum) {
  for (const Parameter* p : params) {
    if (!p->grad.all_finite()) {
      throw NumericError("non-finite gradient in parameter " + p->name);
    }
  }
  for (Parameter* p : params) {
    expect_same_shape(p->value.shape(), p->grad.shape(), p->name.c_str());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      p->momentum[i] = momentum * p->momentum[i] + p->grad[i];
      p->value[i] -= lr * p->momentum[i];
    }
  }
}

Tensor stack_images(const std::vector<data::DomainSample>& samples,
                    std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("empty batch");
  const Shape one = samples.at(indices[0]).image.shape();
  Tensor out(Shape{static_cast<int>(indices.size()), one.c, one.h, one.w});
  const std::size_t block = one.numel();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor& img = samples.at(indices[b]).image;
    expect_same_shape(img.shape(), one, "batch images");
    std::copy(img.data().begin(), img.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(b * block));
  }
  return out;
}

std::vector<int> stack_labels(const std::vector<data::DomainSample>& samples,
                              std::span<const std::size_t> indices) {
  std::vector<int> out;
  for (std::size_t idx : indices) {
    const data::LabelMap& m = samples.at(idx).mask;
    out.insert(out.end(), m.labels.begin(), m.labels.end());
  }
  return out;
}

namespace {

constexpr int kEvalBatch = 16;

std::vector<int> argmax_channels(const Tensor& logits) {
  const Shape s = logits.shape();
  const std::size_t plane = s.plane();
  std::vector<int> out(static_cast<std::size_t>(s.n) * plane);
  for (int n = 0; n < s.n; ++n) {
    const double* base = logits.ptr() + static_cast<std::size_t>(n) * s.c * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      int best = 0;
      for (int c = 1; c < s.c; ++c) {
        if (base[c * plane + p] > base[best * plane + p]) best = c;
      }
      out[n * plane + p] = best;
    }
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

TrainResult run_training(SegNet& net, const TrainConfig& cfg,
                         const std::vector<data::DomainSample>& train_set,
                         const std::vector<data::DomainSample>& val_set,
                         const TrainHooks& hooks, bool plain) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("training split is empty");
  if (val_set.empty()) throw ConfigError("validation split is empty");
  const NetConfig& ncfg = net.config();
  const bool selective = !plain && !ncfg.isw_stages.empty() &&
                         ncfg.whitening == Whitening::kSelective;

  TrainResult result;
  if (selective) {
    for (int s : ncfg.isw_stages) {
      result.stats.emplace_back(ncfg.stage_channels[s - 1], ncfg.k);
    }
  }
  auto freeze_all = [&] {
    for (isw::CovarianceStats& st : result.stats) {
      st.freeze();
      if (!st.warning().empty()) result.warnings.push_back(st.warning());
    }
  };
  if (cfg.warmup_epochs == 0) freeze_all();

  // Shuffling and augmentation share one stream; twin sampling has its own,
  // so the plain path consumes the shared stream identically.
  std::mt19937_64 rng(cfg.seed);
  std::mt19937_64 twin_rng(cfg.seed ^ 0xda3e39cb94b95bdbULL);
  const std::size_t n = train_set.size();
  const std::size_t bsz = static_cast<std::size_t>(cfg.batch_size);
  const long long steps_per_epoch = static_cast<long long>((n + bsz - 1) / bsz);
  const long long total_steps = steps_per_epoch * cfg.epochs;
  std::vector<Parameter*> params = net.parameters();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Tensor> best_weights = net.snapshot();
  result.best_val_miou = -1.0;
  int bad_epochs = 0;
  long long step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const bool warmup = epoch <= cfg.warmup_epochs;
    const bool whitening_active = !warmup;
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch;
    log.lr = poly_lr(step, total_steps, cfg);
    std::vector<double> task, isw_terms, dc, total;

    for (std::size_t start = 0; start < n; start += bsz) {
      const std::size_t stop = std::min(n, start + bsz);
      std::vector<data::DomainSample> batch;
      for (std::size_t i = start; i < stop; ++i) {
        batch.push_back(cfg.augment ? data::augment_geometric(train_set[order[i]], rng)
                                    : train_set[order[i]]);
      }
      std::vector<std::size_t> idx(batch.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      const Tensor x = stack_images(batch, idx);
      const std::vector<int> labels = stack_labels(batch, idx);

      for (Parameter* p : params) p->zero_grad();
      Tape tape;
      Var loss;
      if (plain) {
        loss = task_loss(net.forward_plain(tape, x), labels);
        task.push_back(loss.value().item());
        isw_terms.push_back(0.0);
        dc.push_back(0.0);
      } else {
        Tensor tx = x;
        if (selective) {
          std::vector<data::DomainSample> twins = batch;
          for (data::DomainSample& t : twins) {
            t.image = data::apply_photometric(t.image, hooks.twin.sample(twin_rng));
          }
          tx = stack_images(twins, idx);
        }
        const ForwardRecord record = net.forward_pair(tape, x, tx);
        if (selective && warmup) {
          std::size_t k = 0;
          for (const StageRecord& rec : record.stages) {
            if (!rec.theta_x.valid()) continue;
            result.stats[k++].update_warmup(rec.theta_x.value(), rec.theta_tx.value());
          }
        }
        const LossBreakdown parts = total_loss(
            record, labels, ncfg, selective ? &result.stats : nullptr, whitening_active);
        loss = parts.total;
        task.push_back(parts.task);
        isw_terms.push_back(parts.isw);
        dc.push_back(parts.dc);
      }
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(step));
      }
      total.push_back(value);
      tape.backward(loss);
      sgd_step(params, poly_lr(step, total_steps, cfg), cfg.momentum);
      ++step;
    }

    if (warmup) {
      for (isw::CovarianceStats& st : result.stats) st.end_epoch();
      if (epoch == cfg.warmup_epochs) freeze_all();
    }
    log.task = mean_of(task);
    log.isw = mean_of(isw_terms);
    log.dc = mean_of(dc);
    log.total = mean_of(total);
    log.val_miou = evaluate(net, val_set, ncfg.num_classes, plain).miou;
    result.epochs.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);

    if (log.val_miou > result.best_val_miou) {
      result.best_val_miou = log.val_miou;
      result.best_epoch = epoch;
      best_weights = net.snapshot();
      bad_epochs = 0;
    } else if (++bad_epochs >= cfg.early_stop_patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (!result.stats.empty() && !result.stats.front().frozen()) {
    result.warnings.push_back("training ended inside warmup; whitening was never applied");
    freeze_all();
  }
  net.restore(best_weights);
  return result;
}

}  // namespace

TrainResult train(SegNet& net, const TrainConfig& cfg,
                  const std::vector<data::DomainSample>& train_set,
                  const std::vector<data::DomainSample>& val_set, const TrainHooks& hooks) {
  return run_training(net, cfg, train_set, val_set, hooks, false);
}

TrainResult train_baseline(SegNet& net, const TrainConfig& cfg,
                           const std::vector<data::DomainSample>& train_set,
                           const std::vector<data::DomainSample>& val_set,
                           const TrainHooks& hooks) {
  return run_training(net, cfg, train_set, val_set, hooks, true);
}

metrics::MetricsReport evaluate(SegNet& net, const std::vector<data::DomainSample>& samples,
                                int num_classes, bool plain) {
  if (samples.empty()) throw ConfigError("evaluation split is empty");
  if (net.config().num_classes != num_classes) {
    throw ConfigError("network predicts " + std::to_string(net.config().num_classes) +
                      " classes, evaluation expects " + std::to_string(num_classes));
  }
  metrics::ConfusionCounts all(num_classes);
  std::vector<double> per_sample;
  for (std::size_t start = 0; start < samples.size(); start += kEvalBatch) {
    const std::size_t stop = std::min(samples.size(), start + kEvalBatch);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    Tape tape(false);
    const Tensor x = stack_images(samples, idx);
    const Var logits = plain ? net.forward_plain(tape, x) : net.forward(tape, x);
    const std::vector<int> pred = argmax_channels(logits.value());
    const std::size_t plane = x.shape().plane();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const data::LabelMap& m = samples[idx[b]].mask;
      const std::vector<int> truth(m.labels.begin(), m.labels.end());
      metrics::ConfusionCounts one(num_classes);
      one.add(truth, std::span<const int>(pred).subspan(b * plane, plane), kIgnoreLabel);
      per_sample.push_back(metrics::mean_iou(one));
      all.merge(one);
    }
  }
  metrics::MetricsReport report = metrics::summarize(all);
  report.sample_miou = std::move(per_sample);
  return report;
}

void write_train_log_csv(std::span<const EpochLog> rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "epoch,lr,task,isw,dc,total,val_mIoU\n";
  for (const EpochLog& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.6f\n", r.epoch, r.lr,
                  r.task, r.isw, r.dc, r.total, r.val_miou);
    out << buf;
  }
}

}  // namespace dife
