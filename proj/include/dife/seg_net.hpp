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

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "dife/autodiff.hpp"
#include "dife/isw.hpp"
#include "dife/snr.hpp"

namespace dife {

inline constexpr int kIgnoreLabel = 255;

/// Regularizer applied at the whitening stages.
enum class Whitening {
  kSelective,  // masked covariance penalty on the image/twin pair
  kFull,       // |theta - I| on the raw view, no mask
};

const char* to_string(Whitening w);

struct NetConfig {
  std::vector<int> stage_channels{8, 16, 32};
  int in_channels = 3;
  int num_classes = 4;
  /// 1-based encoder stage indices.
  std::set<int> snr_stages{2, 3};
  std::set<int> isw_stages{1, 2, 3};
  double lambda1 = 0.6;  // whitening weight
  double lambda2 = 1.0;  // dual causality weight
  int attention_reduction = 4;
  int k = 2;
  snr::DcMode dc_mode = snr::DcMode::kFull;
  Whitening whitening = Whitening::kSelective;
  double in_eps = snr::kDefaultInstanceNormEps;

  /// Throws ConfigError on out-of-range stages, negative weights, or an
  /// attention reduction that does not divide a hosting stage's width.
  void validate() const;
  bool has_dife() const { return !snr_stages.empty() || !isw_stages.empty(); }
  int stages() const { return static_cast<int>(stage_channels.size()); }
};

/// What one instrumented encoder stage produced.
struct StageRecord {
  int stage = 0;
  std::optional<snr::SnrOutput> snr;
  /// Per-sample covariances (N,1,C,C) of the stage output; set for
  /// whitening stages. theta_tx is unset in full-whitening mode.
  Var theta_x;
  Var theta_tx;
};

struct ForwardRecord {
  Var logits;  // (N, num_classes, H, W), from the raw view
  std::vector<StageRecord> stages;
};

struct LossBreakdown {
  Var total;
  double task = 0.0;
  double isw = 0.0;  // unweighted sum over whitening stages
  double dc = 0.0;   // unweighted sum over SNR stages
  double value() const { return total.value().item(); }
};

/// Encoder-decoder segmentation network. Each encoder stage is
/// conv3x3-ReLU-conv3x3-ReLU, stages after the first are preceded by 2x2
/// average pooling; SNR, when enabled, replaces a stage output by its
/// enhanced map. The decoder upsamples x2 per level, concatenates the
/// matching encoder output and applies conv3x3-ReLU; a 1x1 head yields logits.
class SegNet {
 public:
  SegNet(NetConfig cfg, std::uint64_t seed);
  SegNet(const SegNet&) = delete;
  SegNet& operator=(const SegNet&) = delete;

  const NetConfig& config() const { return cfg_; }
  std::vector<Parameter*> parameters();
  std::size_t parameter_count() const;

  /// Both views pass the encoder; SNR output feeds the next stage; the twin
  /// is only encoded as deep as the last whitening stage. Logits come from
  /// the raw view.
  ForwardRecord forward_pair(Tape& tape, const Tensor& x, const Tensor& tx);
  /// Inference on the raw view with SNR blocks in place.
  Var forward(Tape& tape, const Tensor& x);
  /// The network with every DIFE hook absent.
  Var forward_plain(Tape& tape, const Tensor& x);

  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& weights);

 private:
  struct Conv {
    Parameter* w;
    Parameter* b;
  };
  struct Stage {
    Conv conv1;
    Conv conv2;
    snr::ChannelAttention* attention = nullptr;
  };
  Conv make_conv(const std::string& name, int c_in, int c_out, int kernel,
                 std::mt19937_64& rng);
  Var apply(Tape& tape, const Conv& conv, const Var& x, int pad);
  Var encode_stage(Tape& tape, int s, const Var& in, bool use_dife,
                   std::optional<snr::SnrOutput>* snr_out);
  Var decode(Tape& tape, std::vector<Var>& skips);
  void check_input(const Tensor& x) const;

  NetConfig cfg_;
  std::vector<std::unique_ptr<Parameter>> params_;
  std::vector<std::unique_ptr<snr::ChannelAttention>> attention_;
  std::vector<Stage> stages_;
  std::vector<Conv> decoder_;
  Conv head_{};
};

/// Mean cross-entropy over labels != ignore_index.
Var task_loss(const Var& logits, std::span<const int> labels,
              int ignore_index = kIgnoreLabel);

/// L_task + sum over stages of lambda1 L_whiten + lambda2 L_dc. `stats` holds
/// one entry per whitening stage (ascending stage order) and is only read
/// when `whitening_active`; a selective term before mask freeze is a
/// ContractError. Zero weights skip their terms entirely.
LossBreakdown total_loss(const ForwardRecord& record, std::span<const int> labels,
                         const NetConfig& cfg,
                         const std::vector<isw::CovarianceStats>* stats,
                         bool whitening_active);

/// Binary checkpoint: "DIFE", u16 version, u32 parameter count, then per
/// parameter u32 name length, name bytes, 4 x u32 dims, little-endian f64s.
void save_checkpoint(SegNet& net, const std::string& path);
/// Validates every name and shape against `net`; throws ConfigError on any
/// mismatch and FormatError on a malformed file.
void load_checkpoint(SegNet& net, const std::string& path);

}  // namespace dife
