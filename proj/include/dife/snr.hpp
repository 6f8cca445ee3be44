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

// Style normalization and restitution.
//
// The block instance-normalizes a feature map F, splits the removed residual
// R = F - IN(F) channel-wise with an attention vector alpha into a restored
// part R+ = alpha R and a discarded part R- = (1 - alpha) R, and emits the
// enhanced map IN(F) + R+. The dual causality loss asks the enhanced map to
// have lower channel-softmax entropy than IN(F), and the contaminated map
// IN(F) + R- to have higher entropy.

#pragma once

#include <random>
#include <string>
#include <vector>

#include "dife/autodiff.hpp"

namespace dife::snr {

inline constexpr double kDefaultInstanceNormEps = 1e-5;

/// Squeeze-excitation style gate: GAP -> FC(C, C/r) -> ReLU -> FC(C/r, C)
/// -> sigmoid. Throws ConfigError unless r divides C.
class ChannelAttention {
 public:
  ChannelAttention(const std::string& prefix, int channels, int reduction,
                   std::mt19937_64& rng);

  int channels() const { return channels_; }
  int reduction() const { return reduction_; }
  std::vector<Parameter*> parameters();

  Parameter fc1_w;
  Parameter fc1_b;
  Parameter fc2_w;
  Parameter fc2_b;

 private:
  int channels_;
  int reduction_;
};

struct SnrOutput {
  Var f_norm;   // IN(F)
  Var f_plus;   // IN(F) + R+
  Var f_minus;  // IN(F) + R-
  Var r_plus;
  Var r_minus;
  Var alpha;    // (N, C, 1, 1)
};

/// Which halves of the dual causality loss are active.
enum class DcMode { kFull, kNoPlus, kNoMinus, kNone };

const char* to_string(DcMode mode);
DcMode parse_dc_mode(const std::string& text);

Var instance_normalize(const Var& f, double eps = kDefaultInstanceNormEps);

/// Attention weights for the residual `r`, shape (N, C, 1, 1), each in (0, 1).
Var channel_attention(const Var& r, ChannelAttention& att);

struct Split {
  Var r_plus;
  Var r_minus;
};
/// R = f - f_norm; R+ = alpha R; R- = (1 - alpha) R, per channel.
Split restitution_split(const Var& f, const Var& f_norm, const Var& alpha);

/// Per-pixel entropy of the channel softmax, (N, 1, H, W). Needs C >= 2.
Var pixel_entropy(const Var& f);

/// ln(1 + e^x).
Var margin_loss(const Var& x);

/// L+ = mean_n softplus(spatial_mean(H(F~+) - H(F~))) and
/// L- = mean_n softplus(spatial_mean(H(F~) - H(F~-))); returns the active sum.
Var dual_causality_loss(const Var& f_norm, const Var& f_plus,
                        const Var& f_minus, DcMode mode = DcMode::kFull);

SnrOutput snr_forward(const Var& f, ChannelAttention& att,
                      double eps = kDefaultInstanceNormEps);

/// Debug view: channel sum of sample 0, l2-normalized, written as an 8-bit
/// PGM scaled by the largest magnitude.
void write_feature_map_pgm(const Tensor& f, const std::string& path);

}  // namespace dife::snr
