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

#include "dife/snr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "dife/errors.hpp"
#include "dife/ops.hpp"

namespace dife::snr {
namespace {

int checked_hidden(int channels, int reduction) {
  if (channels < 1 || reduction < 1) {
    throw ConfigError("attention needs channels >= 1 and reduction >= 1");
  }
  if (channels % reduction != 0) {
    throw ConfigError("attention reduction " + std::to_string(reduction) +
                      " does not divide channel count " +
                      std::to_string(channels));
  }
  return channels / reduction;
}

Tensor gaussian_init(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace

ChannelAttention::ChannelAttention(const std::string& prefix, int channels,
                                   int reduction, std::mt19937_64& rng)
    : fc1_w(prefix + ".fc1.w",
            gaussian_init(Shape{checked_hidden(channels, reduction), channels, 1, 1},
                          std::sqrt(2.0 / channels), rng)),
      fc1_b(prefix + ".fc1.b", Tensor(Shape{1, channels / reduction, 1, 1})),
      fc2_w(prefix + ".fc2.w",
            gaussian_init(Shape{channels, channels / reduction, 1, 1},
                          std::sqrt(1.0 / (channels / reduction)), rng)),
      fc2_b(prefix + ".fc2.b", Tensor(Shape{1, channels, 1, 1})),
      channels_(channels),
      reduction_(reduction) {}

std::vector<Parameter*> ChannelAttention::parameters() {
  return {&fc1_w, &fc1_b, &fc2_w, &fc2_b};
}

const char* to_string(DcMode mode) {
  switch (mode) {
    case DcMode::kFull:
      return "full";
    case DcMode::kNoPlus:
      return "no_plus";
    case DcMode::kNoMinus:
      return "no_minus";
    case DcMode::kNone:
      return "none";
  }
  return "full";
}

DcMode parse_dc_mode(const std::string& text) {
  if (text == "full") return DcMode::kFull;
  if (text == "no_plus") return DcMode::kNoPlus;
  if (text == "no_minus") return DcMode::kNoMinus;
  if (text == "none") return DcMode::kNone;
  throw ConfigError("unknown dc mode '" + text +
                    "' (expected full|no_plus|no_minus|none)");
}

Var instance_normalize(const Var& f, double eps) {
  if (!(eps >= 0.0)) throw ContractError("instance_normalize eps must be >= 0");
  return ops::instance_norm(f, eps);
}

Var channel_attention(const Var& r, ChannelAttention& att) {
  if (r.shape().c != att.channels()) {
    throw DimensionError("channel_attention: residual has c=" +
                         std::to_string(r.shape().c) + ", attention expects " +
                         std::to_string(att.channels()));
  }
  Tape& tape = *r.tape();
  Var pooled = ops::global_avg_pool(r);
  Var hidden = ops::relu(ops::fully_connected(pooled, tape.param(att.fc1_w),
                                              tape.param(att.fc1_b)));
  Var logits =
      ops::fully_connected(hidden, tape.param(att.fc2_w), tape.param(att.fc2_b));
  return ops::sigmoid(logits);
}

Split restitution_split(const Var& f, const Var& f_norm, const Var& alpha) {
  expect_same_shape(f.shape(), f_norm.shape(), "restitution_split");
  const Shape s = f.shape();
  if (!(alpha.shape() == Shape{s.n, s.c, 1, 1})) {
    throw DimensionError("restitution_split: alpha " + alpha.shape().str() +
                         " for features " + s.str());
  }
  Tape& tape = *f.tape();
  Var residual = ops::sub(f, f_norm);
  Var one = tape.constant(Tensor::ones(alpha.shape()));
  Var r_plus = ops::mul_channel(residual, alpha);
  Var r_minus = ops::mul_channel(residual, ops::sub(one, alpha));
  return Split{r_plus, r_minus};
}

Var pixel_entropy(const Var& f) {
  if (f.shape().c < 2) {
    throw ContractError("pixel_entropy needs at least 2 channels");
  }
  return ops::channel_entropy(f);
}

Var margin_loss(const Var& x) { return ops::softplus(x); }

Var dual_causality_loss(const Var& f_norm, const Var& f_plus,
                        const Var& f_minus, DcMode mode) {
  expect_same_shape(f_norm.shape(), f_plus.shape(), "dual_causality_loss");
  expect_same_shape(f_norm.shape(), f_minus.shape(), "dual_causality_loss");
  Tape& tape = *f_norm.tape();
  if (mode == DcMode::kNone) return tape.constant(Tensor::scalar(0.0));

  Var h_norm = pixel_entropy(f_norm);
  Var total;
  if (mode != DcMode::kNoPlus) {
    Var gap = ops::global_avg_pool(ops::sub(pixel_entropy(f_plus), h_norm));
    total = ops::mean_all(margin_loss(gap));
  }
  if (mode != DcMode::kNoMinus) {
    Var gap = ops::global_avg_pool(ops::sub(h_norm, pixel_entropy(f_minus)));
    Var term = ops::mean_all(margin_loss(gap));
    total = total.valid() ? ops::add(total, term) : term;
  }
  return total;
}

SnrOutput snr_forward(const Var& f, ChannelAttention& att, double eps) {
  SnrOutput out;
  out.f_norm = instance_normalize(f, eps);
  Var residual = ops::sub(f, out.f_norm);
  out.alpha = channel_attention(residual, att);
  Split split = restitution_split(f, out.f_norm, out.alpha);
  out.r_plus = split.r_plus;
  out.r_minus = split.r_minus;
  out.f_plus = ops::add(out.f_norm, out.r_plus);
  out.f_minus = ops::add(out.f_norm, out.r_minus);
  return out;
}

void write_feature_map_pgm(const Tensor& f, const std::string& path) {
  const Shape s = f.shape();
  std::vector<double> map(s.plane(), 0.0);
  for (int c = 0; c < s.c; ++c) {
    for (std::size_t p = 0; p < map.size(); ++p) {
      map[p] += f[f.index(0, c, 0, 0) + p];
    }
  }
  double norm = 0.0;
  for (double v : map) norm += v * v;
  norm = std::sqrt(norm);
  double peak = 0.0;
  for (double& v : map) {
    v = norm > 0.0 ? v / norm : 0.0;
    peak = std::max(peak, std::abs(v));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P5\n" << s.w << " " << s.h << "\n255\n";
  for (double v : map) {
    const double scaled = peak > 0.0 ? std::abs(v) / peak : 0.0;
    out.put(static_cast<char>(std::lround(scaled * 255.0)));
  }
}

}  // namespace dife::snr
