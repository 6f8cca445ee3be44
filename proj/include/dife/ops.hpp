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

// Differentiable primitives. Every function records itself on the tape that
// owns its inputs; all inputs must share one tape. Apart from the bias-add
// inside conv2d/fully_connected and the per-channel scale in mul_channel,
// shapes must match exactly.

#pragma once

#include <span>

#include "dife/autodiff.hpp"

namespace dife::ops {

/// 2-D cross-correlation. w: (c_out, c_in, kh, kw); b: (1, c_out, 1, 1).
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);

Var relu(const Var& x);
Var sigmoid(const Var& x);
Var abs(const Var& x);
/// ln(1 + e^x), overflow safe.
Var softplus(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double s);

/// x: (N,C,H,W), s: (N,C,1,1); s broadcast over the spatial plane.
Var mul_channel(const Var& x, const Var& s);

/// (N,C,H,W) -> (N,C,1,1).
Var global_avg_pool(const Var& x);
/// x: (N,c_in,1,1), w: (c_out,c_in,1,1), b: (1,c_out,1,1).
Var fully_connected(const Var& x, const Var& w, const Var& b);

/// Softmax over the channel axis at every pixel.
Var softmax_channels(const Var& x);
/// Shannon entropy (nats) of the channel softmax at every pixel: (N,1,H,W).
Var channel_entropy(const Var& x);
/// Mean over labelled pixels of -ln softmax(logits)[label]. `labels` is
/// indexed n*H*W + h*W + w; entries equal to `ignore_index` are skipped.
Var cross_entropy(const Var& logits, std::span<const int> labels,
                  int ignore_index);

/// Half-pixel bilinear interpolation to (2H, 2W), edges clamped.
Var upsample_bilinear2x(const Var& x);
/// 2x2 mean pooling with stride 2; H and W must be even.
Var avg_pool2x(const Var& x);
Var concat_channels(const Var& a, const Var& b);

/// Per (n, c) slice: (x - mean) / sqrt(var + eps), population variance.
Var instance_norm(const Var& x, double eps);
/// Subtracts the per (n, c) spatial mean.
Var center_spatial(const Var& x);

Var reshape(const Var& x, Shape shape);
/// (N,C,H,W) -> (N,1,C,H*W).
Var to_matrix(const Var& x);
/// Batched product of (N,1,r,k) and (N,1,k,c).
Var matmul(const Var& a, const Var& b);
/// Swaps the last two axes.
Var transpose(const Var& x);

Var sum_all(const Var& x);
Var mean_all(const Var& x);

}  // namespace dife::ops
