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

// Instance selective whitening.
//
// Channel covariances are taken for an image and its photometric twin. The
// elementwise variance of the pair, accumulated over a warmup window, is
// split by 1-D k-means; off-diagonal entries outside the lowest-variance
// cluster are treated as style and their covariance magnitude is penalized.
//
// Matrices are carried as tensors of shape (N, 1, C, C).

#pragma once

#include <span>
#include <string>
#include <vector>

#include "dife/autodiff.hpp"

namespace dife::isw {

/// Per-sample channel covariance (1/(h*w)) M M^T, M the C x (h*w) view of f.
/// With `center` the per-channel spatial mean is removed first.
Var feature_covariance(const Var& f, bool center);

/// Mean over the batch axis: (N,1,C,C) -> (1,1,C,C).
Tensor batch_mean(const Tensor& m);

struct VarianceStats {
  Tensor v;         // (1,1,C,C), elementwise >= 0
  Tensor mu_theta;  // (1,1,C,C), batch mean of the per-pair means
};

/// V = 1/N sum_i 1/2 ((theta(x_i) - mu_i)^2 + (theta(Tx_i) - mu_i)^2) with
/// mu_i the mean of the pair.
VarianceStats covariance_variance(const Tensor& theta_x, const Tensor& theta_tx);

struct KMeans1d {
  std::vector<int> labels;         // cluster per input value, 0 = lowest
  std::vector<double> centroids;   // ascending
  double sse = 0.0;
};

/// Globally optimal 1-D k-means (contiguous clusters over the sorted
/// values, solved by dynamic programming). Throws DegenerateInputError when
/// fewer than k distinct values exist.
KMeans1d kmeans_1d(std::span<const double> values, int k);

/// Clusters the strictly upper-triangular entries of v and flags every entry
/// outside the lowest cluster; mirrored, diagonal false. Returns a 0/1
/// (1,1,C,C) tensor. Propagates DegenerateInputError.
Tensor build_mask(const Tensor& v, int k);

/// Mean |theta| over masked entries, averaged over the batch and both views.
/// Zero for an empty mask.
Var isw_loss(const Var& theta_x, const Var& theta_tx, const Tensor& mask);

/// Mean over all entries (and the batch) of |theta - I|.
Var dwt_loss(const Var& theta);

/// Covariance statistics for one instrumented stage.
class CovarianceStats {
 public:
  CovarianceStats(int channels, int k);

  /// Folds one batch pair into the running means. Only legal before freeze.
  void update_warmup(const Tensor& theta_x, const Tensor& theta_tx);
  void end_epoch() { ++warmup_epochs_seen_; }
  /// Builds the mask from the accumulated v. Degenerate v freezes an empty
  /// mask and records a warning instead of failing.
  void freeze();

  bool frozen() const { return frozen_; }
  /// Throws ContractError until freeze() has run.
  const Tensor& mask() const;

  int channels() const { return channels_; }
  int k() const { return k_; }
  int warmup_epochs_seen() const { return warmup_epochs_seen_; }
  int batches_seen() const { return batches_; }
  const Tensor& theta() const { return theta_; }
  const Tensor& mu_theta() const { return mu_theta_; }
  const Tensor& v() const { return v_; }
  const std::string& warning() const { return warning_; }
  std::size_t masked_count() const;

 private:
  int channels_;
  int k_;
  int warmup_epochs_seen_ = 0;
  int batches_ = 0;
  bool frozen_ = false;
  Tensor theta_;
  Tensor mu_theta_;
  Tensor v_;
  Tensor mask_;
  std::string warning_;
};

/// Writes the C x C matrix of sample 0 as comma-separated rows.
void write_matrix_csv(const Tensor& m, const std::string& path);

}  // namespace dife::isw
