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

#include "dife/isw.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "dife/errors.hpp"
#include "dife/ops.hpp"

namespace dife::isw {
namespace {

void expect_square(const Shape& s, const char* what) {
  if (s.c != 1 || s.h != s.w) {
    throw DimensionError(std::string(what) + ": expected (n,1,C,C), got " +
                         s.str());
  }
}

}  // namespace

Var feature_covariance(const Var& f, bool center) {
  const Shape s = f.shape();
  if (s.plane() == 0) throw ContractError("feature_covariance with h*w = 0");
  Var m = ops::to_matrix(center ? ops::center_spatial(f) : f);
  Var gram = ops::matmul(m, ops::transpose(m));
  return ops::scale(gram, 1.0 / static_cast<double>(s.plane()));
}

Tensor batch_mean(const Tensor& m) {
  const Shape s = m.shape();
  Tensor out(Shape{1, s.c, s.h, s.w});
  const std::size_t block = out.size();
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < block; ++i) out[i] += m[n * block + i];
  }
  for (double& v : out.data()) v /= s.n;
  return out;
}

VarianceStats covariance_variance(const Tensor& theta_x, const Tensor& theta_tx) {
  expect_same_shape(theta_x.shape(), theta_tx.shape(), "covariance_variance");
  const Shape s = theta_x.shape();
  expect_square(s, "covariance_variance");
  const std::size_t block = s.plane();
  VarianceStats out{Tensor(Shape{1, 1, s.h, s.w}), Tensor(Shape{1, 1, s.h, s.w})};
  for (int n = 0; n < s.n; ++n) {
    for (std::size_t i = 0; i < block; ++i) {
      const double a = theta_x[n * block + i];
      const double b = theta_tx[n * block + i];
      const double mu = 0.5 * (a + b);
      out.v[i] += 0.5 * ((a - mu) * (a - mu) + (b - mu) * (b - mu));
      out.mu_theta[i] += mu;
    }
  }
  for (std::size_t i = 0; i < block; ++i) {
    out.v[i] /= s.n;
    out.mu_theta[i] /= s.n;
  }
  return out;
}

KMeans1d kmeans_1d(std::span<const double> values, int k) {
  if (k < 2) throw ContractError("kmeans_1d needs k >= 2");
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] < values[b];
  });
  std::size_t distinct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0 || values[order[i]] != values[order[i - 1]]) ++distinct;
  }
  if (distinct < static_cast<std::size_t>(k)) {
    throw DegenerateInputError(std::to_string(distinct) +
                               " distinct values for k=" + std::to_string(k));
  }

  std::vector<double> sorted(n);
  for (std::size_t i = 0; i < n; ++i) sorted[i] = values[order[i]];
  // Prefix sums are taken relative to the median to limit cancellation.
  const double shift = sorted[n / 2];
  std::vector<double> s1(n + 1, 0.0);
  std::vector<double> s2(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = sorted[i] - shift;
    s1[i + 1] = s1[i] + d;
    s2[i + 1] = s2[i] + d * d;
  }
  // SSE of sorted[i, j).
  auto cost = [&](std::size_t i, std::size_t j) {
    const double len = static_cast<double>(j - i);
    const double sum = s1[j] - s1[i];
    return std::max(0.0, (s2[j] - s2[i]) - sum * sum / len);
  };

  const double inf = std::numeric_limits<double>::infinity();
  const std::size_t kk = static_cast<std::size_t>(k);
  // best[m][j]: minimum SSE of the first j values in m+1 clusters.
  std::vector<std::vector<double>> best(kk, std::vector<double>(n + 1, inf));
  std::vector<std::vector<std::size_t>> split(kk, std::vector<std::size_t>(n + 1, 0));
  for (std::size_t j = 1; j <= n; ++j) best[0][j] = cost(0, j);
  for (std::size_t m = 1; m < kk; ++m) {
    for (std::size_t j = m + 1; j <= n; ++j) {
      for (std::size_t i = m; i < j; ++i) {
        const double c = best[m - 1][i] + cost(i, j);
        if (c < best[m][j]) {
          best[m][j] = c;
          split[m][j] = i;
        }
      }
    }
  }

  std::vector<int> sorted_labels(n, 0);
  std::size_t end = n;
  for (std::size_t m = kk; m-- > 0;) {
    const std::size_t begin = m == 0 ? 0 : split[m][end];
    for (std::size_t i = begin; i < end; ++i) sorted_labels[i] = static_cast<int>(m);
    end = begin;
  }

  KMeans1d out;
  out.labels.assign(n, 0);
  out.centroids.assign(kk, 0.0);
  std::vector<std::size_t> counts(kk, 0);
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[order[i]] = sorted_labels[i];
    out.centroids[sorted_labels[i]] += sorted[i];
    ++counts[sorted_labels[i]];
  }
  for (std::size_t m = 0; m < kk; ++m) out.centroids[m] /= counts[m];
  for (std::size_t i = 0; i < n; ++i) {
    const double d = sorted[i] - out.centroids[sorted_labels[i]];
    out.sse += d * d;
  }
  return out;
}

Tensor build_mask(const Tensor& v, int k) {
  const Shape s = v.shape();
  if (s.n != 1) throw DimensionError("build_mask expects a single (1,1,C,C) matrix");
  expect_square(s, "build_mask");
  const int c = s.h;
  std::vector<double> upper;
  for (int i = 0; i < c; ++i) {
    for (int j = i + 1; j < c; ++j) upper.push_back(v.at(0, 0, i, j));
  }
  const KMeans1d clusters = kmeans_1d(upper, k);
  Tensor mask(s);
  std::size_t idx = 0;
  for (int i = 0; i < c; ++i) {
    for (int j = i + 1; j < c; ++j, ++idx) {
      if (clusters.labels[idx] > 0) {
        mask.at(0, 0, i, j) = 1.0;
        mask.at(0, 0, j, i) = 1.0;
      }
    }
  }
  return mask;
}

Var isw_loss(const Var& theta_x, const Var& theta_tx, const Tensor& mask) {
  expect_same_shape(theta_x.shape(), theta_tx.shape(), "isw_loss");
  const Shape s = theta_x.shape();
  expect_square(s, "isw_loss");
  if (!(mask.shape() == Shape{1, 1, s.h, s.w})) {
    throw DimensionError("isw_loss mask " + mask.shape().str() +
                         " for covariance " + s.str());
  }
  Tape& tape = *theta_x.tape();
  double count = 0.0;
  for (double m : mask.data()) count += m != 0.0 ? 1.0 : 0.0;
  if (count == 0.0) return tape.constant(Tensor::scalar(0.0));

  Tensor tiled(s);
  for (int n = 0; n < s.n; ++n) {
    std::copy(mask.data().begin(), mask.data().end(),
              tiled.data().begin() + static_cast<std::ptrdiff_t>(n * s.plane()));
  }
  Var m = tape.constant(std::move(tiled));
  const double denom = 2.0 * count * s.n;
  Var both = ops::add(ops::sum_all(ops::abs(ops::mul(theta_x, m))),
                      ops::sum_all(ops::abs(ops::mul(theta_tx, m))));
  return ops::scale(both, 1.0 / denom);
}

Var dwt_loss(const Var& theta) {
  const Shape s = theta.shape();
  expect_square(s, "dwt_loss");
  Tensor eye(s);
  for (int n = 0; n < s.n; ++n) {
    for (int i = 0; i < s.h; ++i) eye.at(n, 0, i, i) = 1.0;
  }
  Var id = theta.tape()->constant(std::move(eye));
  return ops::mean_all(ops::abs(ops::sub(theta, id)));
}

CovarianceStats::CovarianceStats(int channels, int k)
    : channels_(channels),
      k_(k),
      theta_(Shape{1, 1, channels, channels}),
      mu_theta_(Shape{1, 1, channels, channels}),
      v_(Shape{1, 1, channels, channels}),
      mask_(Shape{1, 1, channels, channels}) {
  if (k < 2) throw ConfigError("ISW cluster count k must be >= 2");
}

void CovarianceStats::update_warmup(const Tensor& theta_x, const Tensor& theta_tx) {
  if (frozen_) throw ContractError("update_warmup after the mask was frozen");
  const VarianceStats stats = covariance_variance(theta_x, theta_tx);
  if (!(stats.v.shape() == v_.shape())) {
    throw DimensionError("covariance of " + stats.v.shape().str() +
                         " for stage with " + std::to_string(channels_) +
                         " channels");
  }
  ++batches_;
  const double w = 1.0 / batches_;
  const Tensor theta = batch_mean(theta_x);
  for (std::size_t i = 0; i < v_.size(); ++i) {
    v_[i] += (stats.v[i] - v_[i]) * w;
    mu_theta_[i] += (stats.mu_theta[i] - mu_theta_[i]) * w;
    theta_[i] = theta[i];
  }
}

void CovarianceStats::freeze() {
  if (frozen_) return;
  try {
    mask_ = build_mask(v_, k_);
  } catch (const DegenerateInputError& e) {
    mask_ = Tensor(v_.shape());
    warning_ = std::string("empty ISW mask: ") + e.what();
  }
  frozen_ = true;
}

const Tensor& CovarianceStats::mask() const {
  if (!frozen_) throw ContractError("ISW mask requested before warmup froze it");
  return mask_;
}

std::size_t CovarianceStats::masked_count() const {
  return static_cast<std::size_t>(
      std::count_if(mask_.data().begin(), mask_.data().end(),
                    [](double m) { return m != 0.0; }));
}

void write_matrix_csv(const Tensor& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out.precision(17);
  const Shape s = m.shape();
  for (int i = 0; i < s.h; ++i) {
    for (int j = 0; j < s.w; ++j) {
      if (j > 0) out << ',';
      out << m.at(0, 0, i, j);
    }
    out << '\n';
  }
}

}  // namespace dife::isw
