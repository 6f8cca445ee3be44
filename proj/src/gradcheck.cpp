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

#include "dife/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "dife/errors.hpp"

namespace dife {

Tensor finite_difference_gradient(const ScalarFn& f, const Tensor& x,
                                  const std::vector<std::size_t>& indices,
                                  double eps) {
  if (!(eps > 0.0)) throw ContractError("finite difference eps must be > 0");
  const double base_a = f(x);
  const double base_b = f(x);
  if (!(base_a == base_b) && !(std::isnan(base_a) && std::isnan(base_b))) {
    throw OracleError("function is not deterministic (" +
                      std::to_string(base_a) + " vs " + std::to_string(base_b) +
                      ")");
  }
  Tensor grad(x.shape());
  Tensor probe = x;
  for (std::size_t i : indices) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

Tensor finite_difference_gradient(const ScalarFn& f, const Tensor& x,
                                  double eps) {
  std::vector<std::size_t> all(x.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return finite_difference_gradient(f, x, all, eps);
}

Tensor analytic_gradient(const TapeFn& fn, const Tensor& x) {
  Tape tape;
  Var leaf = tape.leaf(x);
  Var out = fn(tape, leaf);
  tape.backward(out);
  return tape.grad(leaf);
}

double evaluate_scalar(const TapeFn& fn, const Tensor& x) {
  Tape tape;
  Var leaf = tape.constant(x);
  return fn(tape, leaf).value().item();
}

double relative_error(const Tensor& analytic, const Tensor& numeric,
                      const std::vector<std::size_t>& indices) {
  expect_same_shape(analytic.shape(), numeric.shape(), "relative_error");
  double num = 0.0;
  double scale = 0.0;
  auto visit = [&](std::size_t i) {
    num = std::max(num, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  };
  if (indices.empty()) {
    for (std::size_t i = 0; i < analytic.size(); ++i) visit(i);
  } else {
    for (std::size_t i : indices) visit(i);
  }
  return num / std::max(scale, 1e-12);
}

GradCheckResult check_gradient(const std::string& name, const TapeFn& fn,
                               const Tensor& x, double tolerance, double eps) {
  const Tensor analytic = analytic_gradient(fn, x);
  const Tensor numeric = finite_difference_gradient(
      [&](const Tensor& t) { return evaluate_scalar(fn, t); }, x, eps);
  return GradCheckResult{name, relative_error(analytic, numeric), tolerance};
}

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace dife
