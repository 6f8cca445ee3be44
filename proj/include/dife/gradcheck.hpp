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
#include <functional>
#include <string>
#include <vector>

#include "dife/autodiff.hpp"

namespace dife {

using ScalarFn = std::function<double(const Tensor&)>;
/// Builds a scalar on `tape` from the leaf `x`.
using TapeFn = std::function<Var(Tape& tape, const Var& x)>;

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every
/// element. Throws OracleError if two baseline evaluations of f disagree.
Tensor finite_difference_gradient(const ScalarFn& f, const Tensor& x,
                                  double eps = 1e-5);

/// Same, restricted to the listed flat indices (others left at zero).
Tensor finite_difference_gradient(const ScalarFn& f, const Tensor& x,
                                  const std::vector<std::size_t>& indices,
                                  double eps = 1e-5);

/// d fn / d x through the tape.
Tensor analytic_gradient(const TapeFn& fn, const Tensor& x);

/// Value of fn on a throwaway tape, for use as a ScalarFn.
double evaluate_scalar(const TapeFn& fn, const Tensor& x);

/// max_i |a_i - b_i| / max(||a||_inf, ||b||_inf), with a floor of 1e-12 on
/// the denominator. Restricted to `indices` when non-empty.
double relative_error(const Tensor& analytic, const Tensor& numeric,
                      const std::vector<std::size_t>& indices = {});

struct GradCheckResult {
  std::string name;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_relative_error < tolerance; }
};

/// Compares the tape gradient of `fn` against finite differences at `x`.
GradCheckResult check_gradient(const std::string& name, const TapeFn& fn,
                               const Tensor& x, double tolerance,
                               double eps = 1e-5);

/// Tensor with elements uniform in [lo, hi], from a seeded generator.
Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -2.0,
                     double hi = 2.0);

}  // namespace dife
