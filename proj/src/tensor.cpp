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

#include "dife/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "dife/errors.hpp"

namespace dife {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
    throw DimensionError("non-positive extent " + shape.str());
  }
  data_.assign(shape.numel(), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
    throw DimensionError("non-positive extent " + shape.str());
  }
  if (data_.size() != shape.numel()) {
    throw DimensionError("buffer of " + std::to_string(data_.size()) +
                         " elements for shape " + shape.str());
  }
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor(Shape{1, 1, 1, static_cast<int>(values.size())},
                std::vector<double>(values));
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw DimensionError("item() on shape " + shape_.str());
  }
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != shape_.numel()) {
    throw DimensionError("cannot reshape " + shape_.str() + " to " +
                         shape.str());
  }
  return Tensor(shape, data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void expect_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a == b) return;
  std::string axes;
  if (a.n != b.n) axes += " n";
  if (a.c != b.c) axes += " c";
  if (a.h != b.h) axes += " h";
  if (a.w != b.w) axes += " w";
  throw DimensionError(std::string(what) + ": " + a.str() + " vs " + b.str() +
                       " (mismatched axes:" + axes + ")");
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  expect_same_shape(a.shape(), b.shape(), "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace dife
