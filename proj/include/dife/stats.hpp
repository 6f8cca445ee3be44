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

#include <span>
#include <string>
#include <vector>

namespace dife::stats {

/// Regularized incomplete beta I_x(a, b), evaluated with a modified Lentz
/// continued fraction; relative precision about 1e-10 or better. ContractError
/// for a, b <= 0 or x outside [0, 1].
double incomplete_beta(double a, double b, double x);

/// Student-t CDF with `df` > 0 degrees of freedom.
double student_t_cdf(double t, double df);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  int n = 0;
  std::string warning;  // set for the degenerate cases
};

/// Two-sided paired test on d = a - b with n - 1 degrees of freedom.
/// Identical inputs give t = 0, p = 1; a constant nonzero difference gives
/// t = +-inf, p = 0. Both carry a warning.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

struct TTestRow {
  std::string pair;
  TTestResult result;
};
/// pair,t,p,n,input; `input` names what the paired samples are.
void write_ttest_csv(std::span<const TTestRow> rows, const std::string& input,
                     const std::string& path);

}  // namespace dife::stats
