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

// Finite-difference suites covering every differentiable op, the block
// losses, and the composed network objective.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dife/gradcheck.hpp"

namespace dife {

inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kNetTolerance = 1e-3;

/// "ops", "snr", "isw", "net".
const std::vector<std::string>& gradcheck_modules();

/// Runs one module's checks on inputs drawn from `seed`. Unknown module is a
/// ConfigError.
std::vector<GradCheckResult> run_gradcheck_suite(const std::string& module,
                                                 std::uint64_t seed);

}  // namespace dife
