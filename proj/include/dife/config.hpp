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

// Run configuration: a flat `section.key = value` file plus overrides.
//
//   # comment
//   net.snr_stages = [2,3]
//   train.seed = 7
//
// Keys are checked against a fixed schema. A bare key (`seed`, `lambda1`) is
// accepted when it is the unique suffix of a schema key. Every run must set
// train.seed.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dife/seg_net.hpp"
#include "dife/synth_data.hpp"
#include "dife/train.hpp"

namespace dife {

struct RunConfig {
  NetConfig net;
  TrainConfig train;
  data::PhotometricTransform twin;
  std::string data_root;
  std::string out_dir;
  bool seed_set = false;

  /// Applies one `key = value` assignment; throws ConfigError naming the key
  /// when it is unknown or the value does not parse.
  void set(const std::string& key, const std::string& value);
  /// Value of a schema key in canonical text form.
  std::string get(const std::string& key) const;
  /// Cross-field checks plus the mandatory seed.
  void validate() const;
  /// Every schema key with its current value, one `key = value` per line.
  std::string resolved() const;
};

/// Resolves `key` against the schema (exact or unique suffix match).
std::string canonical_key(const std::string& key);
/// All schema keys in declaration order.
std::vector<std::string> config_keys();

/// Parses file text. Errors carry the line number.
void apply_config_text(RunConfig& cfg, const std::string& text,
                       const std::string& origin = "config");
RunConfig load_config(const std::string& path);
/// Splits `key=value`.
std::pair<std::string, std::string> split_assignment(const std::string& text);

}  // namespace dife
