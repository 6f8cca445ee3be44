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

#include "dife/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "dife/errors.hpp"

namespace dife {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

long long parse_int(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  }
  return v;
}

int parse_small_int(const std::string& key, const std::string& text) {
  const long long v = parse_int(key, text);
  if (v < -(1LL << 30) || v > (1LL << 30)) throw ConfigError(key + ": value out of range");
  return static_cast<int>(v);
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError(key + ": expected an unsigned integer, got '" + text + "'");
  }
  return v;
}

double parse_double(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size()) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1") return true;
  if (t == "false" || t == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t.size() < 2 || t.front() != '[' || t.back() != ']') {
    throw ConfigError(key + ": expected a list like [1,2], got '" + text + "'");
  }
  std::vector<int> out;
  const std::string body = trim(t.substr(1, t.size() - 2));
  if (body.empty()) return out;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_small_int(key, item));
  return out;
}

std::string parse_string(const std::string& text) {
  std::string t = trim(text);
  if (t.size() >= 2 && t.front() == '"' && t.back() == '"') t = t.substr(1, t.size() - 2);
  return t;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

template <typename Range>
std::string fmt_list(const Range& r) {
  std::string out = "[";
  bool first = true;
  for (int v : r) {
    if (!first) out += ",";
    out += std::to_string(v);
    first = false;
  }
  return out + "]";
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      {"net.stage_channels",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.net.stage_channels = parse_int_list(k, v);
       },
       [](const RunConfig& c) { return fmt_list(c.net.stage_channels); }},
      {"net.in_channels",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.net.in_channels = parse_small_int(k, v);
       },
       [](const RunConfig& c) { return std::to_string(c.net.in_channels); }},
      {"net.num_classes",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.net.num_classes = parse_small_int(k, v);
       },
       [](const RunConfig& c) { return std::to_string(c.net.num_classes); }},
      {"net.snr_stages",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto list = parse_int_list(k, v);
         c.net.snr_stages = std::set<int>(list.begin(), list.end());
       },
       [](const RunConfig& c) { return fmt_list(c.net.snr_stages); }},
      {"net.isw_stages",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const auto list = parse_int_list(k, v);
         c.net.isw_stages = std::set<int>(list.begin(), list.end());
       },
       [](const RunConfig& c) { return fmt_list(c.net.isw_stages); }},
      {"net.lambda1",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.net.lambda1 = parse_double(k, v);
       },
       [](const RunConfig& c) { return fmt_double(c.net.lambda1); }},
      {"net.lambda2",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.net.lambda2 = parse_double(k, v);
       },
       [](const RunConfig& c) { return fmt_double(c.net.lambda2); }},
      {"net.attention_reduction",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.net.attention_reduction = parse_small_int(k, v);
       },
       [](const RunConfig& c) { return std::to_string(c.net.attention_reduction); }},
      {"net.k",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.net.k = parse_small_int(k, v);
       },
       [](const RunConfig& c) { return std::to_string(c.net.k); }},
      {"net.dc_mode",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         try {
           c.net.dc_mode = snr::parse_dc_mode(parse_string(v));
         } catch (const Error& e) {
           throw ConfigError(k + ": " + e.what());
         }
       },
       [](const RunConfig& c) { return std::string(snr::to_string(c.net.dc_mode)); }},
      {"net.whitening",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         const std::string s = parse_string(v);
         if (s == "selective") {
           c.net.whitening = Whitening::kSelective;
         } else if (s == "full") {
           c.net.whitening = Whitening::kFull;
         } else {
           throw ConfigError(k + ": expected selective or full, got '" + s + "'");
         }
       },
       [](const RunConfig& c) { return std::string(to_string(c.net.whitening)); }},
      {"net.in_eps",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.net.in_eps = parse_double(k, v);
       },
       [](const RunConfig& c) { return fmt_double(c.net.in_eps); }},
      {"train.lr0",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.lr0 = parse_double(k, v);
       },
       [](const RunConfig& c) { return fmt_double(c.train.lr0); }},
      {"train.momentum",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.momentum = parse_double(k, v);
       },
       [](const RunConfig& c) { return fmt_double(c.train.momentum); }},
      {"train.poly_power",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.poly_power = parse_double(k, v);
       },
       [](const RunConfig& c) { return fmt_double(c.train.poly_power); }},
      {"train.epochs",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.epochs = parse_small_int(k, v);
       },
       [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
      {"train.batch_size",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.batch_size = parse_small_int(k, v);
       },
       [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
      {"train.seed",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.seed = parse_u64(k, v);
         c.seed_set = true;
       },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      {"train.warmup_epochs",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.warmup_epochs = parse_small_int(k, v);
       },
       [](const RunConfig& c) { return std::to_string(c.train.warmup_epochs); }},
      {"train.early_stop_patience",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.early_stop_patience = parse_small_int(k, v);
       },
       [](const RunConfig& c) { return std::to_string(c.train.early_stop_patience); }},
      {"train.augment",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.augment = parse_bool(k, v);
       },
       [](const RunConfig& c) { return std::string(c.train.augment ? "true" : "false"); }},
      {"twin.brightness",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.twin.brightness_jitter = parse_double(k, v);
       },
       [](const RunConfig& c) { return fmt_double(c.twin.brightness_jitter); }},
      {"twin.contrast",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.twin.contrast_jitter = parse_double(k, v);
       },
       [](const RunConfig& c) { return fmt_double(c.twin.contrast_jitter); }},
      {"twin.hue",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.twin.hue_rotation = parse_double(k, v);
       },
       [](const RunConfig& c) { return fmt_double(c.twin.hue_rotation); }},
      {"twin.gamma",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.twin.gamma_jitter = parse_double(k, v);
       },
       [](const RunConfig& c) { return fmt_double(c.twin.gamma_jitter); }},
      {"twin.blur",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.twin.blur_sigma_max = parse_double(k, v);
       },
       [](const RunConfig& c) { return fmt_double(c.twin.blur_sigma_max); }},
      {"data.root",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.data_root = parse_string(v);
       },
       [](const RunConfig& c) { return c.data_root; }},
      {"output.dir",
       [](RunConfig& c, const std::string&, const std::string& v) {
         c.out_dir = parse_string(v);
       },
       [](const RunConfig& c) { return c.out_dir; }},
  };
  return fields;
}

const Field& field(const std::string& key) {
  const std::string canon = canonical_key(key);
  for (const Field& f : schema()) {
    if (canon == f.key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::string canonical_key(const std::string& raw) {
  const std::string key = trim(raw);
  const Field* hit = nullptr;
  for (const Field& f : schema()) {
    const std::string full = f.key;
    if (full == key) return full;
    if (full.size() > key.size() + 1 &&
        full.compare(full.size() - key.size(), key.size(), key) == 0 &&
        full[full.size() - key.size() - 1] == '.') {
      if (hit != nullptr) throw ConfigError("ambiguous config key '" + key + "'");
      hit = &f;
    }
  }
  if (hit == nullptr) throw ConfigError("unknown config key '" + key + "'");
  return hit->key;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Field& f : schema()) out.emplace_back(f.key);
  return out;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const Field& f = field(key);
  f.set(*this, f.key, value);
}

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

void RunConfig::validate() const {
  if (!seed_set) throw ConfigError("train.seed is mandatory (config file or --set seed=N)");
  net.validate();
  train.validate();
  for (double v : {twin.brightness_jitter, twin.contrast_jitter, twin.hue_rotation,
                   twin.gamma_jitter, twin.blur_sigma_max}) {
    if (!(v >= 0.0)) throw ConfigError("twin.* ranges must be >= 0");
  }
  if (twin.gamma_jitter >= 1.0) throw ConfigError("twin.gamma must be < 1");
}

std::string RunConfig::resolved() const {
  std::string out;
  for (const Field& f : schema()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

std::pair<std::string, std::string> split_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("expected key=value, got '" + text + "'");
  }
  std::string key = trim(text.substr(0, eq));
  if (key.empty()) throw ConfigError("empty key in '" + text + "'");
  return {key, trim(text.substr(eq + 1))};
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin) {
  std::stringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    try {
      const auto [key, value] = split_assignment(line);
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, ss.str(), path);
  return cfg;
}

}  // namespace dife
