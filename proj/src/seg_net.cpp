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

#include "dife/seg_net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dife/errors.hpp"
#include "dife/ops.hpp"

namespace dife {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

const char* to_string(Whitening w) {
  return w == Whitening::kFull ? "full" : "selective";
}

void NetConfig::validate() const {
  if (stage_channels.empty()) throw ConfigError("net.stage_channels is empty");
  for (int c : stage_channels) {
    if (c < 2) throw ConfigError("net.stage_channels entries must be >= 2");
  }
  if (in_channels < 1) throw ConfigError("net.in_channels must be >= 1");
  if (num_classes < 2) throw ConfigError("net.num_classes must be >= 2");
  const int n = stages();
  for (int s : snr_stages) {
    if (s < 1 || s > n) {
      throw ConfigError("net.snr_stages entry " + std::to_string(s) +
                        " outside 1.." + std::to_string(n));
    }
    const int c = stage_channels[s - 1];
    if (attention_reduction < 1 || c % attention_reduction != 0) {
      throw ConfigError("net.attention_reduction " +
                        std::to_string(attention_reduction) +
                        " does not divide stage " + std::to_string(s) +
                        " width " + std::to_string(c));
    }
  }
  for (int s : isw_stages) {
    if (s < 1 || s > n) {
      throw ConfigError("net.isw_stages entry " + std::to_string(s) +
                        " outside 1.." + std::to_string(n));
    }
  }
  if (!(lambda1 >= 0.0)) throw ConfigError("net.lambda1 must be >= 0");
  if (!(lambda2 >= 0.0)) throw ConfigError("net.lambda2 must be >= 0");
  if (k < 2) throw ConfigError("net.k must be >= 2");
  if (!(in_eps > 0.0)) throw ConfigError("net.in_eps must be > 0");
}

SegNet::SegNet(NetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  // Backbone and attention draw from separate streams so that adding SNR
  // blocks leaves the backbone initialization untouched.
  std::mt19937_64 rng(seed);
  std::mt19937_64 att_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  int c_in = cfg_.in_channels;
  for (int s = 1; s <= cfg_.stages(); ++s) {
    const int c = cfg_.stage_channels[s - 1];
    const std::string prefix = "enc" + std::to_string(s);
    Stage stage;
    stage.conv1 = make_conv(prefix + ".conv1", c_in, c, 3, rng);
    stage.conv2 = make_conv(prefix + ".conv2", c, c, 3, rng);
    stages_.push_back(stage);
    c_in = c;
  }
  for (int s = cfg_.stages() - 1; s >= 1; --s) {
    const int c_deep = cfg_.stage_channels[s];
    const int c_skip = cfg_.stage_channels[s - 1];
    decoder_.push_back(make_conv("dec" + std::to_string(s) + ".conv",
                                 c_deep + c_skip, c_skip, 3, rng));
  }
  head_ = make_conv("head", cfg_.stage_channels[0], cfg_.num_classes, 1, rng);
  for (int s : cfg_.snr_stages) {
    attention_.push_back(std::make_unique<snr::ChannelAttention>(
        "enc" + std::to_string(s) + ".snr", cfg_.stage_channels[s - 1],
        cfg_.attention_reduction, att_rng));
    stages_[s - 1].attention = attention_.back().get();
  }
}

SegNet::Conv SegNet::make_conv(const std::string& name, int c_in, int c_out,
                               int kernel, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(
      0.0, std::sqrt(2.0 / (static_cast<double>(c_in) * kernel * kernel)));
  Tensor w(Shape{c_out, c_in, kernel, kernel});
  for (double& v : w.data()) v = dist(rng);
  params_.push_back(std::make_unique<Parameter>(name + ".w", std::move(w)));
  Parameter* wp = params_.back().get();
  params_.push_back(
      std::make_unique<Parameter>(name + ".b", Tensor(Shape{1, c_out, 1, 1})));
  return Conv{wp, params_.back().get()};
}

std::vector<Parameter*> SegNet::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  for (auto& a : attention_) {
    for (Parameter* p : a->parameters()) out.push_back(p);
  }
  return out;
}

std::size_t SegNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  for (const auto& a : attention_) {
    n += a->fc1_w.value.size() + a->fc1_b.value.size() + a->fc2_w.value.size() +
         a->fc2_b.value.size();
  }
  return n;
}

Var SegNet::apply(Tape& tape, const Conv& conv, const Var& x, int pad) {
  return ops::conv2d(x, tape.param(*conv.w), tape.param(*conv.b), 1, pad);
}

void SegNet::check_input(const Tensor& x) const {
  const Shape s = x.shape();
  if (s.c != cfg_.in_channels) {
    throw DimensionError("network input has c=" + std::to_string(s.c) +
                         ", expected " + std::to_string(cfg_.in_channels));
  }
  const int factor = 1 << (cfg_.stages() - 1);
  if (s.h % factor != 0 || s.w % factor != 0) {
    throw DimensionError("input h/w " + s.str() + " must be divisible by " +
                         std::to_string(factor));
  }
}

Var SegNet::encode_stage(Tape& tape, int s, const Var& in, bool use_dife,
                         std::optional<snr::SnrOutput>* snr_out) {
  const Stage& stage = stages_[s - 1];
  Var x = s > 1 ? ops::avg_pool2x(in) : in;
  x = ops::relu(apply(tape, stage.conv1, x, 1));
  x = ops::relu(apply(tape, stage.conv2, x, 1));
  if (use_dife && stage.attention != nullptr) {
    snr::SnrOutput out = snr::snr_forward(x, *stage.attention, cfg_.in_eps);
    x = out.f_plus;
    if (snr_out != nullptr) *snr_out = out;
  }
  return x;
}

Var SegNet::decode(Tape& tape, std::vector<Var>& skips) {
  Var d = skips.back();
  std::size_t level = 0;
  for (int s = cfg_.stages() - 1; s >= 1; --s, ++level) {
    d = ops::upsample_bilinear2x(d);
    d = ops::concat_channels(d, skips[s - 1]);
    d = ops::relu(apply(tape, decoder_[level], d, 1));
  }
  return apply(tape, head_, d, 0);
}

Var SegNet::forward(Tape& tape, const Tensor& x) {
  check_input(x);
  std::vector<Var> skips;
  Var h = tape.constant(x);
  for (int s = 1; s <= cfg_.stages(); ++s) {
    h = encode_stage(tape, s, h, true, nullptr);
    skips.push_back(h);
  }
  return decode(tape, skips);
}

Var SegNet::forward_plain(Tape& tape, const Tensor& x) {
  check_input(x);
  std::vector<Var> skips;
  Var h = tape.constant(x);
  for (int s = 1; s <= cfg_.stages(); ++s) {
    h = encode_stage(tape, s, h, false, nullptr);
    skips.push_back(h);
  }
  return decode(tape, skips);
}

ForwardRecord SegNet::forward_pair(Tape& tape, const Tensor& x, const Tensor& tx) {
  check_input(x);
  expect_same_shape(x.shape(), tx.shape(), "forward_pair views");
  ForwardRecord record;
  std::vector<Var> skips;
  Var h = tape.constant(x);
  for (int s = 1; s <= cfg_.stages(); ++s) {
    std::optional<snr::SnrOutput> snr_out;
    h = encode_stage(tape, s, h, true, &snr_out);
    skips.push_back(h);
    const bool whiten = cfg_.isw_stages.count(s) > 0;
    if (snr_out || whiten) {
      StageRecord rec;
      rec.stage = s;
      rec.snr = snr_out;
      if (whiten) rec.theta_x = isw::feature_covariance(h, true);
      record.stages.push_back(rec);
    }
  }
  record.logits = decode(tape, skips);

  if (!cfg_.isw_stages.empty() && cfg_.whitening == Whitening::kSelective) {
    const int deepest = *cfg_.isw_stages.rbegin();
    Var t = tape.constant(tx);
    for (int s = 1; s <= deepest; ++s) {
      t = encode_stage(tape, s, t, true, nullptr);
      if (cfg_.isw_stages.count(s) == 0) continue;
      for (StageRecord& rec : record.stages) {
        if (rec.stage == s) rec.theta_tx = isw::feature_covariance(t, true);
      }
    }
  }
  return record;
}

std::vector<Tensor> SegNet::snapshot() const {
  std::vector<Tensor> out;
  for (const auto& p : params_) out.push_back(p->value);
  for (const auto& a : attention_) {
    out.push_back(a->fc1_w.value);
    out.push_back(a->fc1_b.value);
    out.push_back(a->fc2_w.value);
    out.push_back(a->fc2_b.value);
  }
  return out;
}

void SegNet::restore(const std::vector<Tensor>& weights) {
  auto params = parameters();
  if (weights.size() != params.size()) {
    throw ContractError("restore: snapshot has " + std::to_string(weights.size()) +
                        " tensors, network has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    expect_same_shape(params[i]->value.shape(), weights[i].shape(),
                      params[i]->name.c_str());
    params[i]->value = weights[i];
  }
}

Var task_loss(const Var& logits, std::span<const int> labels, int ignore_index) {
  return ops::cross_entropy(logits, labels, ignore_index);
}

LossBreakdown total_loss(const ForwardRecord& record, std::span<const int> labels,
                         const NetConfig& cfg,
                         const std::vector<isw::CovarianceStats>* stats,
                         bool whitening_active) {
  LossBreakdown out;
  Var total = task_loss(record.logits, labels);
  out.task = total.value().item();
  std::size_t stat_index = 0;
  for (const StageRecord& rec : record.stages) {
    if (rec.snr && cfg.lambda2 != 0.0 && cfg.dc_mode != snr::DcMode::kNone) {
      Var dc = snr::dual_causality_loss(rec.snr->f_norm, rec.snr->f_plus,
                                        rec.snr->f_minus, cfg.dc_mode);
      out.dc += dc.value().item();
      total = ops::add(total, ops::scale(dc, cfg.lambda2));
    }
    if (!rec.theta_x.valid()) continue;
    const std::size_t idx = stat_index++;
    if (!whitening_active || cfg.lambda1 == 0.0) continue;
    Var term;
    if (cfg.whitening == Whitening::kFull) {
      term = isw::dwt_loss(rec.theta_x);
    } else {
      if (stats == nullptr || idx >= stats->size()) {
        throw ContractError("selective whitening needs covariance statistics");
      }
      term = isw::isw_loss(rec.theta_x, rec.theta_tx, (*stats)[idx].mask());
    }
    out.isw += term.value().item();
    total = ops::add(total, ops::scale(term, cfg.lambda1));
  }
  out.total = total;
  return out;
}

namespace {

template <typename T>
void put(std::ofstream& out, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  out.write(bytes, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  template <typename T>
  T get(const char* what) {
    if (pos_ + sizeof(T) > buf_.size()) {
      throw FormatError(std::string("truncated checkpoint reading ") + what,
                        static_cast<long long>(pos_));
    }
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    if (pos_ + n > buf_.size()) {
      throw FormatError(std::string("truncated checkpoint reading ") + what,
                        static_cast<long long>(pos_));
    }
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

constexpr std::uint16_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(SegNet& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write("DIFE", 4);
  put<std::uint16_t>(out, kCheckpointVersion);
  auto params = net.parameters();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (Parameter* p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    const Shape s = p->value.shape();
    for (int d : {s.n, s.c, s.h, s.w}) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (double v : p->value.data()) put<double>(out, v);
  }
  if (!out) throw IoError("short write to checkpoint " + path);
}

void load_checkpoint(SegNet& net, const std::string& path) {
  Reader in(path);
  if (in.bytes(4, "magic") != "DIFE") throw FormatError("bad magic", 0);
  const auto version = in.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  auto params = net.parameters();
  const auto count = in.get<std::uint32_t>("parameter count");
  if (count != params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(count) +
                      " parameters, network config expects " +
                      std::to_string(params.size()));
  }
  std::vector<Tensor> loaded;
  for (Parameter* p : params) {
    const auto len = in.get<std::uint32_t>("name length");
    const std::string name = in.bytes(len, "name");
    if (name != p->name) {
      throw ConfigError("checkpoint parameter '" + name + "' where network expects '" +
                        p->name + "'");
    }
    Shape s;
    s.n = static_cast<int>(in.get<std::uint32_t>("dims"));
    s.c = static_cast<int>(in.get<std::uint32_t>("dims"));
    s.h = static_cast<int>(in.get<std::uint32_t>("dims"));
    s.w = static_cast<int>(in.get<std::uint32_t>("dims"));
    if (!(s == p->value.shape())) {
      throw ConfigError("checkpoint shape " + s.str() + " for " + name +
                        " does not match network shape " + p->value.shape().str());
    }
    Tensor t(s);
    for (double& v : t.data()) v = in.get<double>("payload");
    loaded.push_back(std::move(t));
  }
  if (!in.done()) {
    throw FormatError("trailing bytes after checkpoint payload",
                      static_cast<long long>(in.pos()));
  }
  net.restore(loaded);
}

}  // namespace dife
