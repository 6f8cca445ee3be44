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

#include "dife/gradcheck_suites.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "dife/errors.hpp"
#include "dife/isw.hpp"
#include "dife/ops.hpp"
#include "dife/seg_net.hpp"
#include "dife/snr.hpp"
#include "dife/synth_data.hpp"

namespace dife {
namespace {

// Projects a tensor-valued op onto a scalar with fixed random weights so
// that every output element contributes a distinct direction.
Var project(Tape& tape, const Var& y, std::uint64_t seed) {
  Var w = tape.constant(random_tensor(y.shape(), seed ^ 0x51ed2701ULL, -1.0, 1.0));
  return ops::sum_all(ops::mul(y, w));
}

class Suite {
 public:
  Suite(std::string module, std::uint64_t seed) : module_(std::move(module)), seed_(seed) {}

  Tensor input(Shape s, double lo = -2.0, double hi = 2.0) {
    return random_tensor(s, seed_ * 1000003ULL + counter_++, lo, hi);
  }

  /// Checks d/dx of project(op(x)).
  void op(const std::string& name, const Tensor& x,
          const std::function<Var(Tape&, const Var&)>& f, double tol = kOpTolerance) {
    const std::uint64_t pseed = seed_ + counter_++;
    add(check_gradient(
        name, [&](Tape& t, const Var& v) { return project(t, f(t, v), pseed); }, x, tol));
  }

  /// Checks a scalar-valued function directly.
  void scalar(const std::string& name, const Tensor& x, const TapeFn& f,
              double tol = kOpTolerance, double eps = 1e-5) {
    add(check_gradient(name, f, x, tol, eps));
  }

  void add(GradCheckResult r) {
    r.name = module_ + "." + r.name;
    results_.push_back(std::move(r));
  }

  std::uint64_t seed() const { return seed_; }
  std::vector<GradCheckResult> take() { return std::move(results_); }

 private:
  std::string module_;
  std::uint64_t seed_;
  std::uint64_t counter_ = 1;
  std::vector<GradCheckResult> results_;
};

void ops_suite(Suite& s) {
  const Shape img{2, 3, 4, 4};
  {
    const Tensor x = s.input(img);
    const Tensor w = s.input({4, 3, 3, 3}, -1, 1);
    const Tensor b = s.input({1, 4, 1, 1}, -1, 1);
    s.op("conv2d[x]", x, [&](Tape& t, const Var& v) {
      return ops::conv2d(v, t.constant(w), t.constant(b), 1, 1);
    });
    s.op("conv2d[w]", w, [&](Tape& t, const Var& v) {
      return ops::conv2d(t.constant(x), v, t.constant(b), 1, 1);
    });
    s.op("conv2d[b]", b, [&](Tape& t, const Var& v) {
      return ops::conv2d(t.constant(x), t.constant(w), v, 1, 1);
    });
    s.op("conv2d[stride2]", x, [&](Tape& t, const Var& v) {
      return ops::conv2d(v, t.constant(w), t.constant(b), 2, 1);
    });
  }
  s.op("relu", s.input(img), [](Tape&, const Var& v) { return ops::relu(v); });
  s.op("sigmoid", s.input(img), [](Tape&, const Var& v) { return ops::sigmoid(v); });
  s.op("abs", s.input(img), [](Tape&, const Var& v) { return ops::abs(v); });
  s.op("softplus", s.input(img, -5, 5), [](Tape&, const Var& v) { return ops::softplus(v); });
  {
    const Tensor other = s.input(img);
    s.op("add", s.input(img),
         [&](Tape& t, const Var& v) { return ops::add(v, t.constant(other)); });
    s.op("sub[a]", s.input(img),
         [&](Tape& t, const Var& v) { return ops::sub(v, t.constant(other)); });
    s.op("sub[b]", s.input(img),
         [&](Tape& t, const Var& v) { return ops::sub(t.constant(other), v); });
    s.op("mul", s.input(img),
         [&](Tape& t, const Var& v) { return ops::mul(v, t.constant(other)); });
    s.op("mul[self]", s.input(img), [](Tape&, const Var& v) { return ops::mul(v, v); });
  }
  s.op("scale", s.input(img), [](Tape&, const Var& v) { return ops::scale(v, -1.7); });
  {
    const Tensor x = s.input(img);
    const Tensor g = s.input({2, 3, 1, 1});
    s.op("mul_channel[x]", x,
         [&](Tape& t, const Var& v) { return ops::mul_channel(v, t.constant(g)); });
    s.op("mul_channel[s]", g,
         [&](Tape& t, const Var& v) { return ops::mul_channel(t.constant(x), v); });
  }
  s.op("global_avg_pool", s.input(img),
       [](Tape&, const Var& v) { return ops::global_avg_pool(v); });
  {
    const Tensor x = s.input({2, 6, 1, 1});
    const Tensor w = s.input({3, 6, 1, 1}, -1, 1);
    const Tensor b = s.input({1, 3, 1, 1}, -1, 1);
    s.op("fully_connected[x]", x, [&](Tape& t, const Var& v) {
      return ops::fully_connected(v, t.constant(w), t.constant(b));
    });
    s.op("fully_connected[w]", w, [&](Tape& t, const Var& v) {
      return ops::fully_connected(t.constant(x), v, t.constant(b));
    });
    s.op("fully_connected[b]", b, [&](Tape& t, const Var& v) {
      return ops::fully_connected(t.constant(x), t.constant(w), v);
    });
  }
  s.op("softmax_channels", s.input(img),
       [](Tape&, const Var& v) { return ops::softmax_channels(v); });
  s.op("channel_entropy", s.input(img),
       [](Tape&, const Var& v) { return ops::channel_entropy(v); });
  {
    std::mt19937_64 rng(s.seed());
    std::vector<int> labels(2 * 4 * 4);
    for (int& l : labels) l = static_cast<int>(rng() % 4);
    labels[3] = kIgnoreLabel;
    s.scalar("cross_entropy", s.input({2, 4, 4, 4}), [labels](Tape&, const Var& v) {
      return ops::cross_entropy(v, labels, kIgnoreLabel);
    });
  }
  s.op("upsample_bilinear2x", s.input({1, 2, 3, 4}),
       [](Tape&, const Var& v) { return ops::upsample_bilinear2x(v); });
  s.op("avg_pool2x", s.input(img), [](Tape&, const Var& v) { return ops::avg_pool2x(v); });
  {
    const Tensor other = s.input({2, 2, 4, 4});
    s.op("concat_channels[a]", s.input(img), [&](Tape& t, const Var& v) {
      return ops::concat_channels(v, t.constant(other));
    });
    s.op("concat_channels[b]", s.input(img), [&](Tape& t, const Var& v) {
      return ops::concat_channels(t.constant(other), v);
    });
  }
  s.op("instance_norm", s.input(img),
       [](Tape&, const Var& v) { return ops::instance_norm(v, 1e-5); });
  s.op("center_spatial", s.input(img),
       [](Tape&, const Var& v) { return ops::center_spatial(v); });
  s.op("reshape", s.input(img),
       [](Tape&, const Var& v) { return ops::reshape(v, Shape{1, 4, 6, 4}); });
  s.op("to_matrix", s.input(img), [](Tape&, const Var& v) { return ops::to_matrix(v); });
  {
    const Tensor a = s.input({2, 1, 3, 5});
    const Tensor b = s.input({2, 1, 5, 4});
    s.op("matmul[a]", a,
         [&](Tape& t, const Var& v) { return ops::matmul(v, t.constant(b)); });
    s.op("matmul[b]", b,
         [&](Tape& t, const Var& v) { return ops::matmul(t.constant(a), v); });
  }
  s.op("transpose", s.input({2, 1, 3, 5}),
       [](Tape&, const Var& v) { return ops::transpose(v); });
  s.scalar("sum_all", s.input(img), [](Tape&, const Var& v) { return ops::sum_all(v); });
  s.scalar("mean_all", s.input(img), [](Tape&, const Var& v) { return ops::mean_all(v); });
}

void snr_suite(Suite& s) {
  const Shape fs{2, 4, 3, 3};
  std::mt19937_64 rng(s.seed());
  snr::ChannelAttention att("att", 4, 2, rng);
  // Non-trivial biases so the gate is away from 0.5.
  att.fc1_b.value = s.input({1, 2, 1, 1}, -0.5, 0.5);
  att.fc2_b.value = s.input({1, 4, 1, 1}, -0.5, 0.5);

  s.op("instance_normalize", s.input(fs),
       [](Tape&, const Var& v) { return snr::instance_normalize(v); });
  s.op("channel_attention[r]", s.input(fs),
       [&](Tape&, const Var& v) { return snr::channel_attention(v, att); });
  {
    const Tensor r = s.input(fs);
    for (Parameter* p : att.parameters()) {
      s.op("channel_attention[" + p->name + "]", p->value, [&, p](Tape& t, const Var& v) {
        // Swap the parameter value for the leaf by rebuilding the gate.
        Var x = t.constant(r);
        Var w1 = p == &att.fc1_w ? v : t.constant(att.fc1_w.value);
        Var b1 = p == &att.fc1_b ? v : t.constant(att.fc1_b.value);
        Var w2 = p == &att.fc2_w ? v : t.constant(att.fc2_w.value);
        Var b2 = p == &att.fc2_b ? v : t.constant(att.fc2_b.value);
        Var h = ops::relu(ops::fully_connected(ops::global_avg_pool(x), w1, b1));
        return ops::sigmoid(ops::fully_connected(h, w2, b2));
      });
    }
  }
  {
    const Tensor f = s.input(fs);
    const Tensor alpha = s.input({2, 4, 1, 1}, 0.05, 0.95);
    s.op("restitution_split[f]", f, [&](Tape& t, const Var& v) {
      const auto sp = snr::restitution_split(v, snr::instance_normalize(v), t.constant(alpha));
      return ops::add(sp.r_plus, ops::scale(sp.r_minus, 0.3));
    });
    s.op("restitution_split[alpha]", alpha, [&](Tape& t, const Var& v) {
      Var x = t.constant(f);
      const auto sp = snr::restitution_split(x, snr::instance_normalize(x), v);
      return ops::add(sp.r_plus, ops::scale(sp.r_minus, 0.3));
    });
  }
  s.op("pixel_entropy", s.input(fs), [](Tape&, const Var& v) { return snr::pixel_entropy(v); });
  s.scalar("margin_loss", s.input({1, 1, 1, 1}, -3, 3),
           [](Tape&, const Var& v) { return snr::margin_loss(v); });
  s.scalar("margin_loss[large]", Tensor::scalar(35.0),
           [](Tape&, const Var& v) { return snr::margin_loss(v); });

  const std::pair<snr::DcMode, const char*> modes[] = {
      {snr::DcMode::kFull, "L_dc"}, {snr::DcMode::kNoMinus, "L_plus"},
      {snr::DcMode::kNoPlus, "L_minus"}};
  for (const auto& [mode, label] : modes) {
    const snr::DcMode m = mode;
    s.scalar(std::string(label) + "[f]", s.input(fs), [&att, m](Tape&, const Var& v) {
      const snr::SnrOutput o = snr::snr_forward(v, att);
      return snr::dual_causality_loss(o.f_norm, o.f_plus, o.f_minus, m);
    });
  }
  {
    const Tensor f = s.input(fs);
    for (Parameter* p : att.parameters()) {
      const Tensor saved = p->value;
      s.scalar("L_dc[" + p->name + "]", saved, [&, p](Tape& t, const Var& v) {
        Var x = t.constant(f);
        Var norm = snr::instance_normalize(x);
        Var r = ops::sub(x, norm);
        Var w1 = p == &att.fc1_w ? v : t.constant(att.fc1_w.value);
        Var b1 = p == &att.fc1_b ? v : t.constant(att.fc1_b.value);
        Var w2 = p == &att.fc2_w ? v : t.constant(att.fc2_w.value);
        Var b2 = p == &att.fc2_b ? v : t.constant(att.fc2_b.value);
        Var h = ops::relu(ops::fully_connected(ops::global_avg_pool(r), w1, b1));
        Var alpha = ops::sigmoid(ops::fully_connected(h, w2, b2));
        const auto sp = snr::restitution_split(x, norm, alpha);
        return snr::dual_causality_loss(norm, ops::add(norm, sp.r_plus),
                                        ops::add(norm, sp.r_minus));
      });
    }
  }
  s.op("snr_forward", s.input(fs),
       [&](Tape&, const Var& v) { return snr::snr_forward(v, att).f_plus; });
}

void isw_suite(Suite& s) {
  const Shape fs{2, 5, 3, 4};
  s.op("feature_covariance[centered]", s.input(fs),
       [](Tape&, const Var& v) { return isw::feature_covariance(v, true); });
  s.op("feature_covariance[raw]", s.input(fs),
       [](Tape&, const Var& v) { return isw::feature_covariance(v, false); });

  // A mask with roughly half the off-diagonal pairs set, mirrored.
  Tensor mask(Shape{1, 1, 5, 5});
  std::mt19937_64 rng(s.seed());
  for (int i = 0; i < 5; ++i) {
    for (int j = i + 1; j < 5; ++j) {
      if (rng() % 2 == 0 || (i == 0 && j == 1)) {
        mask.at(0, 0, i, j) = 1.0;
        mask.at(0, 0, j, i) = 1.0;
      }
    }
  }
  const Tensor other = s.input({2, 1, 5, 5});
  s.scalar("isw_loss[theta_x]", s.input({2, 1, 5, 5}), [&](Tape& t, const Var& v) {
    return isw::isw_loss(v, t.constant(other), mask);
  });
  s.scalar("isw_loss[theta_tx]", s.input({2, 1, 5, 5}), [&](Tape& t, const Var& v) {
    return isw::isw_loss(t.constant(other), v, mask);
  });
  const Tensor jitter = s.input(fs, -0.3, 0.3);
  s.scalar("isw_loss[features]", s.input(fs), [&](Tape& t, const Var& v) {
    Var tv = ops::scale(ops::add(v, t.constant(jitter)), 1.1);
    return isw::isw_loss(isw::feature_covariance(v, true), isw::feature_covariance(tv, true),
                         mask);
  });
  s.scalar("dwt_loss", s.input({2, 1, 5, 5}),
           [](Tape&, const Var& v) { return isw::dwt_loss(v); });
}

// Total objective w.r.t. every network parameter, sampled at a few entries
// per tensor. Central differences on parameter values directly.
void net_suite(Suite& s) {
  const std::uint64_t seed = s.seed();
  NetConfig cfg;
  SegNet net(cfg, seed);
  const Tensor x = s.input({1, 3, 8, 8}, 0.0, 1.0);
  std::mt19937_64 rng(seed);
  const Tensor tx = data::apply_photometric(x, data::PhotometricTransform{}.sample(rng));
  std::vector<int> labels(64);
  for (int& l : labels) l = static_cast<int>(rng() % 4);

  std::vector<isw::CovarianceStats> stats;
  {
    Tape tape(false);
    const ForwardRecord rec = net.forward_pair(tape, x, tx);
    for (const StageRecord& sr : rec.stages) {
      if (!sr.theta_x.valid()) continue;
      stats.emplace_back(cfg.stage_channels[sr.stage - 1], cfg.k);
      stats.back().update_warmup(sr.theta_x.value(), sr.theta_tx.value());
      stats.back().freeze();
    }
  }
  auto loss_value = [&] {
    Tape tape(false);
    const ForwardRecord rec = net.forward_pair(tape, x, tx);
    return total_loss(rec, labels, cfg, &stats, true).value();
  };

  for (Parameter* p : net.parameters()) p->zero_grad();
  {
    Tape tape;
    const ForwardRecord rec = net.forward_pair(tape, x, tx);
    const LossBreakdown parts = total_loss(rec, labels, cfg, &stats, true);
    tape.backward(parts.total);
  }

  constexpr std::size_t kSamples = 6;
  constexpr double kEps = 1e-6;
  for (Parameter* p : net.parameters()) {
    std::vector<std::size_t> idx(p->value.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(kSamples, idx.size()));
    Tensor numeric(p->value.shape());
    for (std::size_t i : idx) {
      const double orig = p->value[i];
      p->value[i] = orig + kEps;
      const double up = loss_value();
      p->value[i] = orig - kEps;
      const double down = loss_value();
      p->value[i] = orig;
      numeric[i] = (up - down) / (2 * kEps);
    }
    s.add(GradCheckResult{"total_loss[" + p->name + "]",
                          relative_error(p->grad, numeric, idx), kNetTolerance});
  }
}

}  // namespace

const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> modules{"ops", "snr", "isw", "net"};
  return modules;
}

std::vector<GradCheckResult> run_gradcheck_suite(const std::string& module,
                                                 std::uint64_t seed) {
  Suite suite(module, seed);
  if (module == "ops") {
    ops_suite(suite);
  } else if (module == "snr") {
    snr_suite(suite);
  } else if (module == "isw") {
    isw_suite(suite);
  } else if (module == "net") {
    net_suite(suite);
  } else {
    throw ConfigError("unknown gradcheck module '" + module + "' (expected ops|snr|isw|net)");
  }
  return suite.take();
}

}  // namespace dife
