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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "dife/errors.hpp"
#include "dife/gradcheck.hpp"
#include "dife/ops.hpp"
#include "dife/seg_net.hpp"
#include "dife/train.hpp"

namespace dife {
namespace {

// --- scalar replay of the layer sequence ----------------------------------

using Params = std::map<std::string, const Tensor*>;

Params by_name(SegNet& net) {
  Params out;
  for (Parameter* p : net.parameters()) out[p->name] = &p->value;
  return out;
}

Tensor conv_ref(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const int oh = xs.h + 2 * pad - ws.h + 1;
  const int ow = xs.w + 2 * pad - ws.w + 1;
  Tensor y(Shape{xs.n, ws.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ws.n; ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = b[o];
          for (int c = 0; c < ws.c; ++c)
            for (int ki = 0; ki < ws.h; ++ki)
              for (int kj = 0; kj < ws.w; ++kj) {
                const int yy = i + ki - pad;
                const int xx = j + kj - pad;
                if (yy >= 0 && xx >= 0 && yy < xs.h && xx < xs.w) {
                  acc += x.at(n, c, yy, xx) * w.at(o, c, ki, kj);
                }
              }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

Tensor relu_ref(Tensor x) {
  for (double& v : x.data()) v = std::max(0.0, v);
  return x;
}

Tensor pool_ref(const Tensor& x) {
  const Shape s = x.shape();
  Tensor y(Shape{s.n, s.c, s.h / 2, s.w / 2});
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < s.h / 2; ++i)
        for (int j = 0; j < s.w / 2; ++j) {
          y.at(n, c, i, j) = 0.25 * (x.at(n, c, 2 * i, 2 * j) + x.at(n, c, 2 * i + 1, 2 * j) +
                                     x.at(n, c, 2 * i, 2 * j + 1) +
                                     x.at(n, c, 2 * i + 1, 2 * j + 1));
        }
  return y;
}

Tensor upsample_ref(const Tensor& x) {
  const Shape s = x.shape();
  Tensor y(Shape{s.n, s.c, 2 * s.h, 2 * s.w});
  auto coord = [](int dst, int len, int& i0, int& i1, double& f) {
    double src = (dst + 0.5) / 2.0 - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(len - 1));
    i0 = static_cast<int>(std::floor(src));
    i1 = std::min(i0 + 1, len - 1);
    f = src - i0;
  };
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int i = 0; i < 2 * s.h; ++i)
        for (int j = 0; j < 2 * s.w; ++j) {
          int y0, y1, x0, x1;
          double fy, fx;
          coord(i, s.h, y0, y1, fy);
          coord(j, s.w, x0, x1, fx);
          y.at(n, c, i, j) = (1 - fy) * ((1 - fx) * x.at(n, c, y0, x0) + fx * x.at(n, c, y0, x1)) +
                             fy * ((1 - fx) * x.at(n, c, y1, x0) + fx * x.at(n, c, y1, x1));
        }
  return y;
}

Tensor concat_ref(const Tensor& a, const Tensor& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  Tensor y(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int n = 0; n < sa.n; ++n)
    for (int i = 0; i < sa.h; ++i)
      for (int j = 0; j < sa.w; ++j) {
        for (int c = 0; c < sa.c; ++c) y.at(n, c, i, j) = a.at(n, c, i, j);
        for (int c = 0; c < sb.c; ++c) y.at(n, sa.c + c, i, j) = b.at(n, c, i, j);
      }
  return y;
}

Tensor snr_ref(const Tensor& f, const Params& p, const std::string& prefix, double eps) {
  const Shape s = f.shape();
  const int hw = static_cast<int>(s.plane());
  Tensor out(s);
  const Tensor& w1 = *p.at(prefix + ".fc1.w");
  const Tensor& b1 = *p.at(prefix + ".fc1.b");
  const Tensor& w2 = *p.at(prefix + ".fc2.w");
  const Tensor& b2 = *p.at(prefix + ".fc2.b");
  const int hidden = w1.shape().n;
  for (int n = 0; n < s.n; ++n) {
    std::vector<double> norm(static_cast<std::size_t>(s.c) * hw);
    std::vector<double> pooled(s.c, 0.0);
    for (int c = 0; c < s.c; ++c) {
      double mean = 0, var = 0;
      for (int i = 0; i < hw; ++i) mean += f[(n * s.c + c) * hw + i];
      mean /= hw;
      for (int i = 0; i < hw; ++i) {
        const double d = f[(n * s.c + c) * hw + i] - mean;
        var += d * d;
      }
      var /= hw;
      for (int i = 0; i < hw; ++i) {
        norm[c * hw + i] = (f[(n * s.c + c) * hw + i] - mean) / std::sqrt(var + eps);
        pooled[c] += (f[(n * s.c + c) * hw + i] - norm[c * hw + i]) / hw;
      }
    }
    std::vector<double> h(hidden);
    for (int j = 0; j < hidden; ++j) {
      double acc = b1[j];
      for (int c = 0; c < s.c; ++c) acc += w1[j * s.c + c] * pooled[c];
      h[j] = std::max(0.0, acc);
    }
    for (int c = 0; c < s.c; ++c) {
      double acc = b2[c];
      for (int j = 0; j < hidden; ++j) acc += w2[c * hidden + j] * h[j];
      const double alpha = 1.0 / (1.0 + std::exp(-acc));
      for (int i = 0; i < hw; ++i) {
        const double r = f[(n * s.c + c) * hw + i] - norm[c * hw + i];
        out[(n * s.c + c) * hw + i] = norm[c * hw + i] + alpha * r;
      }
    }
  }
  return out;
}

Tensor replay(SegNet& net, const Tensor& x, bool with_snr) {
  const NetConfig& cfg = net.config();
  const Params p = by_name(net);
  std::vector<Tensor> skips;
  Tensor h = x;
  for (int s = 1; s <= cfg.stages(); ++s) {
    const std::string e = "enc" + std::to_string(s);
    if (s > 1) h = pool_ref(h);
    h = relu_ref(conv_ref(h, *p.at(e + ".conv1.w"), *p.at(e + ".conv1.b"), 1));
    h = relu_ref(conv_ref(h, *p.at(e + ".conv2.w"), *p.at(e + ".conv2.b"), 1));
    if (with_snr && cfg.snr_stages.count(s)) h = snr_ref(h, p, e + ".snr", cfg.in_eps);
    skips.push_back(h);
  }
  Tensor d = skips.back();
  for (int s = cfg.stages() - 1; s >= 1; --s) {
    const std::string name = "dec" + std::to_string(s) + ".conv";
    d = concat_ref(upsample_ref(d), skips[s - 1]);
    d = relu_ref(conv_ref(d, *p.at(name + ".w"), *p.at(name + ".b"), 1));
  }
  return conv_ref(d, *p.at("head.w"), *p.at("head.b"), 0);
}

NetConfig small_config() {
  NetConfig cfg;
  cfg.stage_channels = {4, 8, 8};
  cfg.snr_stages = {2, 3};
  cfg.isw_stages = {1, 2, 3};
  return cfg;
}

void randomize_biases(SegNet& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  for (Parameter* p : net.parameters()) {
    if (p->name.size() > 2 && p->name.substr(p->name.size() - 2) == ".b") {
      for (double& v : p->value.data()) v = u(rng);
    }
  }
}

// --------------------------------------------------------------------------

TEST(SegNetTest, PlainForwardMatchesScalarReplay) {
  SegNet net(small_config(), 5);
  randomize_biases(net, 6);
  const Tensor x = random_tensor(Shape{2, 3, 4, 4}, 7, 0.0, 1.0);
  Tape tape;
  const Tensor logits = net.forward_plain(tape, x).value();
  ASSERT_EQ(logits.shape(), (Shape{2, 4, 4, 4}));
  EXPECT_LT(max_abs_diff(logits, replay(net, x, false)), 1e-12);
}

TEST(SegNetTest, DifeForwardMatchesScalarReplay) {
  SegNet net(small_config(), 8);
  randomize_biases(net, 9);
  const Tensor x = random_tensor(Shape{1, 3, 4, 4}, 10, 0.0, 1.0);
  const Tensor expected = replay(net, x, true);
  Tape tape;
  EXPECT_LT(max_abs_diff(net.forward(tape, x).value(), expected), 1e-10);
  Tape tape2;
  const ForwardRecord rec = net.forward_pair(tape2, x, x);
  EXPECT_LT(max_abs_diff(rec.logits.value(), expected), 1e-10);
}

TEST(SegNetTest, EmptyBlockSetsGivePlainNetwork) {
  NetConfig cfg = small_config();
  cfg.snr_stages.clear();
  cfg.isw_stages.clear();
  SegNet net(cfg, 3);
  const Tensor x = random_tensor(Shape{1, 3, 8, 8}, 4, 0.0, 1.0);
  Tape a;
  Tape b;
  const ForwardRecord rec = net.forward_pair(a, x, x);
  EXPECT_TRUE(rec.stages.empty());
  EXPECT_EQ(rec.logits.value(), net.forward_plain(b, x).value());
}

TEST(SegNetTest, IdenticalViewsGiveZeroVariance) {
  SegNet net(small_config(), 11);
  const Tensor x = random_tensor(Shape{2, 3, 8, 8}, 12, 0.0, 1.0);
  Tape tape;
  const ForwardRecord rec = net.forward_pair(tape, x, x);
  ASSERT_EQ(rec.stages.size(), 3u);
  for (const StageRecord& s : rec.stages) {
    const isw::VarianceStats v = isw::covariance_variance(s.theta_x.value(), s.theta_tx.value());
    for (double e : v.v.data()) EXPECT_EQ(e, 0.0);
  }
}

TEST(SegNetTest, ConfigValidation) {
  NetConfig cfg = small_config();
  cfg.snr_stages = {4};
  EXPECT_THROW(SegNet(cfg, 0), ConfigError);
  cfg = small_config();
  cfg.lambda1 = -1;
  EXPECT_THROW(SegNet(cfg, 0), ConfigError);
  cfg = small_config();
  cfg.attention_reduction = 3;
  EXPECT_THROW(SegNet(cfg, 0), ConfigError);
}

TEST(SegNetTest, OddInputIsRejected) {
  SegNet net(small_config(), 0);
  Tape tape;
  EXPECT_THROW(net.forward_plain(tape, Tensor(Shape{1, 3, 6, 6})), DimensionError);
}

TEST(TaskLossTest, UniformLogits) {
  Tape tape;
  const std::vector<int> labels{0, 1, 2, 3};
  Var logits = tape.constant(Tensor(Shape{1, 4, 2, 2}));
  EXPECT_NEAR(task_loss(logits, labels).value().item(), std::log(4.0), 1e-15);
}

TEST(TaskLossTest, ConfidentCorrect) {
  Tape tape;
  Tensor l(Shape{1, 3, 1, 1});
  l[1] = 50.0;
  const std::vector<int> labels{1};
  EXPECT_LT(task_loss(tape.constant(l), labels).value().item(), 1e-10);
}

TEST(TaskLossTest, TwoPixelMean) {
  // Pixel 0 has two live classes (ln 2), pixel 1 four (ln 4).
  Tape tape;
  Tensor l(Shape{1, 4, 1, 2});
  l.at(0, 2, 0, 0) = -1000;
  l.at(0, 3, 0, 0) = -1000;
  const std::vector<int> labels{0, 3};
  EXPECT_NEAR(task_loss(tape.constant(l), labels).value().item(),
              (std::log(2.0) + std::log(4.0)) / 2, 1e-12);
}

TEST(TaskLossTest, IgnoredPixelsAreSkipped) {
  Tape tape;
  Tensor l(Shape{1, 2, 1, 2});
  l.at(0, 0, 0, 1) = 5.0;
  const std::vector<int> labels{0, kIgnoreLabel};
  EXPECT_NEAR(task_loss(tape.constant(l), labels).value().item(), std::log(2.0), 1e-15);
}

TEST(TotalLossTest, ZeroWeightsEqualTaskLoss) {
  NetConfig cfg = small_config();
  cfg.lambda1 = 0;
  cfg.lambda2 = 0;
  SegNet net(cfg, 13);
  const Tensor x = random_tensor(Shape{1, 3, 8, 8}, 14, 0.0, 1.0);
  std::vector<int> labels(64);
  for (int i = 0; i < 64; ++i) labels[i] = i % 4;
  Tape tape;
  const ForwardRecord rec = net.forward_pair(tape, x, x);
  const LossBreakdown loss = total_loss(rec, labels, cfg, nullptr, true);
  EXPECT_EQ(loss.value(), task_loss(rec.logits, labels).value().item());
}

TEST(TotalLossTest, MatchesSumOfComponents) {
  NetConfig cfg = small_config();
  cfg.lambda1 = 0.6;
  cfg.lambda2 = 1.0;
  SegNet net(cfg, 15);
  const Tensor x = random_tensor(Shape{2, 3, 4, 4}, 16, 0.0, 1.0);
  const Tensor tx = random_tensor(Shape{2, 3, 4, 4}, 17, 0.0, 1.0);
  std::vector<int> labels(32);
  for (int i = 0; i < 32; ++i) labels[i] = (i * 7) % 4;

  std::vector<isw::CovarianceStats> stats;
  {
    Tape tape;
    const ForwardRecord rec = net.forward_pair(tape, x, tx);
    for (const StageRecord& s : rec.stages) {
      stats.emplace_back(s.theta_x.value().shape().h, 2);
      stats.back().update_warmup(s.theta_x.value(), s.theta_tx.value());
      stats.back().freeze();
    }
  }
  Tape tape;
  const ForwardRecord rec = net.forward_pair(tape, x, tx);
  const LossBreakdown loss = total_loss(rec, labels, cfg, &stats, true);

  double expected = task_loss(rec.logits, labels).value().item();
  std::size_t k = 0;
  for (const StageRecord& s : rec.stages) {
    if (s.snr) {
      expected += 1.0 * snr::dual_causality_loss(s.snr->f_norm, s.snr->f_plus, s.snr->f_minus)
                            .value()
                            .item();
    }
    expected += 0.6 * isw::isw_loss(s.theta_x, s.theta_tx, stats[k++].mask()).value().item();
  }
  EXPECT_NEAR(loss.value(), expected, 1e-9);
  EXPECT_NEAR(loss.task + 0.6 * loss.isw + 1.0 * loss.dc, loss.value(), 1e-9);
}

TEST(TotalLossTest, SelectiveBeforeFreezeIsContractError) {
  SegNet net(small_config(), 1);
  const Tensor x = random_tensor(Shape{1, 3, 4, 4}, 2, 0.0, 1.0);
  std::vector<int> labels(16, 0);
  Tape tape;
  const ForwardRecord rec = net.forward_pair(tape, x, x);
  std::vector<isw::CovarianceStats> stats{isw::CovarianceStats(4, 2),
                                          isw::CovarianceStats(8, 2),
                                          isw::CovarianceStats(8, 2)};
  EXPECT_THROW(total_loss(rec, labels, net.config(), &stats, true), ContractError);
}

TEST(SegNetTrainingTest, SgdStepsMostlyDecreaseLoss) {
  NetConfig cfg = small_config();
  cfg.snr_stages.clear();
  cfg.isw_stages.clear();
  SegNet net(cfg, 21);
  const Tensor x = random_tensor(Shape{2, 3, 8, 8}, 22, 0.0, 1.0);
  std::vector<int> labels(128);
  for (int n = 0; n < 2; ++n)
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) labels[n * 64 + i * 8 + j] = (i < 4) + 2 * (j < 4);
  auto params = net.parameters();
  double prev = 0.0;
  int decreases = 0;
  for (int step = 0; step <= 20; ++step) {
    for (Parameter* p : params) p->zero_grad();
    Tape tape;
    Var loss = task_loss(net.forward_plain(tape, x), labels);
    const double v = loss.value().item();
    if (step > 0 && v < prev) ++decreases;
    prev = v;
    tape.backward(loss);
    sgd_step(params, 0.05, 0.0);
  }
  EXPECT_GE(decreases, 18);
}

TEST(CheckpointTest, RoundTripAndMismatch) {
  const auto dir = std::filesystem::temp_directory_path() / "dife_ckpt_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "m.ckpt").string();
  SegNet a(small_config(), 1);
  save_checkpoint(a, path);
  SegNet b(small_config(), 2);
  load_checkpoint(b, path);
  EXPECT_EQ(a.snapshot(), b.snapshot());

  NetConfig other = small_config();
  other.num_classes = 5;
  SegNet c(other, 1);
  EXPECT_THROW(load_checkpoint(c, path), ConfigError);

  NetConfig no_snr = small_config();
  no_snr.snr_stages.clear();
  SegNet d(no_snr, 1);
  EXPECT_THROW(load_checkpoint(d, path), ConfigError);

  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << "DIFX";
  }
  EXPECT_THROW(load_checkpoint(b, path), FormatError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace dife
