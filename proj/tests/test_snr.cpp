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

#include <cmath>
#include <random>
#include <vector>

#include "dife/errors.hpp"
#include "dife/gradcheck.hpp"
#include "dife/ops.hpp"
#include "dife/snr.hpp"

namespace dife::snr {
namespace {

// --- scalar re-implementations --------------------------------------------

std::vector<double> scalar_alpha(const Tensor& r, int n, const ChannelAttention& att) {
  const int c = r.shape().c;
  const int hw = static_cast<int>(r.shape().plane());
  const int hidden = att.fc1_w.value.shape().n;
  std::vector<double> pooled(c, 0.0);
  for (int ch = 0; ch < c; ++ch) {
    for (int i = 0; i < hw; ++i) pooled[ch] += r[(n * c + ch) * hw + i];
    pooled[ch] /= hw;
  }
  std::vector<double> h(hidden);
  for (int j = 0; j < hidden; ++j) {
    double acc = att.fc1_b.value[j];
    for (int ch = 0; ch < c; ++ch) acc += att.fc1_w.value[j * c + ch] * pooled[ch];
    h[j] = acc > 0 ? acc : 0;
  }
  std::vector<double> alpha(c);
  for (int ch = 0; ch < c; ++ch) {
    double acc = att.fc2_b.value[ch];
    for (int j = 0; j < hidden; ++j) acc += att.fc2_w.value[ch * hidden + j] * h[j];
    alpha[ch] = 1.0 / (1.0 + std::exp(-acc));
  }
  return alpha;
}

double scalar_mean_entropy(const Tensor& f, int n) {
  const Shape s = f.shape();
  double total = 0.0;
  for (int y = 0; y < s.h; ++y) {
    for (int x = 0; x < s.w; ++x) {
      double z = 0.0;
      for (int c = 0; c < s.c; ++c) z += std::exp(f.at(n, c, y, x));
      double h = 0.0;
      for (int c = 0; c < s.c; ++c) {
        const double p = std::exp(f.at(n, c, y, x)) / z;
        h -= p * std::log(p);
      }
      total += h;
    }
  }
  return total / static_cast<double>(s.plane());
}

double scalar_dc(const Tensor& norm, const Tensor& plus, const Tensor& minus) {
  double sum = 0.0;
  for (int n = 0; n < norm.shape().n; ++n) {
    const double hn = scalar_mean_entropy(norm, n);
    sum += std::log1p(std::exp(scalar_mean_entropy(plus, n) - hn));
    sum += std::log1p(std::exp(hn - scalar_mean_entropy(minus, n)));
  }
  return sum / norm.shape().n;
}

Tensor scalar_instance_norm(const Tensor& f, double eps) {
  const Shape s = f.shape();
  const std::size_t hw = s.plane();
  Tensor out(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const std::size_t base = (static_cast<std::size_t>(n) * s.c + c) * hw;
      double mean = 0.0;
      for (std::size_t i = 0; i < hw; ++i) mean += f[base + i];
      mean /= hw;
      double var = 0.0;
      for (std::size_t i = 0; i < hw; ++i) var += (f[base + i] - mean) * (f[base + i] - mean);
      var /= hw;
      for (std::size_t i = 0; i < hw; ++i) out[base + i] = (f[base + i] - mean) / std::sqrt(var + eps);
    }
  }
  return out;
}

// --------------------------------------------------------------------------

TEST(InstanceNormTest, ConstantChannelGoesToZero) {
  Tape tape;
  Tensor f(Shape{1, 1, 2, 2}, 5.0);
  const Tensor y = instance_normalize(tape.constant(f), 1e-5).value();
  for (double v : y.data()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(InstanceNormTest, KnownChannel) {
  Tape tape;
  Tensor f(Shape{1, 1, 1, 4}, std::vector<double>{1, 2, 3, 4});
  const Tensor y = instance_normalize(tape.constant(f), 0.0).value();
  const double expected[] = {-1.3416, -0.4472, 0.4472, 1.3416};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(y[i], expected[i], 1e-4);
}

TEST(InstanceNormTest, IdempotentOnNormalizedInput) {
  Tape tape;
  const Tensor once =
      instance_normalize(tape.constant(random_tensor(Shape{2, 3, 4, 4}, 8)), 0.0).value();
  const Tensor twice = instance_normalize(tape.constant(once), 0.0).value();
  EXPECT_LT(max_abs_diff(once, twice), 1e-6);
}

TEST(InstanceNormTest, MatchesScalarOracle) {
  Tape tape;
  const Tensor f = random_tensor(Shape{2, 3, 3, 5}, 4);
  EXPECT_LT(max_abs_diff(instance_normalize(tape.constant(f), 1e-5).value(),
                         scalar_instance_norm(f, 1e-5)),
            1e-12);
}

TEST(InstanceNormTest, NegativeEpsIsContractError) {
  Tape tape;
  EXPECT_THROW(instance_normalize(tape.constant(Tensor(Shape{1, 1, 2, 2})), -1.0),
               ContractError);
}

TEST(ChannelAttentionTest, ZeroWeightsGiveHalf) {
  std::mt19937_64 rng(1);
  ChannelAttention att("a", 4, 2, rng);
  for (Parameter* p : att.parameters()) p->value.fill(0.0);
  Tape tape;
  const Tensor a = channel_attention(tape.constant(random_tensor(Shape{1, 4, 2, 2}, 2)), att).value();
  for (double v : a.data()) EXPECT_EQ(v, 0.5);
}

TEST(ChannelAttentionTest, ZeroResidualWithZeroBiasesGivesHalf) {
  std::mt19937_64 rng(2);
  ChannelAttention att("a", 8, 4, rng);
  Tape tape;
  const Tensor a = channel_attention(tape.constant(Tensor(Shape{2, 8, 3, 3})), att).value();
  for (double v : a.data()) EXPECT_EQ(v, 0.5);
}

TEST(ChannelAttentionTest, MatchesScalarForward) {
  std::mt19937_64 rng(3);
  ChannelAttention att("a", 4, 4, rng);
  att.fc1_b.value[0] = 0.3;
  for (int i = 0; i < 4; ++i) att.fc2_b.value[i] = 0.1 * i - 0.2;
  Tape tape;
  const Tensor r = Tensor::ones(Shape{1, 4, 2, 2});
  const Tensor a = channel_attention(tape.constant(r), att).value();
  const std::vector<double> expected = scalar_alpha(r, 0, att);
  for (int c = 0; c < 4; ++c) {
    EXPECT_NEAR(a[c], expected[c], 1e-14);
    EXPECT_GT(a[c], 0.0);
    EXPECT_LT(a[c], 1.0);
  }
}

TEST(ChannelAttentionTest, ReductionMustDivideChannels) {
  std::mt19937_64 rng(4);
  EXPECT_THROW(ChannelAttention("a", 6, 4, rng), ConfigError);
}

TEST(RestitutionTest, FullAttentionKeepsResidual) {
  Tape tape;
  const Tensor f = random_tensor(Shape{1, 2, 2, 2}, 5);
  Var fv = tape.constant(f);
  Var norm = instance_normalize(fv);
  const Split s = restitution_split(fv, norm, tape.constant(Tensor::ones(Shape{1, 2, 1, 1})));
  const Tensor residual = ops::sub(fv, norm).value();
  EXPECT_LT(max_abs_diff(s.r_plus.value(), residual), 1e-15);
  for (double v : s.r_minus.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(RestitutionTest, ZeroAttentionDiscardsResidual) {
  Tape tape;
  Var fv = tape.constant(random_tensor(Shape{1, 2, 2, 2}, 6));
  Var norm = instance_normalize(fv);
  const Split s = restitution_split(fv, norm, tape.constant(Tensor::zeros(Shape{1, 2, 1, 1})));
  for (double v : s.r_plus.value().data()) EXPECT_EQ(v, 0.0);
  EXPECT_LT(max_abs_diff(s.r_minus.value(), ops::sub(fv, norm).value()), 1e-15);
}

TEST(RestitutionTest, QuarterAttention) {
  Tape tape;
  Var f = tape.constant(Tensor(Shape{1, 1, 1, 1}, 4.0));
  Var norm = tape.constant(Tensor(Shape{1, 1, 1, 1}, 0.0));
  const Split s = restitution_split(f, norm, tape.constant(Tensor(Shape{1, 1, 1, 1}, 0.25)));
  EXPECT_EQ(s.r_plus.value().item(), 1.0);
  EXPECT_EQ(s.r_minus.value().item(), 3.0);
}

TEST(EntropyTest, UniformLogits) {
  Tape tape;
  const Tensor h = pixel_entropy(tape.constant(Tensor(Shape{1, 4, 2, 2}, 0.7))).value();
  for (double v : h.data()) EXPECT_NEAR(v, std::log(4.0), 1e-12);
}

TEST(EntropyTest, PeakedLogits) {
  Tape tape;
  Tensor f(Shape{1, 4, 1, 1});
  f[2] = 50.0;
  EXPECT_LT(pixel_entropy(tape.constant(f)).value().item(), 1e-10);
}

TEST(EntropyTest, TwoLogits) {
  Tape tape;
  Tensor f(Shape{1, 2, 1, 1}, std::vector<double>{1, 2});
  EXPECT_NEAR(pixel_entropy(tape.constant(f)).value().item(), 0.58220, 1e-5);
}

TEST(EntropyTest, SingleChannelIsContractError) {
  Tape tape;
  EXPECT_THROW(pixel_entropy(tape.constant(Tensor(Shape{1, 1, 2, 2}))), ContractError);
}

TEST(MarginLossTest, KnownValues) {
  Tape tape;
  EXPECT_NEAR(margin_loss(tape.constant(Tensor::scalar(0.0))).value().item(), std::log(2.0), 1e-15);
  EXPECT_LT(margin_loss(tape.constant(Tensor::scalar(-100.0))).value().item(), 1e-40);
  EXPECT_NEAR(margin_loss(tape.constant(Tensor::scalar(1.0))).value().item(), 1.31326, 1e-5);
  EXPECT_NEAR(margin_loss(tape.constant(Tensor::scalar(800.0))).value().item(), 800.0, 1e-12);
}

TEST(DualCausalityTest, EqualInputsGiveTwoLnTwo) {
  Tape tape;
  Var f = tape.constant(random_tensor(Shape{2, 4, 3, 3}, 7));
  EXPECT_NEAR(dual_causality_loss(f, f, f).value().item(), 2.0 * std::log(2.0), 1e-12);
}

TEST(DualCausalityTest, PeakedPlusUniformNorm) {
  Tape tape;
  Tensor plus(Shape{1, 4, 2, 2});
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) plus.at(0, 1, y, x) = 60.0;
  Var norm = tape.constant(Tensor(Shape{1, 4, 2, 2}));
  const double l = dual_causality_loss(norm, tape.constant(plus), norm).value().item();
  // softplus(-ln 4) for L+ and softplus(0) for L-.
  EXPECT_NEAR(l, std::log(1.25) + std::log(2.0), 1e-12);
}

TEST(DualCausalityTest, PeakedNormFlatMinus) {
  Tape tape;
  Tensor plus(Shape{1, 4, 1, 1});
  plus[0] = 80.0;
  Tensor norm(Shape{1, 4, 1, 1});
  norm[3] = 80.0;
  Tensor minus(Shape{1, 4, 1, 1});
  const double l =
      dual_causality_loss(tape.constant(norm), tape.constant(plus), tape.constant(minus))
          .value()
          .item();
  // H(norm)=0, H(plus)=0 -> L+ = ln2; H(minus)=ln4 -> L- = softplus(-ln4).
  EXPECT_NEAR(l, std::log(2.0) + std::log(1.25), 1e-12);
}

TEST(DualCausalityTest, MatchesScalarOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tape tape;
    const Tensor a = random_tensor(Shape{1, 4, 2, 2}, 100 + seed);
    const Tensor b = random_tensor(Shape{1, 4, 2, 2}, 200 + seed);
    const Tensor c = random_tensor(Shape{1, 4, 2, 2}, 300 + seed);
    const double l =
        dual_causality_loss(tape.constant(a), tape.constant(b), tape.constant(c)).value().item();
    EXPECT_NEAR(l, scalar_dc(a, b, c), 1e-9);
  }
}

TEST(DualCausalityTest, ModesDropTheirHalf) {
  Tape tape;
  Var a = tape.constant(random_tensor(Shape{2, 4, 2, 2}, 1));
  Var b = tape.constant(random_tensor(Shape{2, 4, 2, 2}, 2));
  Var c = tape.constant(random_tensor(Shape{2, 4, 2, 2}, 3));
  const double full = dual_causality_loss(a, b, c, DcMode::kFull).value().item();
  const double no_plus = dual_causality_loss(a, b, c, DcMode::kNoPlus).value().item();
  const double no_minus = dual_causality_loss(a, b, c, DcMode::kNoMinus).value().item();
  EXPECT_NEAR(full, no_plus + no_minus, 1e-12);
  EXPECT_EQ(dual_causality_loss(a, b, c, DcMode::kNone).value().item(), 0.0);
  EXPECT_THROW(parse_dc_mode("half"), ConfigError);
}

TEST(SnrForwardTest, NormalizedInputHasNoResidual) {
  std::mt19937_64 rng(9);
  ChannelAttention att("a", 4, 2, rng);
  Tape tape;
  const Tensor f = scalar_instance_norm(random_tensor(Shape{1, 4, 3, 3}, 10), 0.0);
  const SnrOutput out = snr_forward(tape.constant(f), att, 0.0);
  EXPECT_LT(max_abs_diff(out.f_plus.value(), f), 1e-9);
  EXPECT_LT(max_abs_diff(out.f_norm.value(), f), 1e-9);
}

TEST(SnrForwardTest, DecompositionIdentities) {
  std::mt19937_64 rng(10);
  ChannelAttention att("a", 8, 4, rng);
  Tape tape;
  Var f = tape.constant(random_tensor(Shape{2, 8, 4, 4}, 11, -3.0, 5.0));
  const SnrOutput out = snr_forward(f, att);
  const Tensor residual = ops::sub(f, out.f_norm).value();
  EXPECT_LT(max_abs_diff(ops::add(out.r_plus, out.r_minus).value(), residual), 1e-9);
  EXPECT_LT(max_abs_diff(ops::add(out.f_norm, out.r_plus).value(), out.f_plus.value()), 1e-9);
  EXPECT_LT(max_abs_diff(ops::add(out.f_norm, out.r_minus).value(), out.f_minus.value()), 1e-9);
}

TEST(SnrForwardTest, FullBlockMatchesScalarOracle) {
  std::mt19937_64 rng(12);
  ChannelAttention att("a", 4, 2, rng);
  Tape tape;
  const Tensor f = random_tensor(Shape{2, 4, 3, 3}, 13, -2.0, 3.0);
  const SnrOutput out = snr_forward(tape.constant(f), att, 1e-5);

  const Tensor norm = scalar_instance_norm(f, 1e-5);
  Tensor residual(f.shape());
  for (std::size_t i = 0; i < f.size(); ++i) residual[i] = f[i] - norm[i];
  const std::size_t hw = f.shape().plane();
  for (int n = 0; n < 2; ++n) {
    const std::vector<double> alpha = scalar_alpha(residual, n, att);
    for (int c = 0; c < 4; ++c) {
      EXPECT_NEAR(out.alpha.value().at(n, c, 0, 0), alpha[c], 1e-12);
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t k = (static_cast<std::size_t>(n) * 4 + c) * hw + i;
        EXPECT_NEAR(out.f_plus.value()[k], norm[k] + alpha[c] * residual[k], 1e-12);
        EXPECT_NEAR(out.f_minus.value()[k], norm[k] + (1 - alpha[c]) * residual[k], 1e-12);
      }
    }
  }
}

}  // namespace
}  // namespace dife::snr
