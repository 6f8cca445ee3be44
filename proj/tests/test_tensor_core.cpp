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

#include "dife/autodiff.hpp"
#include "dife/errors.hpp"
#include "dife/gradcheck.hpp"
#include "dife/gradcheck_suites.hpp"
#include "dife/ops.hpp"
#include "dife/snr.hpp"

namespace dife {
namespace {

Tensor conv_reference(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                      int pad) {
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  const int oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  Tensor y(Shape{xs.n, ws.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ws.n; ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = b[o];
          for (int c = 0; c < ws.c; ++c)
            for (int ki = 0; ki < ws.h; ++ki)
              for (int kj = 0; kj < ws.w; ++kj) {
                const int yi = i * stride + ki - pad;
                const int xj = j * stride + kj - pad;
                if (yi < 0 || xj < 0 || yi >= xs.h || xj >= xs.w) continue;
                acc += x.at(n, c, yi, xj) * w.at(o, c, ki, kj);
              }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

TEST(TensorTest, SizeMatchesShape) {
  Tensor t(Shape{2, 3, 4, 5}, 1.5);
  EXPECT_EQ(t.size(), 120u);
  EXPECT_TRUE(t.all_finite());
  t[7] = std::nan("");
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(Tensor(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST(TensorTest, ReshapeKeepsData) {
  Tensor t(Shape{1, 2, 2, 1}, std::vector<double>{1, 2, 3, 4});
  Tensor r = t.reshaped(Shape{1, 1, 1, 4});
  EXPECT_EQ(r.at(0, 0, 0, 3), 4.0);
  EXPECT_THROW(t.reshaped(Shape{1, 1, 1, 3}), DimensionError);
}

TEST(Conv2dTest, OnesKernelSumsWindow) {
  Tape tape;
  Var x = tape.constant(Tensor::ones(Shape{1, 1, 2, 2}));
  Var w = tape.constant(Tensor::ones(Shape{1, 1, 2, 2}));
  Var b = tape.constant(Tensor::zeros(Shape{1, 1, 1, 1}));
  const Tensor y = ops::conv2d(x, w, b, 1, 0).value();
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 4.0);
}

TEST(Conv2dTest, IdentityKernel) {
  Tape tape;
  const Tensor in = random_tensor(Shape{1, 1, 3, 4}, 3);
  Var y = ops::conv2d(tape.constant(in), tape.constant(Tensor::ones(Shape{1, 1, 1, 1})),
                      tape.constant(Tensor::zeros(Shape{1, 1, 1, 1})), 1, 0);
  EXPECT_EQ(y.value(), in);
}

TEST(Conv2dTest, ZeroInputGivesZero) {
  Tape tape;
  Var y = ops::conv2d(tape.constant(Tensor::zeros(Shape{1, 2, 4, 4})),
                      tape.constant(random_tensor(Shape{3, 2, 3, 3}, 1)),
                      tape.constant(Tensor::zeros(Shape{1, 3, 1, 1})), 1, 1);
  for (double v : y.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dTest, MatchesDirectLoops) {
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      Tape tape;
      const Tensor x = random_tensor(Shape{2, 3, 6, 5}, 11);
      const Tensor w = random_tensor(Shape{4, 3, 3, 3}, 12);
      const Tensor b = random_tensor(Shape{1, 4, 1, 1}, 13);
      const Tensor y = ops::conv2d(tape.constant(x), tape.constant(w), tape.constant(b),
                                   stride, pad)
                           .value();
      EXPECT_LT(max_abs_diff(y, conv_reference(x, w, b, stride, pad)), 1e-12);
    }
  }
}

TEST(Conv2dTest, ChannelMismatchThrows) {
  Tape tape;
  EXPECT_THROW(ops::conv2d(tape.constant(Tensor(Shape{1, 2, 4, 4})),
                           tape.constant(Tensor(Shape{1, 3, 3, 3})),
                           tape.constant(Tensor(Shape{1, 1, 1, 1})), 1, 1),
               DimensionError);
}

TEST(BackwardTest, SumOfSquares) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2, 3}));
  Var root = ops::sum_all(ops::mul(x, x));
  tape.backward(root);
  const Tensor g = tape.grad(x);
  EXPECT_EQ(g[0], 2.0);
  EXPECT_EQ(g[1], 4.0);
  EXPECT_EQ(g[2], 6.0);
}

TEST(BackwardTest, BilinearSwapsFactors) {
  Tape tape;
  const Tensor av = Tensor::vector({1.5, -2, 0.25});
  const Tensor bv = Tensor::vector({4, 0.5, -3});
  Var a = tape.leaf(av);
  Var b = tape.leaf(bv);
  tape.backward(ops::sum_all(ops::mul(a, b)));
  EXPECT_EQ(tape.grad(a), bv);
  EXPECT_EQ(tape.grad(b), av);
}

TEST(BackwardTest, CrossEntropyMatchesFiniteDifference) {
  const std::vector<int> labels{1};
  TapeFn fn = [&](Tape&, const Var& x) { return ops::cross_entropy(x, labels, 255); };
  const Tensor x(Shape{1, 2, 1, 1}, std::vector<double>{0.3, -0.7});
  const Tensor a = analytic_gradient(fn, x);
  const Tensor n = finite_difference_gradient(
      [&](const Tensor& t) { return evaluate_scalar(fn, t); }, x, 1e-6);
  EXPECT_LT(relative_error(a, n), 1e-6);
  // Closed form: softmax - onehot.
  const double p0 = 1.0 / (1.0 + std::exp(-0.7 - 0.3));
  EXPECT_NEAR(a[0], p0, 1e-12);
  EXPECT_NEAR(a[1], -p0, 1e-12);
}

TEST(BackwardTest, EveryReachableNodeGetsMatchingShape) {
  Tape tape;
  Var x = tape.leaf(random_tensor(Shape{1, 2, 4, 4}, 5));
  Var y = ops::avg_pool2x(ops::relu(x));
  Var z = ops::upsample_bilinear2x(y);
  tape.backward(ops::mean_all(ops::mul(z, x)));
  EXPECT_EQ(tape.grad(x).shape(), x.shape());
  EXPECT_EQ(tape.grad(y).shape(), y.shape());
  EXPECT_EQ(tape.grad(z).shape(), z.shape());
}

TEST(BackwardTest, ParameterGradientsAccumulate) {
  Parameter p("p", Tensor::vector({2.0}));
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    Var v = tape.param(p);
    tape.backward(ops::sum_all(ops::scale(v, 3.0)));
  }
  EXPECT_EQ(p.grad[0], 6.0);
}

TEST(BackwardTest, NonScalarRootThrows) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(x), ContractError);
}

TEST(BackwardTest, ForeignTapeThrows) {
  Tape a;
  Tape b;
  Var x = a.leaf(Tensor::vector({1}));
  Var y = b.leaf(Tensor::vector({1}));
  EXPECT_THROW(ops::add(x, y), ContractError);
}

TEST(BackwardTest, NoGradTapeRecordsNothingTrainable) {
  Parameter p("p", Tensor::vector({1.0, 2.0}));
  Tape tape(false);
  Var v = tape.param(p);
  EXPECT_FALSE(v.requires_grad());
}

TEST(FiniteDifferenceTest, LinearGivesOnes) {
  const Tensor x = random_tensor(Shape{1, 1, 2, 3}, 9);
  const Tensor g = finite_difference_gradient(
      [](const Tensor& t) {
        double s = 0;
        for (double v : t.data()) s += v;
        return s;
      },
      x);
  for (double v : g.data()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(FiniteDifferenceTest, Square) {
  const Tensor g = finite_difference_gradient(
      [](const Tensor& t) { return t[0] * t[0]; }, Tensor::vector({3.0}));
  EXPECT_NEAR(g[0], 6.0, 1e-7);
}

TEST(FiniteDifferenceTest, NondeterministicFunctionIsRejected) {
  int calls = 0;
  EXPECT_THROW(finite_difference_gradient(
                   [&](const Tensor& t) { return t[0] + (++calls); }, Tensor::vector({1.0})),
               OracleError);
}

TEST(FiniteDifferenceTest, DualCausalityLossAgreesWithBackward) {
  std::mt19937_64 rng(4);
  const Tensor norm = random_tensor(Shape{1, 4, 2, 2}, 21);
  const Tensor minus = random_tensor(Shape{1, 4, 2, 2}, 22);
  TapeFn fn = [&](Tape& tape, const Var& plus) {
    return snr::dual_causality_loss(tape.constant(norm), plus, tape.constant(minus));
  };
  const Tensor x = random_tensor(Shape{1, 4, 2, 2}, 23);
  const Tensor a = analytic_gradient(fn, x);
  const Tensor n =
      finite_difference_gradient([&](const Tensor& t) { return evaluate_scalar(fn, t); }, x);
  EXPECT_LT(relative_error(a, n), 1e-4);
}

TEST(GradcheckSuiteTest, OpsSuitePasses) {
  for (const GradCheckResult& r : run_gradcheck_suite("ops", 0)) {
    EXPECT_TRUE(r.passed()) << r.name << " " << r.max_relative_error;
  }
}

TEST(GradcheckSuiteTest, InjectedFaultIsDetected) {
  debug::set_backward_fault("relu");
  bool caught = false;
  for (const GradCheckResult& r : run_gradcheck_suite("ops", 0)) {
    if (r.name.find("relu") != std::string::npos) caught = caught || !r.passed();
  }
  debug::set_backward_fault("");
  EXPECT_TRUE(caught);
}

TEST(GradcheckSuiteTest, UnknownModuleIsConfigError) {
  EXPECT_THROW(run_gradcheck_suite("nope", 0), ConfigError);
}

}  // namespace
}  // namespace dife
