#include <gtest/gtest.h>

#include "rosslink/autodiff/gradcheck.hpp"
#include "rosslink/autodiff/ops.hpp"

#include <cmath>
#include <limits>
#include <random>

using namespace rosslink::ad;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t{std::move(shape)};
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data[i] = u(rng);
  return t;
}

Tensor identity(int n) {
  Tensor t{Shape{n, n}};
  for (int i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
  return t;
}

}  // namespace

TEST(Ops, MatmulIdentityReturnsOperand) {
  std::mt19937_64 rng(3);
  Tape tape;
  const Tensor a = random_tensor({3, 3}, rng);
  Var out = matmul(tape.constant(identity(3)), tape.constant(a));
  EXPECT_TRUE(bit_identical(out.value(), a));
}

TEST(Ops, SoftmaxOfZerosIsUniform) {
  Tape tape;
  Var out = softmax(tape.constant(Tensor(Shape{3})));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(out.value().data[i], 1.0 / 3.0, 1e-15);
}

TEST(Ops, Conv1dUnitKernelIsIdentity) {
  std::mt19937_64 rng(4);
  Tape tape;
  const Tensor x = random_tensor({7, 1}, rng);
  Var out = conv1d(tape.constant(x), tape.constant(Tensor(Shape{1, 1, 1}, {1.0})), std::nullopt, 1);
  EXPECT_TRUE(bit_identical(out.value(), x));
}

TEST(Ops, Conv1dSamePaddingLength) {
  Tape tape;
  Var out = conv1d(tape.constant(Tensor(Shape{9, 2})), tape.constant(Tensor(Shape{3, 2, 4})), std::nullopt, 2);
  EXPECT_EQ(out.shape(), (Shape{5, 4}));
}

TEST(Ops, Conv2dMatchesDirectLoop) {
  std::mt19937_64 rng(5);
  Tape tape;
  const Tensor x = random_tensor({5, 4, 2}, rng);
  const Tensor w = random_tensor({3, 3, 2, 3}, rng);
  Var out = conv2d(tape.constant(x), tape.constant(w), std::nullopt, 1, 1);
  ASSERT_EQ(out.shape(), (Shape{5, 4, 3}));
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 4; ++j) {
      for (int co = 0; co < 3; ++co) {
        double acc = 0.0;
        for (int a = 0; a < 3; ++a) {
          for (int b = 0; b < 3; ++b) {
            const int si = i + a - 1, sj = j + b - 1;
            if (si < 0 || si >= 5 || sj < 0 || sj >= 4) continue;
            for (int ci = 0; ci < 2; ++ci) acc += x.data[(si * 4 + sj) * 2 + ci] * w.data[((a * 3 + b) * 2 + ci) * 3 + co];
          }
        }
        EXPECT_NEAR(out.value().data[(i * 4 + j) * 3 + co], acc, 1e-12);
      }
    }
  }
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  Tape tape;
  try {
    matmul(tape.constant(Tensor(Shape{2, 3})), tape.constant(Tensor(Shape{4, 5})));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[4,5]"), std::string::npos);
  }
}

TEST(Ops, NoImplicitBroadcastBetweenRanks) {
  Tape tape;
  EXPECT_THROW(add(tape.constant(Tensor(Shape{2, 3})), tape.constant(Tensor(Shape{3}))), ShapeError);
  EXPECT_NO_THROW(add(tape.constant(Tensor(Shape{2, 3})), tape.scalar(1.0)));
}

TEST(Ops, NonFiniteOutputRejected) {
  Tape tape;
  EXPECT_THROW(log(tape.constant(Tensor(Shape{2}, {1.0, 0.0}))), NonFiniteError);
  EXPECT_THROW(div(tape.scalar(1.0), tape.scalar(0.0)), NonFiniteError);
}

TEST(Ops, LogFloorClamps) {
  Tape tape;
  Var x = tape.leaf(Tensor(Shape{2}, {0.0, 0.5}), true);
  Var y = sum(log(x, 1e-12));
  EXPECT_NEAR(y.item(), std::log(1e-12) + std::log(0.5), 1e-12);
  tape.backward(y);
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_NEAR(x.grad()[1], 2.0, 1e-15);
}

TEST(Ops, MaskedSoftmaxGivesExactZeros) {
  Tape tape;
  Tensor mask{Shape{2, 3}};
  const double inf = std::numeric_limits<double>::infinity();
  mask.data << 0, -inf, -inf, 0, 0, -inf;
  Var p = softmax(tape.constant(Tensor(Shape{2, 3}, {0.3, 5.0, 2.0, -1.0, 4.0, 9.0})), &mask);
  EXPECT_EQ(p.value().data[1], 0.0);
  EXPECT_EQ(p.value().data[2], 0.0);
  EXPECT_EQ(p.value().data[5], 0.0);
  EXPECT_NEAR(p.value().data[0], 1.0, 1e-15);
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  Var x = tape.leaf(Tensor(Shape{2}, {1.0, 2.0}), true);
  tape.backward(sum(square(x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, SigmoidAtZero) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(0.0), true);
  tape.backward(sigmoid(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape tape;
  Var x = tape.leaf(Tensor(Shape{2}, {1.0, 2.0}), true);
  EXPECT_THROW(tape.backward(square(x)), std::invalid_argument);
}

TEST(Backward, UnusedTrainableLeafGetsZeroGrad) {
  Tape tape;
  Var x = tape.leaf(Tensor::scalar(3.0), true);
  Var unused = tape.leaf(Tensor(Shape{2}), true);
  tape.backward(square(x));
  EXPECT_TRUE(tape.has_grad(unused.id));
  EXPECT_EQ(unused.grad().norm(), 0.0);
}

TEST(Backward, CompositeMlpMatchesCentralDifferences) {
  std::mt19937_64 rng(11);
  const std::vector<Tensor> point{random_tensor({4, 5}, rng), random_tensor({5, 3}, rng), random_tensor({3}, rng),
                                  random_tensor({3, 1}, rng)};
  ScalarFn fn = [](Tape&, std::span<const Var> v) {
    Var h = gelu(add(matmul(v[0], v[1]), expand(v[2], {4, 3})));
    return sum(sigmoid(matmul(h, v[3])));
  };
  const auto report = grad_check(fn, point, {.eps = 1e-5, .tol = 1e-4});
  EXPECT_TRUE(report.passed) << report.failure;
  EXPECT_EQ(report.coords_checked, 20u + 15u + 3u + 3u);
}

TEST(GradCheck, SquareAtThree) {
  ScalarFn fn = [](Tape&, std::span<const Var> v) { return mul(v[0], v[0]); };
  const std::vector<Tensor> point{Tensor::scalar(3.0)};
  const auto report = grad_check(fn, point);
  EXPECT_TRUE(report.passed);
  EXPECT_LT(report.max_rel_error, 1e-9);
}

TEST(GradCheck, ReportsNonFiniteProbe) {
  ScalarFn fn = [](Tape&, std::span<const Var> v) { return sum(log(v[0])); };
  const std::vector<Tensor> point{Tensor(Shape{2}, {1.0, 1e-7})};
  const auto report = grad_check(fn, point, {.eps = 1e-6});
  EXPECT_FALSE(report.passed);
  EXPECT_NE(report.failure.find("coordinate 1"), std::string::npos);
}

TEST(GradCheck, DetectsInjectedFault) {
  ScalarFn fn = [](Tape&, std::span<const Var> v) { return sum(exp(v[0])); };
  const std::vector<Tensor> point{Tensor(Shape{3}, {0.1, 0.2, 0.3})};
  inject_backward_fault(OpKind::exp, 1.01);
  const auto bad = grad_check(fn, point);
  clear_backward_faults();
  EXPECT_FALSE(bad.passed);
  EXPECT_TRUE(grad_check(fn, point).passed);
}

TEST(GradCheck, KinkInsideStepIsSkippedNotFailed) {
  // Entry 0 sits 1e-9 from the relu kink, far inside eps; the rest are smooth.
  Tensor x{Shape{30}};
  for (int i = 0; i < 30; ++i) x.data[i] = 0.1 + 0.05 * i;
  x.data[0] = 1e-9;
  Tensor w{Shape{30}};
  for (int i = 0; i < 30; ++i) w.data[i] = 1.0 + 0.1 * i;
  ScalarFn fn = [&](Tape& t, std::span<const Var> v) { return sum(mul(relu(v[0]), t.constant(w))); };
  const std::vector<Tensor> point{x};
  const auto report = grad_check(fn, point);
  EXPECT_TRUE(report.passed) << report.failure;
  EXPECT_EQ(report.kinks_skipped, 1u);
  EXPECT_EQ(report.coords_checked, 29u);
}

TEST(GradCheck, StructurallyZeroGradientIsBelowResolution) {
  // Softmax is shift invariant, so the gradient with respect to the shift is exactly zero.
  ScalarFn fn = [](Tape& t, std::span<const Var> v) {
    Var logits = add(v[0], expand(v[1], {3, 4}));
    return sum(mul(softmax(logits), t.constant(Tensor(Shape{3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}))));
  };
  const std::vector<Tensor> point{Tensor(Shape{3, 4}, {0.1, -0.2, 0.3, 0.5, 1, 2, -1, 0, 0.3, 0.3, 0.2, 0.1}),
                                  Tensor::scalar(0.7)};
  const auto report = grad_check(fn, point, {.checked_inputs = {1}});
  EXPECT_TRUE(report.passed) << report.failure;
  EXPECT_EQ(report.below_resolution, 1u);
}

TEST(Properties, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    Tape tape;
    Var p = softmax(tape.constant(random_tensor({4, 9}, rng, -30.0, 30.0)));
    const auto m = p.value().matrix();
    for (int r = 0; r < 4; ++r) {
      EXPECT_NEAR(m.row(r).sum(), 1.0, 1e-12);
      EXPECT_GT(m.row(r).minCoeff(), 0.0);
      EXPECT_LT(m.row(r).maxCoeff(), 1.0);
    }
  }
}

TEST(Properties, BackwardIsLinear) {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x0 = random_tensor({3, 4}, rng);
    const double a = u(rng), b = u(rng);
    auto grad_of = [&](auto&& body) {
      Tape tape;
      Var x = tape.leaf(x0, true);
      tape.backward(body(tape, x));
      return x.grad();
    };
    auto f = [](Tape&, Var x) { return sum(gelu(x)); };
    auto g = [](Tape& t, Var x) { return mean(softmax(matmul(x, transpose(x))) * t.constant(Tensor(Shape{3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}))); };
    const Vector gf = grad_of(f);
    const Vector gg = grad_of(g);
    const Vector gc = grad_of([&](Tape& t, Var x) { return add(a * f(t, x), b * g(t, x)); });
    EXPECT_LE((gc - (a * gf + b * gg)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Properties, ReplayIsBitIdentical) {
  std::mt19937_64 rng(23);
  const Tensor x0 = random_tensor({6, 4}, rng);
  const Tensor w0 = random_tensor({3, 4, 5}, rng);
  auto run = [&] {
    Tape tape;
    Var y = gelu(conv1d(tape.constant(x0), tape.constant(w0), std::nullopt, 2));
    return y.value();
  };
  EXPECT_TRUE(bit_identical(run(), run()));
}
