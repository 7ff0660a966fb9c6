#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "saltseg.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace saltseg;
using saltseg::testing::bit_equal;
using saltseg::testing::random_uniform;
using namespace saltseg::testing::oracles;

TEST(SigmoidCrossEntropy, LogTwoAtZero) {
  EXPECT_NEAR(sigmoid_cross_entropy(0.0, 1.0), std::numbers::ln2, 1e-15);
  EXPECT_NEAR(sigmoid_cross_entropy(0.0, 0.0), std::numbers::ln2, 1e-15);
}

TEST(SigmoidCrossEntropy, SaturatedCorrectPrediction) {
  const double v = sigmoid_cross_entropy(1000.0, 1.0);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_LT(v, 1e-300);
  EXPECT_NEAR(sigmoid_cross_entropy(-1000.0, 1.0), 1000.0, 1e-9);
}

TEST(SigmoidCrossEntropy, AgreesWithNaiveFormula) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 2000; ++i) {
    const double x = -30.0 + 60.0 * uniform01(rng);
    const double z = static_cast<double>(rng() & 1U);
    EXPECT_NEAR(sigmoid_cross_entropy(x, z), naive_cross_entropy(x, z), 1e-12) << "x=" << x << " z=" << z;
  }
  for (double x : {-30.0, 30.0})
    for (double z : {0.0, 1.0}) EXPECT_NEAR(sigmoid_cross_entropy(x, z), naive_cross_entropy(x, z), 1e-12);
}

TEST(SigmoidCrossEntropy, NonNegativeAndFinite) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 10000; ++i) {
    const double x = -1e4 + 2e4 * uniform01(rng);
    const double v = sigmoid_cross_entropy(x, static_cast<double>(rng() & 1U));
    EXPECT_GE(v, 0.0);
    EXPECT_TRUE(std::isfinite(v));
  }
}

TEST(SigmoidCrossEntropy, RejectsNonBinaryTargets) {
  EXPECT_THROW(sigmoid_cross_entropy(Tensor({2}), Tensor({2}, {0.0, 0.5})), ValidationError);
  EXPECT_THROW(sigmoid_cross_entropy(Tensor({2}), Tensor({3})), ShapeError);
}

TEST(LossAndGrad, SymmetricPoint) {
  const Tensor logits({3, 1, 4, 5});
  const auto r = loss_and_grad(logits, Tensor(logits.dims()));
  EXPECT_NEAR(r.loss.mean_loss, std::numbers::ln2, 1e-15);
  for (double g : r.grad_logits.values()) EXPECT_DOUBLE_EQ(g, 0.5 / 60.0);
}

TEST(LossAndGrad, MatchesFiniteDifferences) {
  Tensor x = random_uniform({2, 1, 3, 3}, 5, -3.0, 3.0);
  Tensor z(x.dims());
  std::mt19937_64 rng(6);
  for (auto& v : z.values()) v = static_cast<double>(rng() & 1U);
  for (auto reduction : {Reduction::all_elements, Reduction::per_sample}) {
    auto loss = [&] { return loss_and_grad(x, z, reduction).loss.mean_loss; };
    EXPECT_LT(relative_error(loss_and_grad(x, z, reduction).grad_logits, numeric_gradient(loss, x)), 1e-6);
  }
}

TEST(LossAndGrad, DuplicatedBatchKeepsMean) {
  const Tensor x = random_uniform({2, 1, 3, 3}, 7, -3.0, 3.0);
  Tensor z(x.dims());
  for (std::size_t i = 0; i < z.size(); i += 3) z[i] = 1.0;
  Tensor x2({4, 1, 3, 3}), z2({4, 1, 3, 3});
  std::copy(x.values().begin(), x.values().end(), x2.data());
  std::copy(x.values().begin(), x.values().end(), x2.data() + x.size());
  std::copy(z.values().begin(), z.values().end(), z2.data());
  std::copy(z.values().begin(), z.values().end(), z2.data() + z.size());
  EXPECT_NEAR(loss_and_grad(x, z).loss.mean_loss, loss_and_grad(x2, z2).loss.mean_loss, 1e-15);
}

TEST(LossAndGrad, MeanMatchesPerPixelAverage) {
  const Tensor x = random_uniform({3, 1, 5, 5}, 8, -5.0, 5.0);
  Tensor z(x.dims());
  for (std::size_t i = 0; i < z.size(); i += 2) z[i] = 1.0;
  const auto r = loss_and_grad(x, z);
  EXPECT_NEAR(r.loss.mean_loss, r.loss.per_pixel.sum() / 75.0, 1e-12);
  EXPECT_NEAR(loss_and_grad(x, z, Reduction::per_sample).loss.mean_loss, r.loss.per_pixel.sum() / 3.0, 1e-12);
}

TEST(LossAndGrad, GradientSumIsDifferenceOfMeans) {
  const Tensor x = random_uniform({2, 1, 6, 6}, 9, -4.0, 4.0);
  Tensor z(x.dims());
  for (std::size_t i = 0; i < z.size(); i += 5) z[i] = 1.0;
  double ms = 0.0;
  for (double v : x.values()) ms += sigmoid(v);
  ms /= static_cast<double>(x.size());
  EXPECT_NEAR(loss_and_grad(x, z).grad_logits.sum(), ms - z.sum() / static_cast<double>(z.size()), 1e-15);
}

TEST(LossAndGrad, LossVanishesAsLogitsSaturate) {
  Tensor z({1, 1, 2, 2}, {0, 1, 1, 0});
  double prev = 1e9;
  for (double scale : {1.0, 5.0, 20.0, 100.0}) {
    Tensor x(z.dims());
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = z[i] == 1.0 ? scale : -scale;
    const double l = loss_and_grad(x, z).loss.mean_loss;
    EXPECT_LT(l, prev);
    prev = l;
  }
  EXPECT_LT(prev, 1e-40);
}

TEST(Adadelta, ZeroGradientIsFixedPoint) {
  Tensor p = random_uniform({3, 4}, 10);
  const Tensor before = p;
  AdadeltaSlot slot{Tensor(p.dims()), Tensor(p.dims())};
  adadelta_step(p, Tensor(p.dims()), slot, {});
  EXPECT_TRUE(bit_equal(p, before));
  EXPECT_EQ(slot.acc_grad_sq, Tensor(p.dims()));
  EXPECT_EQ(slot.acc_update_sq, Tensor(p.dims()));
}

TEST(Adadelta, FirstStepClosedForm) {
  Tensor p({1});
  AdadeltaSlot slot{Tensor({1}), Tensor({1})};
  adadelta_step(p, Tensor({1}, {1.0}), slot, {0.95, 1e-6, 1.0});
  // -sqrt(eps) * g / sqrt((1 - rho) g^2 + eps) at g = 1, evaluated at 50 digits.
  EXPECT_NEAR(p[0], -0.0044720912343108386, 1e-12);
  EXPECT_NEAR(slot.acc_grad_sq[0], 0.05, 1e-15);
  EXPECT_NEAR(slot.acc_update_sq[0], 0.05 * 0.0044720912343108386 * 0.0044720912343108386, 1e-18);
}

TEST(Adadelta, UpdateOpposesGradient) {
  std::mt19937_64 rng(11);
  AdadeltaConfig cfg{0.95, 1e-6, 1.0};
  for (int i = 0; i < 20000; ++i) {
    const double g = (uniform01(rng) - 0.5) * std::pow(10.0, -6.0 + 12.0 * uniform01(rng));
    Tensor p({1});
    AdadeltaSlot slot{Tensor({1}, {uniform01(rng)}), Tensor({1}, {uniform01(rng) * 1e-3})};
    adadelta_step(p, Tensor({1}, {g}), slot, cfg);
    if (g != 0.0) EXPECT_EQ(std::signbit(p[0]), !std::signbit(g));
  }
}

TEST(Adadelta, StepMagnitudeIsBounded) {
  std::mt19937_64 rng(12);
  AdadeltaConfig cfg{0.95, 1e-6, 0.01};
  for (int i = 0; i < 20000; ++i) {
    const double acc_dx = uniform01(rng) * 1e-2;
    AdadeltaSlot slot{Tensor({1}, {uniform01(rng) * 1e-8}), Tensor({1}, {acc_dx})};
    const double g = (uniform01(rng) - 0.5) * 1e3;
    Tensor p({1});
    adadelta_step(p, Tensor({1}, {g}), slot, cfg);
    EXPECT_LE(std::abs(p[0]), cfg.lr_scale * std::sqrt((acc_dx + cfg.eps) / cfg.eps) * (1 + 1e-12));
  }
}

TEST(Adadelta, AccumulatorsStayNonNegative) {
  std::mt19937_64 rng(13);
  Tensor p = random_uniform({16}, 14);
  AdadeltaSlot slot{Tensor({16}), Tensor({16})};
  for (int step = 0; step < 500; ++step) {
    adadelta_step(p, random_tensor({16}, rng, -10.0, 10.0), slot, {});
    for (double v : slot.acc_grad_sq.values()) EXPECT_GE(v, 0.0);
    for (double v : slot.acc_update_sq.values()) EXPECT_GE(v, 0.0);
  }
}

TEST(Adadelta, RejectsNonFiniteGradientWithoutSideEffects) {
  Tensor p = random_uniform({3}, 15);
  const Tensor before = p;
  AdadeltaSlot slot{Tensor({3}), Tensor({3})};
  EXPECT_THROW(adadelta_step(p, Tensor({3}, {0.1, std::nan(""), 0.2}), slot, {}), NumericError);
  EXPECT_THROW(adadelta_step(p, Tensor({3}, {0.1, INFINITY, 0.2}), slot, {}), NumericError);
  EXPECT_TRUE(bit_equal(p, before));
  EXPECT_EQ(slot.acc_grad_sq, Tensor({3}));
  EXPECT_THROW(adadelta_step(p, Tensor({4}), slot, {}), ShapeError);
}

TEST(Adadelta, DeterministicTrajectories) {
  auto run = [] {
    std::mt19937_64 rng(16);
    Tensor p = random_tensor({32}, rng);
    AdadeltaSlot slot{Tensor({32}), Tensor({32})};
    for (int step = 0; step < 200; ++step) adadelta_step(p, random_tensor({32}, rng), slot, {});
    return p;
  };
  EXPECT_TRUE(bit_equal(run(), run()));
}
