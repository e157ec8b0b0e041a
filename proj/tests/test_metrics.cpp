#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "test_util.hpp"
#include "unetgan/grad_check.hpp"
#include "unetgan/metrics.hpp"

using namespace unetgan;
using unetgan::testing::random_tensor;
using D = Tensor<double>;
using oracles::max_diff;
using oracles::naive_ssim;
using oracles::jitter;

namespace {

D image(std::size_t side, std::uint64_t seed) { return random_tensor<double>({1, 1, side, side}, seed, 0, 1); }

}  // namespace

TEST(SsimComponents, IdenticalInputs) {
  const D x = image(16, 1);
  const auto cm = ssim_components(x, x);
  for (std::size_t k = 0; k < cm.l.size(); ++k) {
    EXPECT_EQ(cm.l[k], 1.0);
    EXPECT_EQ(cm.c[k], 1.0);
    EXPECT_NEAR(cm.s[k], 1.0, 1e-12);
  }
}

TEST(SsimComponents, ConstantImagesHitStabilisers) {
  const D x = D::full({8, 8}, 0.3);
  const auto cm = ssim_components(x, x);
  for (std::size_t k = 0; k < cm.l.size(); ++k) {
    EXPECT_EQ(cm.l[k], 1.0);
    EXPECT_EQ(cm.c[k], 1.0);
    EXPECT_NEAR(cm.s[k], 1.0, 1e-12);
  }
}

TEST(SsimComponents, MatchesNaiveOracle8x8Window5) {
  SsimParams p;
  p.window = 5;
  const D x = random_tensor<double>({8, 8}, 3, 0, 1), y = random_tensor<double>({8, 8}, 4, 0, 1);
  const auto cm = ssim_components(x, y, p);
  const auto ref = naive_ssim(x, y, 8, 8, p);
  EXPECT_EQ(cm.rows, 4u);
  EXPECT_EQ(cm.cols, 4u);
  EXPECT_LE(max_diff(cm.l, ref.l), 1e-6);
  EXPECT_LE(max_diff(cm.c, ref.c), 1e-6);
  EXPECT_LE(max_diff(cm.s, ref.s), 1e-6);
}

TEST(SsimComponents, Ranges) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto cm = ssim_components(image(16, seed), image(16, seed + 100));
    for (std::size_t k = 0; k < cm.l.size(); ++k) {
      EXPECT_GT(cm.l[k], 0.0);
      EXPECT_LE(cm.l[k], 1.0);
      EXPECT_GT(cm.c[k], 0.0);
      EXPECT_LE(cm.c[k], 1.0 + 1e-12);
      EXPECT_GE(cm.s[k], -1.0 - 1e-12);
      EXPECT_LE(cm.s[k], 1.0 + 1e-12);
    }
  }
}

TEST(SsimComponents, ConstantShiftLeavesContrastAndStructure) {
  const D x = random_tensor<double>({16, 16}, 5, 0, 0.6), y = random_tensor<double>({16, 16}, 6, 0, 0.6);
  const auto a = ssim_components(x, y);
  const auto b = ssim_components(add_scalar(x, 0.3), add_scalar(y, 0.3));
  EXPECT_LE(max_diff(a.c, b.c), 1e-9);
  EXPECT_LE(max_diff(a.s, b.s), 1e-9);
  EXPECT_GT(max_diff(a.l, b.l), 1e-6);
}

TEST(SsimComponents, Errors) {
  EXPECT_THROW(ssim_components(D::zeros({8, 8}), D::zeros({8, 9})), ShapeError);
  SsimParams p;
  p.window = 9;
  EXPECT_THROW(ssim_components(D::zeros({8, 8}), D::zeros({8, 8}), p), ShapeError);
  p.window = 4;
  EXPECT_THROW(ssim_components(D::zeros({8, 8}), D::zeros({8, 8}), p), DomainError);
  p.window = 3;
  p.c3 = 0;
  EXPECT_THROW(ssim_components(D::zeros({8, 8}), D::zeros({8, 8}), p), DomainError);
}

TEST(Ssim, SelfSimilarityIsOne) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const D x = image(32, seed);
    EXPECT_NEAR(ssim(x, x).item(), 1.0, 1e-12);
  }
}

TEST(Ssim, AntiCorrelatedPairIsClampedBelowOne) {
  const D x = image(16, 7);
  const double v = ssim(x, one_minus(x)).item();
  EXPECT_LT(v, 1.0);
  EXPECT_GT(v, 0.0);
  // Every window is anti-correlated, so every s hits the floor.
  const auto cm = ssim_components(x, one_minus(x));
  for (double s : cm.s) EXPECT_LT(s, 1e-6);
  EXPECT_LT(v, 1e-5);
}

TEST(Ssim, UnitExponentsMatchNaiveOracle16x16) {
  SsimParams p;
  p.alpha = p.beta = p.gamma = 1.0;
  const D x = image(16, 11), y = jitter(x, 12, 0.3);
  EXPECT_LE(std::abs(ssim(x, y, p).item() - naive_ssim(x, y, 16, 16, p).value), 1e-6);
}

TEST(Ssim, OracleEquivalenceOverHundredSeeds) {
  const SsimParams p;
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const D x = image(24, seed);
    const D y = seed % 2 ? jitter(x, seed + 1000, 0.4) : image(24, seed + 1000);
    worst = std::max(worst, std::abs(ssim(x, y, p).item() - naive_ssim(x, y, 24, 24, p).value));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(Ssim, FloatModeAgreesWithOracle) {
  const D x = image(32, 21), y = jitter(x, 22, 0.2);
  const double ref = naive_ssim(x, y, 32, 32, SsimParams{}).value;
  EXPECT_NEAR(ssim(cast<float>(x), cast<float>(y)).item(), ref, 1e-5);
}

TEST(Ssim, Symmetric) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const D x = image(16, seed), y = jitter(x, seed + 50, 0.5);
    EXPECT_NEAR(ssim(x, y).item(), ssim(y, x).item(), 1e-9);
  }
}

TEST(Ssim, RangeIsHalfOpenUnitInterval) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double v = ssim(image(16, seed), image(16, seed + 77)).item();
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Ssim, BatchGivesOneValuePerImage) {
  const D a = image(16, 1), b = image(16, 2), c = jitter(a, 3, 0.2), d = jitter(b, 4, 0.2);
  std::vector<double> xs = a.vec(), ys = c.vec();
  xs.insert(xs.end(), b.values().begin(), b.values().end());
  ys.insert(ys.end(), d.values().begin(), d.values().end());
  const auto v = ssim(D({2, 1, 16, 16}, xs), D({2, 1, 16, 16}, ys));
  EXPECT_EQ(v.shape(), (Shape{2}));
  EXPECT_DOUBLE_EQ(v[0], ssim(a, c).item());
  EXPECT_DOUBLE_EQ(v[1], ssim(b, d).item());
  EXPECT_THROW(ssim(D::zeros({1, 2, 16, 16}), D::zeros({1, 2, 16, 16})), ShapeError);
}

TEST(Ssim, GradientMatchesFiniteDifferences) {
  const D x = image(12, 31), y = jitter(x, 32, 0.25);
  for (const SsimParams p : {SsimParams{}, [] {
                               SsimParams q;
                               q.alpha = q.beta = q.gamma = 1.0;
                               q.window = 5;
                               return q;
                             }()}) {
    EXPECT_LE(grad_check<double>([&](const D& v) { return sum(ssim(v, y, p)); }, x, 1e-6), 1e-5);
    EXPECT_LE(grad_check<double>([&](const D& v) { return sum(ssim(x, v, p)); }, y, 1e-6), 1e-5);
  }
}

TEST(Ssim, GradientFlowsToBothOperandsOnOneTape) {
  const D x0 = image(12, 41), y0 = jitter(x0, 42, 0.3);
  Tape<double> tape;
  const D x = tape.watch(x0), y = tape.watch(y0);
  tape.backward(sum(ssim(x, y)));
  const D gx = *x.grad(), gy = *y.grad();
  // Each operand's gradient equals the single-operand gradient.
  Tape<double> t2;
  const D x2 = t2.watch(x0);
  t2.backward(sum(ssim(x2, y0)));
  EXPECT_LE(unetgan::testing::max_abs_diff(gx, *x2.grad()), 1e-15);
  EXPECT_GT(unetgan::testing::inner(gy, gy), 0.0);
}

TEST(Mse, Examples) {
  const D x({2}, {0, 0}), y({2}, {1, 1});
  EXPECT_DOUBLE_EQ(mse(x, y).item(), 1.0);
  EXPECT_DOUBLE_EQ(mse(x, x).item(), 0.0);
  EXPECT_THROW(mse(x, D::zeros({3})), ShapeError);
}

TEST(Mse, GradientIsScaledDifference) {
  const D x0 = random_tensor<double>({3, 4}, 1), y = random_tensor<double>({3, 4}, 2);
  Tape<double> tape;
  const D x = tape.watch(x0);
  tape.backward(mse(x, y));
  const D g = *x.grad();
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(g[i], 2 * (x0[i] - y[i]) / 12, 1e-15);
  EXPECT_LE(grad_check<double>([&](const D& v) { return mse(v, y); }, x0, 1e-6), 1e-5);
}

TEST(Dice, Examples) {
  const LabelMap a(2, 4, {1, 1, 1, 1, 0, 0, 0, 0});
  EXPECT_DOUBLE_EQ(dice(a, a, 1), 1.0);
  const LabelMap disjoint(2, 4, {0, 0, 0, 0, 1, 1, 1, 1});
  EXPECT_DOUBLE_EQ(dice(a, disjoint, 1), 0.0);
  const LabelMap half(2, 4, {1, 1, 0, 0, 1, 1, 0, 0});
  EXPECT_DOUBLE_EQ(dice(a, half, 1), 0.5);
}

TEST(Dice, EmptyClassCountsAsAgreement) {
  const LabelMap a(2, 2, {0, 1, 1, 0});
  EXPECT_DOUBLE_EQ(dice(a, a, 2), 1.0);
  EXPECT_DOUBLE_EQ(mean_foreground_dice(a, a), 1.0);
  const LabelMap spurious(2, 2, {2, 1, 1, 0});
  EXPECT_DOUBLE_EQ(dice(spurious, a, 2), 0.0);
  EXPECT_DOUBLE_EQ(mean_foreground_dice(spurious, a), 0.5);
}

TEST(Dice, SymmetricAndBounded) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> lab(0, 2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::uint8_t> u(64), v(64);
    for (auto& e : u) e = std::uint8_t(lab(rng));
    for (auto& e : v) e = std::uint8_t(lab(rng));
    const LabelMap a(8, 8, u), b(8, 8, v);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_NEAR(dice(a, b, k), dice(b, a, k), 1e-9);
      EXPECT_GE(dice(a, b, k), 0.0);
      EXPECT_LE(dice(a, b, k), 1.0);
    }
  }
}

TEST(Dice, Errors) {
  const LabelMap a(2, 2, {0, 1, 1, 0});
  EXPECT_THROW(dice(a, LabelMap(1, 4, {0, 1, 1, 0}), 1), ShapeError);
  EXPECT_THROW(dice(a, LabelMap(2, 2, {0, 3, 1, 0}), 1), DomainError);
  EXPECT_THROW(LabelMap(2, 2, {0}), ShapeError);
}
