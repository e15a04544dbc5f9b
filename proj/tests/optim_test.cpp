#include <gtest/gtest.h>

#include <cmath>

#include "mimco/optim.hpp"

using namespace mimco;

TEST(Schedule, WarmupEndpoints) {
  EXPECT_EQ(lr_schedule(0, 1e-3, 100, 1000), 0.0);
  EXPECT_DOUBLE_EQ(lr_schedule(100, 1e-3, 100, 1000), 1e-3);
  EXPECT_DOUBLE_EQ(lr_schedule(50, 1e-3, 100, 1000), 5e-4);
}

TEST(Schedule, CosineMidpointIsHalfPeak) {
  EXPECT_NEAR(lr_schedule(550, 1e-3, 100, 1000), 5e-4, 1e-15);
  EXPECT_EQ(lr_schedule(1000, 1e-3, 100, 1000), 0.0);
}

TEST(Schedule, NonIncreasingAfterWarmup) {
  double prev = lr_schedule(100, 2.0, 100, 400);
  for (std::uint64_t s = 101; s <= 400; ++s) {
    const double lr = lr_schedule(s, 2.0, 100, 400);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Schedule, TotalMustExceedWarmup) { EXPECT_THROW(lr_schedule(0, 1.0, 10, 10), ContractError); }

TEST(AdamW, ZeroGradNoDecayLeavesParams) {
  std::vector<float> p = {0.5f, -1.f, 2.f}, g(3, 0.f), m(3, 0.f), v(3, 0.f);
  const auto before = p;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  for (std::uint64_t t = 1; t <= 5; ++t) adamw_update(p, g, m, v, t, 1e-2, cfg, true);
  EXPECT_EQ(p, before);
}

TEST(AdamW, ConstantGradientStepsBySign) {
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.eps = 0.0;
  std::vector<float> p = {1.f, 1.f}, g = {0.3f, -4.f}, m(2, 0.f), v(2, 0.f);
  for (std::uint64_t t = 1; t <= 3; ++t) {
    const auto before = p;
    adamw_update(p, g, m, v, t, 1e-3, cfg, false);
    EXPECT_NEAR(p[0] - before[0], -1e-3, 1e-7);
    EXPECT_NEAR(p[1] - before[1], 1e-3, 1e-7);
  }
}

// Hand-unrolled AdamW on a scalar with decay, gradients 1, −2, 0.5.
TEST(AdamW, ThreeStepScalarTrajectory) {
  const double b1 = 0.9, b2 = 0.96, eps = 1e-8, wd = 0.03, lr = 0.1;
  const double gs[] = {1.0, -2.0, 0.5};
  double theta = 0.7, m = 0, v = 0;
  std::vector<double> want;
  for (int t = 1; t <= 3; ++t) {
    m = b1 * m + (1 - b1) * gs[t - 1];
    v = b2 * v + (1 - b2) * gs[t - 1] * gs[t - 1];
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    theta = theta - lr * wd * theta - lr * mh / (std::sqrt(vh) + eps);
    want.push_back(theta);
  }
  AdamWConfig cfg{b1, b2, eps, wd};
  std::vector<float> p = {0.7f}, mm = {0.f}, vv = {0.f};
  for (int t = 1; t <= 3; ++t) {
    const float g[] = {static_cast<float>(gs[t - 1])};
    adamw_update(p, g, mm, vv, t, lr, cfg, true);
    EXPECT_NEAR(p[0], want[t - 1], 1e-6) << "step " << t;
  }
}

TEST(AdamW, DecayFlagOnlyAffectsDecayTerm) {
  AdamWConfig cfg;
  cfg.weight_decay = 0.5;
  std::vector<float> a = {2.f}, b = {2.f}, g = {0.f}, m1 = {0.f}, v1 = {0.f}, m2 = {0.f}, v2 = {0.f};
  adamw_update(a, g, m1, v1, 1, 0.1, cfg, true);
  adamw_update(b, g, m2, v2, 1, 0.1, cfg, false);
  EXPECT_FLOAT_EQ(a[0], 2.f - 0.1f * 0.5f * 2.f);
  EXPECT_EQ(b[0], 2.f);
}

TEST(AdamW, SizeMismatchAndZeroStep) {
  std::vector<float> p(2), g(3), m(2), v(2);
  EXPECT_THROW(adamw_update(p, g, m, v, 1, 0.1, {}, true), ShapeError);
  std::vector<float> g2(2);
  EXPECT_THROW(adamw_update(p, g2, m, v, 0, 0.1, {}, true), ContractError);
}
