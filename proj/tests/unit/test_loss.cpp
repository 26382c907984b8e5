// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "genclip/error.hpp"
#include "genclip/loss.hpp"
#include "genclip/rng.hpp"
#include "genclip/types.hpp"

using namespace genclip;

namespace {

double focal_pixel(double p, double g, double alpha, double gamma) {
  p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return -(alpha * std::pow(1 - p, gamma) * g * std::log(p) + (1 - alpha) * std::pow(p, gamma) * (1 - g) * std::log(1 - p));
}

double dice_oracle(const std::vector<double>& p, const std::vector<double>& g, double eps) {
  double inter = 0, sp = 0, sg = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * g[i];
    sp += p[i];
    sg += g[i];
  }
  return 1.0 - 2.0 * inter / (sp + sg + eps);
}

}  // namespace

TEST(Dice, Examples) {
  const std::vector<double> ones(10, 1.0), zeros(10, 0.0);
  EXPECT_NEAR(dice_loss(ones, ones, 1e-6), 1.0 - 20.0 / (20.0 + 1e-6), 1e-15);
  EXPECT_NEAR(dice_loss(zeros, ones, 1e-6), 1.0, 1e-6);
  EXPECT_NEAR(dice_loss(std::vector<double>{1, 0}, std::vector<double>{1, 1}, 1e-12), 1.0 / 3.0, 1e-6);
  EXPECT_THROW(dice_loss(ones, std::vector<double>{1}, 1e-6), ShapeError);
}

TEST(Focal, Examples) {
  EXPECT_NEAR(focal_loss(std::vector<double>{0.5}, std::vector<double>{1}, 0.5, 0.0), 0.5 * -std::log(0.5), 1e-15);
  EXPECT_NEAR(focal_loss(std::vector<double>{1, 1, 0, 0}, std::vector<double>{1, 1, 0, 0}, 0.25, 2.0), 0.0, 1e-12);
  const std::vector<double> p{0.9, 0.2, 0.6, 0.05}, g{1, 1, 0, 0};
  double expect = 0;
  for (int i = 0; i < 4; ++i) expect += focal_pixel(p[i], g[i], 0.25, 2.0);
  EXPECT_NEAR(focal_loss(p, g, 0.25, 2.0), expect / 4.0, 1e-9);
  EXPECT_TRUE(std::isfinite(focal_loss(std::vector<double>{0.0, 1.0}, std::vector<double>{1, 0}, 0.25, 2.0)));
}

TEST(TotalLoss, ExactMapIsNearZeroAndDuplicationDoubles) {
  Grid gt(4, 4);
  gt.at(1, 1) = gt.at(2, 2) = 1.0;
  const LossConfig cfg;
  EXPECT_NEAR(total_loss(std::vector<Grid>{gt}, gt, cfg), 0.0, 1e-5);
  Grid m(4, 4);
  Rng r(1);
  for (auto& v : m.values) v = r.uniform();
  const double one = total_loss(std::vector<Grid>{m}, gt, cfg);
  EXPECT_NEAR(total_loss(std::vector<Grid>{m, m}, gt, cfg), 2 * one, 1e-12);
}

TEST(TotalLoss, PerTermOracle) {
  Rng r(2);
  Grid a(2, 2), b(2, 2), gt(2, 2);
  for (auto& v : a.values) v = r.uniform();
  for (auto& v : b.values) v = r.uniform();
  gt.values = {1, 0, 0, 1};
  const LossConfig cfg;
  double expect = 0;
  for (const Grid* m : {&a, &b}) {
    double f = 0;
    for (int i = 0; i < 4; ++i) f += focal_pixel(m->values[i], gt.values[i], cfg.focal_alpha, cfg.focal_gamma);
    expect += f / 4 + dice_oracle(m->values, gt.values, cfg.dice_epsilon);
  }
  EXPECT_NEAR(total_loss(std::vector<Grid>{a, b}, gt, cfg), expect, 1e-9);
  EXPECT_THROW(total_loss(std::vector<Grid>{Grid(3, 3)}, gt, cfg), ShapeError);
}

TEST(TapeLoss, MatchesPlainAndFiniteDifferences) {
  Rng r(3);
  const int n = 12;
  std::vector<double> p(n), g(n);
  for (int i = 0; i < n; ++i) {
    p[static_cast<std::size_t>(i)] = 0.05 + 0.9 * r.uniform();
    g[static_cast<std::size_t>(i)] = i % 3 == 0;
  }
  const LossConfig cfg;
  auto eval = [&](const std::vector<double>& pv, bool grad, Mat* out_grad) {
    ad::Tape t;
    Mat m(n, 1);
    for (int i = 0; i < n; ++i) m(i, 0) = pv[static_cast<std::size_t>(i)];
    const ad::Var v = t.parameter(m);
    const std::vector<ad::Var> layers{v, v};
    const ad::Var loss = total_loss(layers, g, cfg);
    if (grad) {
      t.backward(loss);
      *out_grad = t.grad(v);
    }
    return loss.value()(0, 0);
  };
  Mat grad;
  const double base = eval(p, true, &grad);
  EXPECT_NEAR(base, 2 * (focal_loss(p, g, 0.25, 2.0) + dice_loss(p, g, cfg.dice_epsilon)), 1e-12);
  for (int i = 0; i < n; ++i) {
    auto hi = p, lo = p;
    hi[static_cast<std::size_t>(i)] += 1e-6;
    lo[static_cast<std::size_t>(i)] -= 1e-6;
    const double fd = (eval(hi, false, nullptr) - eval(lo, false, nullptr)) / 2e-6;
    EXPECT_NEAR(grad(i, 0), fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(LossConfig, Validation) {
  LossConfig c;
  c.dice_epsilon = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.focal_gamma = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.focal_alpha = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}
