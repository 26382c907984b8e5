// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <functional>

#include "genclip/autodiff.hpp"
#include "genclip/rng.hpp"

using namespace genclip;
using ad::Mat;
using ad::Tape;
using ad::Var;

namespace {

// Reduces an op output to a scalar with fixed random weights so every output
// entry contributes to the gradient.
using Op = std::function<Var(Tape&, const std::vector<Var>&)>;

Var weighted_sum(Tape& t, Var v, std::uint64_t seed) {
  Rng r(seed);
  const Var col = ad::matmul(v, t.constant(r.normal_matrix(v.cols(), 1, 1.0)));  // rows x 1
  return ad::matmul(t.constant(Mat::Ones(1, v.rows())), col);
}

double eval(const Op& op, const std::vector<Mat>& inputs) {
  Tape t;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(t.constant(m));
  return weighted_sum(t, op(t, vars), 99).value()(0, 0);
}

void check_gradient(const Op& op, std::vector<Mat> inputs, double tol = 1e-6) {
  Tape t;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(t.parameter(m));
  Var out = weighted_sum(t, op(t, vars), 99);
  t.backward(out);
  const double h = 1e-6;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Mat g = t.grad(vars[k]);
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[k].data()[i] += h;
      minus[k].data()[i] -= h;
      const double fd = (eval(op, plus) - eval(op, minus)) / (2 * h);
      EXPECT_NEAR(g.data()[i], fd, tol * std::max(1.0, std::abs(fd))) << "input " << k << " entry " << i;
    }
  }
}

Mat rnd(int r, int c, std::uint64_t seed) { return Rng(seed).normal_matrix(r, c, 1.0); }

}  // namespace

TEST(Autodiff, Matmul) { check_gradient([](Tape&, auto& v) { return ad::matmul(v[0], v[1]); }, {rnd(3, 4, 1), rnd(4, 2, 2)}); }
TEST(Autodiff, MatmulNT) { check_gradient([](Tape&, auto& v) { return ad::matmul_nt(v[0], v[1]); }, {rnd(3, 4, 1), rnd(2, 4, 2)}); }
TEST(Autodiff, AddAndAddRow) {
  check_gradient([](Tape&, auto& v) { return ad::add_row(ad::add(v[0], v[1]), v[2]); }, {rnd(3, 4, 1), rnd(3, 4, 2), rnd(1, 4, 3)});
}
TEST(Autodiff, ScaleTanh) { check_gradient([](Tape&, auto& v) { return ad::tanh(ad::scale(v[0], 0.7)); }, {rnd(3, 3, 4)}); }
TEST(Autodiff, MeanRowsAndRows) {
  check_gradient([](Tape&, auto& v) { return ad::add(ad::mean_rows(v[0]), ad::rows(v[0], 2, 1)); }, {rnd(4, 3, 5)});
}
TEST(Autodiff, VstackReplaceRow) {
  check_gradient(
      [](Tape&, auto& v) {
        const Var parts[] = {v[0], v[1]};
        return ad::replace_row(ad::vstack(parts), 1, v[2]);
      },
      {rnd(2, 3, 6), rnd(1, 3, 7), rnd(1, 3, 8)});
}
TEST(Autodiff, NormalizeRows) { check_gradient([](Tape&, auto& v) { return ad::normalize_rows(v[0]); }, {rnd(3, 5, 9)}); }
TEST(Autodiff, Sum) {
  check_gradient(
      [](Tape&, auto& v) {
        const Var s[] = {ad::rows(v[0], 0, 1), ad::rows(v[0], 1, 1)};
        return ad::sum(std::span<const Var>(s, 2));
      },
      {rnd(2, 1, 10)});
}
TEST(Autodiff, UpsampleBilinear) {
  check_gradient([](Tape&, auto& v) { return ad::upsample_bilinear(v[0], 2, 3, 5, 7); }, {rnd(6, 2, 11)});
}
TEST(Autodiff, Softmax2) { check_gradient([](Tape&, auto& v) { return ad::softmax2_abnormal(v[0]); }, {rnd(5, 2, 12)}); }

TEST(Autodiff, ConstantsCarryNoGradient) {
  Tape t;
  Var a = t.constant(rnd(2, 2, 1));
  Var p = t.parameter(rnd(2, 2, 2));
  Var s = ad::matmul(ad::matmul(a, p), t.constant(Mat::Ones(2, 1)));
  Var o = ad::matmul(t.constant(Mat::Ones(1, 2)), s);
  t.backward(o);
  EXPECT_FALSE(t.needs_grad(a));
  EXPECT_TRUE(t.needs_grad(o));
  EXPECT_EQ(t.grad(a).norm(), 0.0);
  EXPECT_GT(t.grad(p).norm(), 0.0);
}

TEST(Autodiff, Softmax2IsStableForLargeLogits) {
  Tape t;
  Mat m(2, 2);
  m << 1000, -1000, -1000, 1000;
  const Mat p = ad::softmax2_abnormal(t.constant(m)).value();
  EXPECT_EQ(p(0, 0), 0.0);
  EXPECT_EQ(p(1, 0), 1.0);
}
