// SPDX-License-Identifier: Apache-2.0
#include "genclip/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "genclip/error.hpp"

namespace genclip {

void LossConfig::validate() const {
  if (!(dice_epsilon > 0.0)) throw ConfigError("loss: dice_epsilon must be > 0");
  if (!(focal_gamma >= 0.0)) throw ConfigError("loss: focal_gamma must be >= 0");
  if (!(focal_alpha > 0.0 && focal_alpha <= 1.0)) throw ConfigError("loss: focal_alpha must be in (0,1]");
}

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw ShapeError(std::string(what) + ": prediction has " + std::to_string(a) + " pixels, ground truth " +
                     std::to_string(b));
  if (a == 0) throw ShapeError(std::string(what) + ": empty input");
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

// Per-pixel focal term and its derivative with respect to the unclamped p.
struct FocalTerm {
  double value;
  double grad;
};

FocalTerm focal_term(double p_raw, double g, double alpha, double gamma) {
  const double p = clamp_prob(p_raw);
  const bool inside = p == p_raw;
  double v = 0.0, d = 0.0;
  if (g > 0.5) {
    // -alpha (1-p)^gamma log p
    const double q = 1.0 - p;
    const double qg = std::pow(q, gamma);
    v = -alpha * qg * std::log(p);
    const double dqg = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0);
    d = -alpha * (-dqg * std::log(p) + qg / p);
  } else {
    // -(1-alpha) p^gamma log(1-p)
    const double pg = std::pow(p, gamma);
    v = -(1.0 - alpha) * pg * std::log(1.0 - p);
    const double dpg = gamma == 0.0 ? 0.0 : gamma * std::pow(p, gamma - 1.0);
    d = -(1.0 - alpha) * (dpg * std::log(1.0 - p) - pg / (1.0 - p));
  }
  return {v, inside ? d : 0.0};
}

}  // namespace

double dice_loss(std::span<const double> pred, std::span<const double> gt, double epsilon) {
  check_lengths(pred.size(), gt.size(), "dice_loss");
  double inter = 0.0, sp = 0.0, sg = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * gt[i];
    sp += pred[i];
    sg += gt[i];
  }
  return 1.0 - 2.0 * inter / (sp + sg + epsilon);
}

double focal_loss(std::span<const double> pred, std::span<const double> gt, double alpha, double gamma) {
  check_lengths(pred.size(), gt.size(), "focal_loss");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += focal_term(pred[i], gt[i], alpha, gamma).value;
  return total / static_cast<double>(pred.size());
}

double total_loss(std::span<const Grid> per_layer_maps, const Grid& gt, const LossConfig& config) {
  double total = 0.0;
  for (std::size_t k = 0; k < per_layer_maps.size(); ++k) {
    const Grid& m = per_layer_maps[k];
    if (!m.same_shape(gt))
      throw ShapeError("total_loss: layer " + std::to_string(k) + " map is " + std::to_string(m.height) + "x" +
                       std::to_string(m.width) + ", ground truth " + std::to_string(gt.height) + "x" +
                       std::to_string(gt.width));
    total += focal_loss(m.values, gt.values, config.focal_alpha, config.focal_gamma) +
             dice_loss(m.values, gt.values, config.dice_epsilon);
  }
  return total;
}

ad::Var dice_loss(ad::Var pred, std::span<const double> gt, double epsilon) {
  check_lengths(static_cast<std::size_t>(pred.rows()), gt.size(), "dice_loss");
  if (pred.cols() != 1) throw ShapeError("dice_loss: prediction must be a column");
  const ad::Mat& p = pred.value();
  double inter = 0.0, sp = 0.0, sg = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    inter += p(i, 0) * gt[static_cast<std::size_t>(i)];
    sp += p(i, 0);
    sg += gt[static_cast<std::size_t>(i)];
  }
  const double den = sp + sg + epsilon;
  ad::Mat out(1, 1);
  out(0, 0) = 1.0 - 2.0 * inter / den;
  std::vector<double> g(gt.begin(), gt.end());
  const int in = pred.id;
  ad::Tape& t = *pred.tape;
  return t.record(std::move(out), t.needs_grad(pred), [in, g = std::move(g), inter, den](ad::Tape& tape, const ad::Mat& go) {
    ad::Mat d(static_cast<Eigen::Index>(g.size()), 1);
    // d/dp_i [-2 I / D] = -2 (g_i D - I) / D^2
    for (std::size_t i = 0; i < g.size(); ++i)
      d(static_cast<Eigen::Index>(i), 0) = -2.0 * (g[i] * den - inter) / (den * den) * go(0, 0);
    tape.accumulate(in, d);
  });
}

ad::Var focal_loss(ad::Var pred, std::span<const double> gt, double alpha, double gamma) {
  check_lengths(static_cast<std::size_t>(pred.rows()), gt.size(), "focal_loss");
  if (pred.cols() != 1) throw ShapeError("focal_loss: prediction must be a column");
  const ad::Mat& p = pred.value();
  const auto n = static_cast<double>(gt.size());
  double total = 0.0;
  ad::Mat d(p.rows(), 1);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const FocalTerm f = focal_term(p(i, 0), gt[static_cast<std::size_t>(i)], alpha, gamma);
    total += f.value;
    d(i, 0) = f.grad / n;
  }
  ad::Mat out(1, 1);
  out(0, 0) = total / n;
  const int in = pred.id;
  ad::Tape& t = *pred.tape;
  return t.record(std::move(out), t.needs_grad(pred),
                  [in, d = std::move(d)](ad::Tape& tape, const ad::Mat& go) { tape.accumulate(in, d * go(0, 0)); });
}

ad::Var total_loss(std::span<const ad::Var> per_layer_maps, std::span<const double> gt, const LossConfig& config) {
  if (per_layer_maps.empty()) throw ShapeError("total_loss: no layer maps");
  std::vector<ad::Var> terms;
  for (const ad::Var& m : per_layer_maps) {
    terms.push_back(focal_loss(m, gt, config.focal_alpha, config.focal_gamma));
    terms.push_back(dice_loss(m, gt, config.dice_epsilon));
  }
  return ad::sum(terms);
}

}  // namespace genclip
