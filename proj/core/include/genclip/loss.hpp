// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "genclip/autodiff.hpp"
#include "genclip/image.hpp"

namespace genclip {

struct LossConfig {
  double dice_epsilon = 1e-6;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  void validate() const;
};

/// Probabilities are clamped into [kProbClamp, 1 - kProbClamp] before logs.
inline constexpr double kProbClamp = 1e-7;

/// 1 - 2 sum(p g) / (sum p + sum g + eps)
double dice_loss(std::span<const double> pred, std::span<const double> gt, double epsilon);
/// Balanced focal cross-entropy, mean over pixels.
double focal_loss(std::span<const double> pred, std::span<const double> gt, double alpha, double gamma);
/// Sum over layers of focal + dice against one ground-truth map.
double total_loss(std::span<const Grid> per_layer_maps, const Grid& gt, const LossConfig& config);

/// Tape forms. `pred` is n x 1, `gt` has n entries in {0,1}.
ad::Var dice_loss(ad::Var pred, std::span<const double> gt, double epsilon);
ad::Var focal_loss(ad::Var pred, std::span<const double> gt, double alpha, double gamma);
ad::Var total_loss(std::span<const ad::Var> per_layer_maps, std::span<const double> gt, const LossConfig& config);

}  // namespace genclip
