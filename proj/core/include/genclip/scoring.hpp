// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "genclip/autodiff.hpp"
#include "genclip/cnf.hpp"
#include "genclip/encoder.hpp"
#include "genclip/image.hpp"
#include "genclip/prompting.hpp"

namespace genclip {

/// Per-pixel anomaly probabilities at a declared resolution.
using ScoreMap = Grid;

struct ScoringConfig {
  double alpha = 0.8;           // weight of the vision-enhanced branch
  double sigma = 9.0;           // Gaussian smoothing of the fused map, pixels
  int n1 = 500;                 // top pixels for the detection score
  int n2 = 2500;                // top pixels for the confidence reference
  double temperature = 100.0;   // cosine logit scale

  void validate() const;
};

struct AnomalyResult {
  Grid s_seg;
  double s_det = 0.0;
  double w = 1.0;
  std::string class_word;  // class word used by the vision-enhanced branch
  std::vector<ScoreMap> vision_maps;
  std::vector<ScoreMap> query_maps;
};

/// Row-wise projection of the patch rows (class token already excluded).
Mat project_patches(const Mat& patch_grid, const AffineMap& projector);
ad::Var project_patches(ad::Tape& tape, const Mat& patch_grid, ad::Var weight, ad::Var bias);

/// Cosine logits against (normal, abnormal), scaled by temperature, upsampled
/// bilinearly to out_h x out_w, softmaxed over the two channels per pixel.
/// Returns the abnormal channel.
ScoreMap score_map(const Mat& patch_text, const TextEmbeddingPair& pair, int grid_h, int grid_w, int out_h, int out_w,
                   double temperature);
/// Differentiable form; `text_pair` is 2 x C_T. Returns (out_h*out_w) x 1.
ad::Var score_map(ad::Tape& tape, ad::Var patch_text, ad::Var text_pair, int grid_h, int grid_w, int out_h, int out_w,
                  double temperature);

/// Separable Gaussian blur, radius ceil(4 sigma), half-sample symmetric
/// padding. sigma == 0 returns the input unchanged.
Grid gaussian_smooth(const Grid& map, double sigma);
std::vector<double> gaussian_kernel(double sigma);

/// G(alpha * sum(vision) + (1 - alpha) * sum(query), sigma). Raw sums.
Grid fuse_maps(std::span<const ScoreMap> vision_maps, std::span<const ScoreMap> query_maps,
               const ScoringConfig& config);

struct ImageScore {
  double s_det = 0.0;
  double w = 1.0;
  double top_n1_mean = 0.0;
  int n1_used = 0;
  int n2_used = 0;
  bool clamped = false;
};

/// w = mean(exp(top n1)) / mean(exp(top n2)), s_det = w * mean(top n1).
/// Both counts are clamped to the pixel count (flagged in `clamped`).
ImageScore image_score(const Grid& s_seg, int n1, int n2);

/// Differentiable vision-enhanced map for selected layer `k`: pooled
/// features -> vision prompt token -> fused query tokens -> prompt pair ->
/// text embeddings; patch rows -> projected patches; cosine score map at
/// out_h x out_w. Shared by training and gradient checks.
ad::Var vision_branch_map(ad::Tape& tape, const BankVars& bank, std::size_t k, const LayerFeatures& layer,
                          int grid_h, int grid_w, std::string_view class_word, const PromptTemplate& tpl,
                          const FrozenEncoder& encoder, int out_h, int out_w, double temperature);

/// Inference over one frozen bank. The query-only embedding is computed
/// once at construction and reused for every image.
class InferenceSession {
 public:
  InferenceSession(std::shared_ptr<const FrozenEncoder> encoder, PromptBank bank, ScoringConfig scoring,
                   CnfConfig cnf, PromptTemplate tpl = {});

  /// Applies class-name filtering (per image) before the vision-enhanced branch.
  AnomalyResult infer(const Image& image, std::string_view class_name) const;
  /// Skips filtering and uses `class_word` verbatim (majority-vote mode resolves it up front).
  AnomalyResult infer_with_class_word(const Image& image, std::string_view class_word) const;
  AnomalyResult infer_features(const PatchFeatureStack& features, std::string_view class_word, int out_h,
                               int out_w) const;

  const TextEmbeddingPair& query_embedding() const { return query_embedding_; }
  const FrozenEncoder& encoder() const { return *encoder_; }
  const PromptBank& bank() const { return bank_; }
  const ScoringConfig& scoring() const { return scoring_; }
  const CnfConfig& cnf() const { return cnf_; }
  /// Number of times the query-only embedding has been computed (always 1).
  int query_embedding_computations() const { return query_computations_; }

 private:
  std::shared_ptr<const FrozenEncoder> encoder_;
  PromptBank bank_;
  ScoringConfig scoring_;
  CnfConfig cnf_;
  PromptTemplate tpl_;
  TextEmbeddingPair query_embedding_;
  int query_computations_ = 0;
};

/// One-shot inference. Builds a session, so the query-only embedding is
/// recomputed per call; use InferenceSession for batches.
AnomalyResult infer(const Image& image, std::string_view class_name, const PromptBank& bank,
                    std::shared_ptr<const FrozenEncoder> encoder, const CnfConfig& cnf, const ScoringConfig& scoring);

}  // namespace genclip
