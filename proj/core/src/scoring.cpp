// SPDX-License-Identifier: Apache-2.0
#include "genclip/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "genclip/error.hpp"

namespace genclip {

void ScoringConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("scoring: alpha must be in [0,1]");
  if (!(sigma >= 0.0)) throw ConfigError("scoring: sigma must be >= 0");
  if (n1 < 1 || n2 < 1) throw ConfigError("scoring: n1 and n2 must be positive");
  if (n1 >= n2) throw ConfigError("scoring: n1 must be smaller than n2");
  if (!(temperature > 0.0)) throw ConfigError("scoring: temperature must be > 0");
}

Mat project_patches(const Mat& patch_grid, const AffineMap& projector) { return projector.apply(patch_grid); }

ad::Var project_patches(ad::Tape& tape, const Mat& patch_grid, ad::Var weight, ad::Var bias) {
  const ad::Var grid = tape.constant(patch_grid);
  return ad::add_row(ad::matmul(grid, weight), bias);
}

ad::Var score_map(ad::Tape& /*tape*/, ad::Var patch_text, ad::Var text_pair, int grid_h, int grid_w, int out_h,
                  int out_w, double temperature) {
  if (out_h < grid_h || out_w < grid_w)
    throw ShapeError("score_map: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " is smaller than the patch grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w));
  if (text_pair.rows() != 2) throw ShapeError("score_map: text pair must have 2 rows");
  const ad::Var cos = ad::matmul_nt(ad::normalize_rows(patch_text), ad::normalize_rows(text_pair));
  const ad::Var logits = ad::scale(cos, temperature);
  const ad::Var up = ad::upsample_bilinear(logits, grid_h, grid_w, out_h, out_w);
  return ad::softmax2_abnormal(up);
}

ScoreMap score_map(const Mat& patch_text, const TextEmbeddingPair& pair, int grid_h, int grid_w, int out_h, int out_w,
                   double temperature) {
  if (patch_text.rows() != static_cast<Eigen::Index>(grid_h) * grid_w)
    throw ShapeError("score_map: " + std::to_string(patch_text.rows()) + " patch rows for a " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  ad::Tape tape;
  Mat text(2, pair.normal.size());
  text.row(0) = pair.normal;
  text.row(1) = pair.abnormal;
  const ad::Var p = score_map(tape, tape.constant(patch_text), tape.constant(text), grid_h, grid_w, out_h, out_w,
                              temperature);
  ScoreMap out(out_h, out_w);
  const Mat& v = p.value();
  for (Eigen::Index i = 0; i < v.rows(); ++i) out.values[static_cast<std::size_t>(i)] = v(i, 0);
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : k) v /= total;
  return k;
}

namespace {

// Half-sample symmetric reflection: ... c b a | a b c ... | c b a ...
int reflect_index(int i, int n) {
  const int period = 2 * n;
  int m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

}  // namespace

Grid gaussian_smooth(const Grid& map, double sigma) {
  if (!(sigma >= 0.0)) throw ConfigError("gaussian_smooth: sigma must be >= 0");
  if (sigma == 0.0 || map.size() == 0) return map;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  const int h = map.height, w = map.width;
  Grid tmp(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d) acc += k[static_cast<std::size_t>(d + r)] * map.at(y, reflect_index(x + d, w));
      tmp.at(y, x) = acc;
    }
  Grid out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d) acc += k[static_cast<std::size_t>(d + r)] * tmp.at(reflect_index(y + d, h), x);
      out.at(y, x) = acc;
    }
  return out;
}

Grid fuse_maps(std::span<const ScoreMap> vision_maps, std::span<const ScoreMap> query_maps,
               const ScoringConfig& config) {
  if (vision_maps.empty()) throw ShapeError("fuse_maps: no vision-enhanced maps");
  if (vision_maps.size() != query_maps.size())
    throw ShapeError("fuse_maps: " + std::to_string(vision_maps.size()) + " vision maps vs " +
                     std::to_string(query_maps.size()) + " query maps");
  const Grid& ref = vision_maps.front();
  Grid sum_v(ref.height, ref.width), sum_q(ref.height, ref.width);
  for (std::size_t i = 0; i < vision_maps.size(); ++i) {
    if (!vision_maps[i].same_shape(ref) || !query_maps[i].same_shape(ref))
      throw ShapeError("fuse_maps: resolution mismatch at layer " + std::to_string(i));
    for (std::size_t p = 0; p < ref.size(); ++p) {
      sum_v.values[p] += vision_maps[i].values[p];
      sum_q.values[p] += query_maps[i].values[p];
    }
  }
  Grid fused(ref.height, ref.width);
  for (std::size_t p = 0; p < ref.size(); ++p)
    fused.values[p] = config.alpha * sum_v.values[p] + (1.0 - config.alpha) * sum_q.values[p];
  return gaussian_smooth(fused, config.sigma);
}

ImageScore image_score(const Grid& s_seg, int n1, int n2) {
  if (s_seg.size() == 0) throw ShapeError("image_score: empty map");
  if (n1 < 1 || n1 >= n2) throw ConfigError("image_score: need 1 <= n1 < n2");
  const int count = static_cast<int>(s_seg.size());
  ImageScore r;
  r.n1_used = std::min(n1, count);
  r.n2_used = std::min(n2, count);
  r.clamped = r.n2_used != n2 || r.n1_used != n1;
  std::vector<double> v = s_seg.values;
  std::partial_sort(v.begin(), v.begin() + r.n2_used, v.end(), std::greater<>());
  // Offsets from the maximum: exact for constant maps, and exp() cannot overflow.
  const double top = v.front();
  double dev1 = 0.0, exp1 = 0.0, exp2 = 0.0;
  for (int i = 0; i < r.n2_used; ++i) {
    const double d = v[static_cast<std::size_t>(i)] - top;
    const double e = std::exp(d);
    if (i < r.n1_used) {
      dev1 += d;
      exp1 += e;
    }
    exp2 += e;
  }
  r.top_n1_mean = top + dev1 / r.n1_used;
  r.w = r.n1_used == r.n2_used ? 1.0 : (exp1 / r.n1_used) / (exp2 / r.n2_used);
  r.s_det = r.w * r.top_n1_mean;
  return r;
}

ad::Var vision_branch_map(ad::Tape& tape, const BankVars& bank, std::size_t k, const LayerFeatures& layer,
                          int grid_h, int grid_w, std::string_view class_word, const PromptTemplate& tpl,
                          const FrozenEncoder& encoder, int out_h, int out_w, double temperature) {
  const ad::Var vision_token = make_mvp(tape, layer, bank.mvp_weight[k], bank.mvp_bias[k]);
  const ad::Var vision_query = fuse_query(bank.query, vision_token);

  // Token layout depends only on the class word; slot values come from the tape.
  PromptBank shape_only;
  shape_only.normal_state = bank.normal_state.value();
  shape_only.abnormal_state = bank.abnormal_state.value();
  shape_only.query = bank.query.value();
  PromptTemplate vision_tpl = tpl;
  vision_tpl.use_vision_tokens = true;
  const Mat vq = vision_query.value();
  const PromptPair prompts = assemble_prompt(vision_tpl, class_word, shape_only, encoder.tokenizer(), &vq);

  const ad::Var text = embed_prompt_pair(tape, prompts, bank, vision_query, encoder);
  const ad::Var patches = project_patches(tape, layer.patch_grid, bank.patch_weight[k], bank.patch_bias[k]);
  return score_map(tape, patches, text, grid_h, grid_w, out_h, out_w, temperature);
}

// InferenceSession ------------------------------------------------------

InferenceSession::InferenceSession(std::shared_ptr<const FrozenEncoder> encoder, PromptBank bank,
                                   ScoringConfig scoring, CnfConfig cnf, PromptTemplate tpl)
    : encoder_(std::move(encoder)),
      bank_(std::move(bank)),
      scoring_(scoring),
      cnf_(std::move(cnf)),
      tpl_(std::move(tpl)) {
  if (!encoder_) throw Error("inference session: no encoder");
  scoring_.validate();
  cnf_.validate();
  bank_.validate(encoder_->spec());
  PromptTemplate query_tpl = tpl_;
  query_tpl.use_vision_tokens = false;
  query_embedding_ = embed_prompt_pair(
      assemble_prompt(query_tpl, kUniversalClassWord, bank_, encoder_->tokenizer()), bank_, *encoder_);
  ++query_computations_;
}

AnomalyResult InferenceSession::infer(const Image& image, std::string_view class_name) const {
  const PatchFeatureStack features = encoder_->encode_image(image);
  const std::string word = decide_class_name(features, class_name, cnf_, *encoder_).final_name;
  return infer_features(features, word, image.height, image.width);
}

AnomalyResult InferenceSession::infer_with_class_word(const Image& image, std::string_view class_word) const {
  return infer_features(encoder_->encode_image(image), class_word, image.height, image.width);
}

AnomalyResult InferenceSession::infer_features(const PatchFeatureStack& features, std::string_view class_word,
                                               int out_h, int out_w) const {
  if (features.layers.size() != bank_.layers.size())
    throw ShapeError("infer: " + std::to_string(features.layers.size()) + " feature layers for " +
                     std::to_string(bank_.layers.size()) + " projector pairs");
  AnomalyResult result;
  result.class_word = std::string(class_word);
  PromptTemplate vision_tpl = tpl_;
  vision_tpl.use_vision_tokens = true;
  for (std::size_t k = 0; k < bank_.layers.size(); ++k) {
    const LayerFeatures& layer = features.layers[k];
    const RowVec vision_token = make_mvp(layer, bank_.mvp_projectors[k]);
    const Mat vision_query = fuse_query(bank_.query, vision_token);
    const PromptPair prompts = assemble_prompt(vision_tpl, class_word, bank_, encoder_->tokenizer(), &vision_query);
    const TextEmbeddingPair text = embed_prompt_pair(prompts, bank_, *encoder_);
    const Mat patches = project_patches(layer.patch_grid, bank_.patch_projectors[k]);
    result.vision_maps.push_back(
        score_map(patches, text, features.grid_h, features.grid_w, out_h, out_w, scoring_.temperature));
    result.query_maps.push_back(
        score_map(patches, query_embedding_, features.grid_h, features.grid_w, out_h, out_w, scoring_.temperature));
  }
  result.s_seg = fuse_maps(result.vision_maps, result.query_maps, scoring_);
  const ImageScore score = image_score(result.s_seg, scoring_.n1, scoring_.n2);
  result.s_det = score.s_det;
  result.w = score.w;
  return result;
}

AnomalyResult infer(const Image& image, std::string_view class_name, const PromptBank& bank,
                    std::shared_ptr<const FrozenEncoder> encoder, const CnfConfig& cnf, const ScoringConfig& scoring) {
  InferenceSession session(std::move(encoder), bank, scoring, cnf);
  return session.infer(image, class_name);
}

}  // namespace genclip
