// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "genclip/autodiff.hpp"
#include "genclip/encoder.hpp"
#include "genclip/types.hpp"

namespace genclip {

/// Row-vector affine map: y = x * weight + bias, weight is in x out.
struct AffineMap {
  Mat weight;
  Mat bias;  // 1 x out

  Mat apply(const Mat& rows) const;
};

/// Every learnable parameter. Vectors are stored as 1 x n matrices so the
/// whole bank can be walked generically (optimizer, checkpoint, gradient checks).
struct PromptBank {
  Mat normal_state;    // 1 x C_T
  Mat abnormal_state;  // 1 x C_T
  Mat query;           // 2 x C_T
  Mat deep_text;       // num_text_layers x C_T
  std::vector<int> layers;                  // vision layer id per projector pair
  std::vector<AffineMap> mvp_projectors;    // C_i -> C_T, pooled features -> vision prompt token
  std::vector<AffineMap> patch_projectors;  // C_i -> C_T, patch features -> text space

  /// Gaussian init (std 0.02) for prompt tokens; projector weights std
  /// 1/sqrt(C_i), zero biases.
  static PromptBank initialize(const EncoderSpec& spec, std::uint64_t seed);
  /// Same shapes, all zeros.
  static PromptBank zeros_like(const PromptBank& other);

  std::vector<std::pair<std::string, Mat*>> parameters();
  std::vector<std::pair<std::string, const Mat*>> parameters() const;
  std::size_t parameter_count() const;

  /// Throws if shapes disagree with `spec` or any value is non-finite.
  void validate(const EncoderSpec& spec) const;
  /// Rounds every value through float32, the checkpoint storage type.
  PromptBank rounded_to_float() const;
  bool operator==(const PromptBank& other) const;
};

/// Tape handles for every bank parameter.
struct BankVars {
  ad::Var normal_state;
  ad::Var abnormal_state;
  ad::Var query;
  std::vector<ad::Var> deep_rows;
  std::vector<ad::Var> mvp_weight, mvp_bias, patch_weight, patch_bias;
  /// Parameter Vars in PromptBank::parameters() order.
  std::vector<ad::Var> all;
};

BankVars bind_bank(ad::Tape& tape, const PromptBank& bank, bool trainable);
/// Gradients collected after tape.backward(), shaped like the bank.
PromptBank collect_gradients(const ad::Tape& tape, const BankVars& vars, const PromptBank& like);

/// Text template "a photo of a [state] [cls] object." with soft slots.
///
/// Token layout:
///   [SOT] [state slot] a photo of a <state word> <cls words> object [query0] [query1] . [EOT] [pad]...
struct PromptTemplate {
  std::string normal_word = "good";
  std::string abnormal_word = "damaged";
  std::string prefix = "a photo of a";
  std::string suffix = "object";
  /// true: query slots carry vision-tuned tokens and the real class word.
  /// false: query-only prompt, raw query tokens and the class word "object".
  bool use_vision_tokens = true;
};

inline constexpr std::string_view kUniversalClassWord = "object";

struct PromptPair {
  TokenSequence normal;
  TokenSequence abnormal;
};

struct TextEmbeddingPair {
  RowVec normal;
  RowVec abnormal;
};

/// Underscores become spaces ("pipe_fryum" -> "pipe fryum").
std::string normalize_class_word(std::string_view class_word);

/// Pools all 1+H*W token rows (class token included) and projects to C_T.
RowVec make_mvp(const LayerFeatures& layer, const AffineMap& projector);
ad::Var make_mvp(ad::Tape& tape, const LayerFeatures& layer, ad::Var weight, ad::Var bias);
/// Pooled rows of a layer: mean over the class token and all patch rows.
RowVec pooled_features(const LayerFeatures& layer);

/// Adds the vision prompt token to both query rows.
Mat fuse_query(const Mat& query, const RowVec& vision_token);
ad::Var fuse_query(ad::Var query, ad::Var vision_token);

/// `query_rows` is the 2 x C_T block placed in the query slots: the
/// vision-tuned tokens when tpl.use_vision_tokens, otherwise ignored in
/// favour of bank.query.
PromptPair assemble_prompt(const PromptTemplate& tpl, std::string_view class_word, const PromptBank& bank,
                           const Tokenizer& tokenizer, const Mat* vision_query = nullptr);

TextEmbeddingPair embed_prompt_pair(const PromptPair& prompts, const PromptBank& bank, const FrozenEncoder& encoder);
/// Differentiable form: `state` is used for the state slot of each sequence,
/// `query_rows` (2 x C_T) fills the query slots. Returns 2 x C_T (normal, abnormal).
ad::Var embed_prompt_pair(ad::Tape& tape, const PromptPair& prompts, const BankVars& bank, ad::Var query_rows,
                          const FrozenEncoder& encoder);

}  // namespace genclip
