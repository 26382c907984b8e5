// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "genclip/autodiff.hpp"
#include "genclip/image.hpp"
#include "genclip/types.hpp"

namespace genclip {

/// Shape contract shared by every frozen encoder. Layer indices are 1-based.
///
/// Geometry defaults follow the ViT-L/14 backbone at 518 px input (24 vision
/// layers, features tapped at 6/12/18/24, 77 text tokens, 12 text layers).
/// Widths default to desk-scale values; a real-weights adapter overrides them
/// with the widths its weight file declares.
struct EncoderSpec {
  int num_vision_layers = 24;
  std::vector<int> selected_layers{6, 12, 18, 24};
  /// One width per vision layer, or a single value applied to all layers.
  std::vector<int> vision_dims{64};
  int text_dim = 32;
  int patch_size = 14;
  int image_size = 518;
  int text_seq_len = 77;
  int num_text_layers = 12;
  int vocab_size = 49408;
  std::uint64_t seed = 0;

  void validate() const;
  int grid_side() const { return image_size / patch_size; }
  int num_patches() const { return grid_side() * grid_side(); }
  int layer_dim(int layer) const;
  std::vector<int> selected_dims() const;

  bool operator==(const EncoderSpec&) const = default;
};

struct LayerFeatures {
  int layer = 0;
  RowVec class_token;  // C_i
  Mat patch_grid;      // (H*W) x C_i, rows in row-major patch order
};

/// Frozen features of one image: one entry per selected layer, plus the
/// global image embedding in text space used by class-name filtering.
struct PatchFeatureStack {
  int grid_h = 0;
  int grid_w = 0;
  std::vector<LayerFeatures> layers;
  RowVec image_embedding;  // C_T, unit norm
};

enum class SlotRole { state, query0, query1 };

/// Learnable embedding that replaces the token id at `position`.
struct SoftSlot {
  int position = 0;
  SlotRole role = SlotRole::state;
  RowVec value;
};

struct TokenSequence {
  std::vector<int> token_ids;  // padded to the encoder's text_seq_len
  std::vector<SoftSlot> soft_slots;
  int eot_position = 0;

  bool operator==(const TokenSequence& o) const;
};

/// Word-level tokenizer with a hashed vocabulary. Lowercases, splits on
/// whitespace and keeps '.' and ',' as separate tokens. Ids 0..2 are
/// reserved for padding, start-of-text and end-of-text.
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kSot = 1;
  static constexpr int kEot = 2;

  Tokenizer(int vocab_size, int seq_len);

  std::vector<std::string> split_words(std::string_view text) const;
  int id(std::string_view word) const;
  std::vector<int> ids(std::string_view text) const;
  /// SOT + words + EOT, padded with kPad to seq_len.
  TokenSequence encode(std::string_view text) const;
  int seq_len() const { return seq_len_; }

 private:
  int vocab_size_;
  int seq_len_;
};

/// Frozen vision + text encoder. Implementations are immutable after
/// construction and safe to share across threads.
class FrozenEncoder {
 public:
  virtual ~FrozenEncoder() = default;

  virtual const EncoderSpec& spec() const = 0;
  virtual const Tokenizer& tokenizer() const = 0;

  /// Image must be image_size x image_size x 3 with values in [0,1].
  virtual PatchFeatureStack encode_image(const Image& image) const = 0;

  /// Differentiable text path. `soft_values` holds one 1 x C_T Var per entry
  /// of seq.soft_slots (same order); when empty, the slots' stored values are
  /// used as constants. `deep_tokens` is empty or holds one 1 x C_T Var per
  /// text layer. Returns the unit-norm 1 x C_T embedding pooled at the EOT.
  virtual ad::Var encode_text(ad::Tape& tape, const TokenSequence& seq, std::span<const ad::Var> soft_values,
                              std::span<const ad::Var> deep_tokens) const = 0;

  /// Non-differentiable convenience. `deep_tokens` is num_text_layers x C_T.
  RowVec encode_text(const TokenSequence& seq, const Mat* deep_tokens = nullptr) const;
};

/// Weights of the synthetic encoder. Every matrix is drawn from its own
/// stream `derive_seed(spec.seed, stream)` with N(0, stddev^2) entries, see
/// SyntheticEncoder::stream ids. Token embeddings are generated per id on
/// demand from `derive_seed(derive_seed(seed, kTokenStream), id)`.
struct SyntheticWeights {
  struct Layer {
    Mat self_mix;     // in x out
    Mat context_mix;  // in x out
    RowVec bias;      // out
    Mat skip;         // in x out, empty when in == out (identity)
  };
  Mat patch_embed;     // (3 p^2) x C_1
  Mat vision_pos;      // (H*W) x C_1
  RowVec class_embed;  // C_1
  std::vector<Layer> vision_layers;
  Mat image_proj;      // C_L x C_T
  Mat text_pos;        // N_L x C_T
  std::vector<Layer> text_layers;
  Mat text_proj;       // C_T x C_T
  std::uint64_t token_seed = 0;
};

/// Deterministic stand-in for a pretrained CLIP-style encoder.
///
/// Vision: pixels are centred ((v - 0.5) / 0.25), cut into p x p patches,
/// embedded linearly with a positional term, a class-token row is prepended,
/// and each layer applies
///   x' = x S + tanh(x A + mean_rows(x) B + b)
/// with S the identity when widths agree. The global image embedding is the
/// last layer's class token times `image_proj`, unit-normalized.
///
/// Text: rows are token embeddings (or soft-slot values) plus positional
/// embeddings; each layer applies x' = x + tanh(x A + mean_rows(x) B + b)
/// over the positions up to and including EOT (no causal mask). With deep
/// tokens, one extra row sits immediately before EOT and is overwritten by
/// the layer's own token at the input of every layer. Output is the EOT row
/// times `text_proj`, unit-normalized.
class SyntheticEncoder final : public FrozenEncoder {
 public:
  enum Stream : std::uint64_t {
    kPatchEmbed = 1,
    kVisionPos = 2,
    kClassEmbed = 3,
    kImageProj = 4,
    kTextPos = 5,
    kTextProj = 6,
    kTokenStream = 7,
    kVisionLayerBase = 100,   // + 4 * layer + {0: self, 1: context, 2: bias, 3: skip}
    kTextLayerBase = 10000,   // + 4 * layer + {0, 1, 2}
  };

  explicit SyntheticEncoder(EncoderSpec spec);

  const EncoderSpec& spec() const override { return spec_; }
  const Tokenizer& tokenizer() const override { return tokenizer_; }
  PatchFeatureStack encode_image(const Image& image) const override;
  ad::Var encode_text(ad::Tape& tape, const TokenSequence& seq, std::span<const ad::Var> soft_values,
                      std::span<const ad::Var> deep_tokens) const override;
  using FrozenEncoder::encode_text;

  const SyntheticWeights& weights() const { return w_; }
  RowVec token_embedding(int id) const;
  /// Hash over every stored weight; used to prove training leaves the encoder untouched.
  std::uint64_t digest() const;

 private:
  EncoderSpec spec_;
  Tokenizer tokenizer_;
  SyntheticWeights w_;
};

using EncoderFactory =
    std::function<std::unique_ptr<FrozenEncoder>(const EncoderSpec&, const std::filesystem::path& weights)>;

/// Adapter registry. "synthetic" is always available; real-weights adapters
/// register themselves under their own name and read `weights` from disk.
void register_encoder_adapter(const std::string& name, EncoderFactory factory);
std::vector<std::string> registered_encoder_adapters();
std::unique_ptr<FrozenEncoder> make_encoder(const std::string& name, const EncoderSpec& spec,
                                            const std::filesystem::path& weights = {});
std::unique_ptr<SyntheticEncoder> make_synthetic_encoder(const EncoderSpec& spec);

}  // namespace genclip
