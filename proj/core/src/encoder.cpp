// SPDX-License-Identifier: Apache-2.0
#include "genclip/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <mutex>

#include "genclip/error.hpp"
#include "genclip/rng.hpp"

namespace genclip {

void EncoderSpec::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid encoder spec: " + m); };
  if (num_vision_layers <= 0) fail("num_vision_layers must be positive");
  if (selected_layers.empty()) fail("selected_layers is empty");
  for (std::size_t i = 0; i < selected_layers.size(); ++i) {
    const int l = selected_layers[i];
    if (l < 1 || l > num_vision_layers)
      fail("selected layer " + std::to_string(l) + " outside [1, " + std::to_string(num_vision_layers) + "]");
    if (i > 0 && l <= selected_layers[i - 1]) fail("selected_layers must be strictly increasing");
  }
  if (vision_dims.size() != 1 && vision_dims.size() != static_cast<std::size_t>(num_vision_layers))
    fail("vision_dims needs 1 or num_vision_layers entries, got " + std::to_string(vision_dims.size()));
  for (int d : vision_dims)
    if (d <= 0) fail("vision dims must be positive");
  if (text_dim <= 0) fail("text_dim must be positive");
  if (patch_size <= 0) fail("patch_size must be positive");
  if (image_size <= 0 || image_size % patch_size != 0)
    fail("image_size " + std::to_string(image_size) + " not divisible by patch_size " + std::to_string(patch_size));
  if (text_seq_len < 3) fail("text_seq_len must be at least 3");
  if (num_text_layers <= 0) fail("num_text_layers must be positive");
  if (vocab_size < 4) fail("vocab_size must be at least 4");
}

int EncoderSpec::layer_dim(int layer) const {
  if (layer < 1 || layer > num_vision_layers) throw ConfigError("layer index out of range: " + std::to_string(layer));
  return vision_dims.size() == 1 ? vision_dims.front() : vision_dims[static_cast<std::size_t>(layer - 1)];
}

std::vector<int> EncoderSpec::selected_dims() const {
  std::vector<int> out;
  for (int l : selected_layers) out.push_back(layer_dim(l));
  return out;
}

bool TokenSequence::operator==(const TokenSequence& o) const {
  if (token_ids != o.token_ids || eot_position != o.eot_position || soft_slots.size() != o.soft_slots.size())
    return false;
  for (std::size_t i = 0; i < soft_slots.size(); ++i) {
    const auto& a = soft_slots[i];
    const auto& b = o.soft_slots[i];
    if (a.position != b.position || a.role != b.role || a.value.size() != b.value.size() || a.value != b.value)
      return false;
  }
  return true;
}

// Tokenizer -------------------------------------------------------------

Tokenizer::Tokenizer(int vocab_size, int seq_len) : vocab_size_(vocab_size), seq_len_(seq_len) {
  if (vocab_size < 4) throw ConfigError("tokenizer: vocab_size must be at least 4");
  if (seq_len < 3) throw ConfigError("tokenizer: seq_len must be at least 3");
}

std::vector<std::string> Tokenizer::split_words(std::string_view text) const {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (ch == '.' || ch == ',') {
      flush();
      words.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return words;
}

int Tokenizer::id(std::string_view word) const {
  const auto* p = reinterpret_cast<const unsigned char*>(word.data());
  const std::uint64_t h = fnv1a64(std::span<const unsigned char>(p, word.size()));
  return 3 + static_cast<int>(h % static_cast<std::uint64_t>(vocab_size_ - 3));
}

std::vector<int> Tokenizer::ids(std::string_view text) const {
  std::vector<int> out;
  for (const auto& w : split_words(text)) out.push_back(id(w));
  return out;
}

TokenSequence Tokenizer::encode(std::string_view text) const {
  TokenSequence seq;
  seq.token_ids.push_back(kSot);
  for (int i : ids(text)) seq.token_ids.push_back(i);
  seq.eot_position = static_cast<int>(seq.token_ids.size());
  seq.token_ids.push_back(kEot);
  if (static_cast<int>(seq.token_ids.size()) > seq_len_)
    throw Error("text '" + std::string(text) + "' needs " + std::to_string(seq.token_ids.size()) +
                " tokens, limit is " + std::to_string(seq_len_));
  seq.token_ids.resize(static_cast<std::size_t>(seq_len_), kPad);
  return seq;
}

// FrozenEncoder ---------------------------------------------------------

RowVec FrozenEncoder::encode_text(const TokenSequence& seq, const Mat* deep_tokens) const {
  ad::Tape tape;
  std::vector<ad::Var> deep;
  if (deep_tokens) {
    for (Eigen::Index l = 0; l < deep_tokens->rows(); ++l) deep.push_back(tape.constant(deep_tokens->row(l)));
  }
  const ad::Var out = encode_text(tape, seq, {}, deep);
  return out.value().row(0);
}

// SyntheticEncoder ------------------------------------------------------

namespace {

Mat draw(std::uint64_t seed, std::uint64_t stream, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Rng rng(derive_seed(seed, stream));
  return rng.normal_matrix(rows, cols, stddev);
}

SyntheticWeights::Layer make_layer(std::uint64_t seed, std::uint64_t base, int in, int out, double bias_std) {
  SyntheticWeights::Layer layer;
  const double s = 1.0 / std::sqrt(static_cast<double>(in));
  layer.self_mix = draw(seed, base + 0, in, out, s);
  layer.context_mix = draw(seed, base + 1, in, out, s);
  layer.bias = draw(seed, base + 2, 1, out, bias_std).row(0);
  if (in != out) layer.skip = draw(seed, base + 3, in, out, s);
  return layer;
}

Mat apply_layer(const SyntheticWeights::Layer& layer, const Mat& x) {
  const RowVec ctx = x.colwise().mean() * layer.context_mix + layer.bias;
  Mat h = x * layer.self_mix;
  h.rowwise() += ctx;
  Mat base = layer.skip.size() == 0 ? x : Mat(x * layer.skip);
  return base + h.array().tanh().matrix();
}

}  // namespace

SyntheticEncoder::SyntheticEncoder(EncoderSpec spec)
    : spec_((spec.validate(), std::move(spec))), tokenizer_(spec_.vocab_size, spec_.text_seq_len) {
  const std::uint64_t seed = spec_.seed;
  const int p = spec_.patch_size;
  const int c1 = spec_.layer_dim(1);
  const int patch_len = 3 * p * p;
  w_.patch_embed = draw(seed, kPatchEmbed, patch_len, c1, 1.0 / std::sqrt(static_cast<double>(patch_len)));
  w_.vision_pos = draw(seed, kVisionPos, spec_.num_patches(), c1, 0.1);
  w_.class_embed = draw(seed, kClassEmbed, 1, c1, 1.0).row(0);
  int in = c1;
  for (int l = 1; l <= spec_.num_vision_layers; ++l) {
    const int out = spec_.layer_dim(l);
    w_.vision_layers.push_back(make_layer(seed, kVisionLayerBase + 4ULL * static_cast<std::uint64_t>(l), in, out, 0.1));
    in = out;
  }
  w_.image_proj = draw(seed, kImageProj, in, spec_.text_dim, 1.0 / std::sqrt(static_cast<double>(in)));

  const int ct = spec_.text_dim;
  w_.text_pos = draw(seed, kTextPos, spec_.text_seq_len, ct, 0.1);
  for (int l = 1; l <= spec_.num_text_layers; ++l)
    w_.text_layers.push_back(make_layer(seed, kTextLayerBase + 4ULL * static_cast<std::uint64_t>(l), ct, ct, 0.1));
  w_.text_proj = draw(seed, kTextProj, ct, ct, 1.0 / std::sqrt(static_cast<double>(ct)));
  w_.token_seed = derive_seed(seed, kTokenStream);
}

RowVec SyntheticEncoder::token_embedding(int id) const {
  Rng rng(derive_seed(w_.token_seed, static_cast<std::uint64_t>(id)));
  return rng.normal_matrix(1, spec_.text_dim, 1.0).row(0);
}

PatchFeatureStack SyntheticEncoder::encode_image(const Image& image) const {
  const int s = spec_.image_size;
  if (image.height != s || image.width != s || image.channels != 3)
    throw ShapeError("encode_image: expected " + std::to_string(s) + "x" + std::to_string(s) + "x3, got " +
                     std::to_string(image.height) + "x" + std::to_string(image.width) + "x" +
                     std::to_string(image.channels));
  const int p = spec_.patch_size;
  const int g = spec_.grid_side();
  Mat patches(static_cast<Eigen::Index>(g) * g, 3 * p * p);
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < g; ++c) {
      Eigen::Index k = 0;
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          for (int ch = 0; ch < 3; ++ch) patches(r * g + c, k++) = (image.at(r * p + dy, c * p + dx, ch) - 0.5) / 0.25;
    }
  Mat x(patches.rows() + 1, w_.patch_embed.cols());
  x.row(0) = w_.class_embed;
  x.bottomRows(patches.rows()) = patches * w_.patch_embed + w_.vision_pos;

  PatchFeatureStack out;
  out.grid_h = g;
  out.grid_w = g;
  auto next = spec_.selected_layers.begin();
  for (int l = 1; l <= spec_.num_vision_layers; ++l) {
    x = apply_layer(w_.vision_layers[static_cast<std::size_t>(l - 1)], x);
    if (next != spec_.selected_layers.end() && *next == l) {
      out.layers.push_back(LayerFeatures{l, x.row(0), x.bottomRows(x.rows() - 1)});
      ++next;
    }
  }
  RowVec emb = x.row(0) * w_.image_proj;
  out.image_embedding = emb / std::max(emb.norm(), 1e-12);
  return out;
}

ad::Var SyntheticEncoder::encode_text(ad::Tape& tape, const TokenSequence& seq, std::span<const ad::Var> soft_values,
                                      std::span<const ad::Var> deep_tokens) const {
  const int n_max = spec_.text_seq_len;
  const int ct = spec_.text_dim;
  if (static_cast<int>(seq.token_ids.size()) > n_max)
    throw Error("encode_text: sequence of length " + std::to_string(seq.token_ids.size()) + " exceeds limit " +
                std::to_string(n_max));
  if (seq.eot_position < 1 || seq.eot_position >= static_cast<int>(seq.token_ids.size()))
    throw Error("encode_text: eot_position " + std::to_string(seq.eot_position) + " out of range");
  if (!soft_values.empty() && soft_values.size() != seq.soft_slots.size())
    throw ShapeError("encode_text: " + std::to_string(soft_values.size()) + " soft values for " +
                     std::to_string(seq.soft_slots.size()) + " slots");
  const bool deep = !deep_tokens.empty();
  if (deep && static_cast<int>(deep_tokens.size()) != spec_.num_text_layers)
    throw ShapeError("encode_text: expected " + std::to_string(spec_.num_text_layers) + " deep tokens, got " +
                     std::to_string(deep_tokens.size()));
  const int eot = seq.eot_position + (deep ? 1 : 0);
  if (eot >= n_max)
    throw Error("encode_text: sequence with deep token needs " + std::to_string(eot + 1) + " positions, limit is " +
                std::to_string(n_max));

  std::vector<int> slot_at(static_cast<std::size_t>(seq.eot_position), -1);
  for (std::size_t k = 0; k < seq.soft_slots.size(); ++k) {
    const int pos = seq.soft_slots[k].position;
    if (pos < 0 || pos >= seq.eot_position)
      throw Error("encode_text: soft slot at " + std::to_string(pos) + " is not before EOT");
    slot_at[static_cast<std::size_t>(pos)] = static_cast<int>(k);
  }

  std::vector<ad::Var> rows;
  rows.reserve(static_cast<std::size_t>(eot) + 1);
  for (int p = 0; p < seq.eot_position; ++p) {
    const int k = slot_at[static_cast<std::size_t>(p)];
    if (k < 0) {
      rows.push_back(tape.constant(token_embedding(seq.token_ids[static_cast<std::size_t>(p)]) + w_.text_pos.row(p)));
    } else {
      const ad::Var v = soft_values.empty() ? tape.constant(seq.soft_slots[static_cast<std::size_t>(k)].value)
                                            : soft_values[static_cast<std::size_t>(k)];
      if (v.cols() != ct || v.rows() != 1) throw ShapeError("encode_text: soft slot value must be 1 x text_dim");
      rows.push_back(ad::add(v, tape.constant(w_.text_pos.row(p))));
    }
  }
  if (deep) rows.push_back(tape.constant(Mat::Zero(1, ct)));
  rows.push_back(tape.constant(token_embedding(Tokenizer::kEot) + w_.text_pos.row(eot)));

  ad::Var x = ad::vstack(rows);
  for (std::size_t l = 0; l < w_.text_layers.size(); ++l) {
    const auto& layer = w_.text_layers[l];
    if (deep) x = ad::replace_row(x, eot - 1, deep_tokens[l]);
    const ad::Var ctx = ad::add(ad::matmul(ad::mean_rows(x), layer.context_mix), tape.constant(layer.bias));
    const ad::Var h = ad::add_row(ad::matmul(x, layer.self_mix), ctx);
    x = ad::add(x, ad::tanh(h));
  }
  return ad::normalize_rows(ad::matmul(ad::rows(x, eot, 1), w_.text_proj));
}

std::uint64_t SyntheticEncoder::digest() const {
  std::uint64_t h = fnv1a64(w_.patch_embed);
  h = fnv1a64(w_.vision_pos, h);
  h = fnv1a64(Mat(w_.class_embed), h);
  for (const auto* layers : {&w_.vision_layers, &w_.text_layers})
    for (const auto& l : *layers) {
      h = fnv1a64(l.self_mix, h);
      h = fnv1a64(l.context_mix, h);
      h = fnv1a64(Mat(l.bias), h);
      h = fnv1a64(l.skip, h);
    }
  h = fnv1a64(w_.image_proj, h);
  h = fnv1a64(w_.text_pos, h);
  h = fnv1a64(w_.text_proj, h);
  return h ^ w_.token_seed;
}

// Registry --------------------------------------------------------------

namespace {

struct Registry {
  std::mutex mu;
  std::map<std::string, EncoderFactory> factories;
  Registry() {
    factories["synthetic"] = [](const EncoderSpec& spec, const std::filesystem::path&) {
      return std::unique_ptr<FrozenEncoder>(std::make_unique<SyntheticEncoder>(spec));
    };
  }
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

void register_encoder_adapter(const std::string& name, EncoderFactory factory) {
  if (name.empty() || !factory) throw ConfigError("register_encoder_adapter: empty name or factory");
  auto& r = registry();
  std::lock_guard lock(r.mu);
  r.factories[name] = std::move(factory);
}

std::vector<std::string> registered_encoder_adapters() {
  auto& r = registry();
  std::lock_guard lock(r.mu);
  std::vector<std::string> names;
  for (const auto& [k, v] : r.factories) names.push_back(k);
  return names;
}

std::unique_ptr<FrozenEncoder> make_encoder(const std::string& name, const EncoderSpec& spec,
                                            const std::filesystem::path& weights) {
  EncoderFactory f;
  {
    auto& r = registry();
    std::lock_guard lock(r.mu);
    auto it = r.factories.find(name);
    if (it == r.factories.end()) {
      std::string known;
      for (const auto& [k, v] : r.factories) known += (known.empty() ? "" : ", ") + k;
      throw ConfigError("unknown encoder adapter '" + name + "' (registered: " + known + ")");
    }
    f = it->second;
  }
  spec.validate();
  return f(spec, weights);
}

std::unique_ptr<SyntheticEncoder> make_synthetic_encoder(const EncoderSpec& spec) {
  return std::make_unique<SyntheticEncoder>(spec);
}

}  // namespace genclip
