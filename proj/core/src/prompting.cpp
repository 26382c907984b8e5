// SPDX-License-Identifier: Apache-2.0
#include "genclip/prompting.hpp"

#include <cmath>

#include "genclip/error.hpp"
#include "genclip/rng.hpp"

namespace genclip {

Mat AffineMap::apply(const Mat& rows) const {
  if (rows.cols() != weight.rows())
    throw ShapeError("affine map expects " + std::to_string(weight.rows()) + " input columns, got " +
                     std::to_string(rows.cols()));
  Mat out = rows * weight;
  out.rowwise() += bias.row(0);
  return out;
}

PromptBank PromptBank::initialize(const EncoderSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(derive_seed(seed, 0x70726f6d7074ULL));
  const int ct = spec.text_dim;
  PromptBank b;
  b.normal_state = rng.normal_matrix(1, ct, 0.02);
  b.abnormal_state = rng.normal_matrix(1, ct, 0.02);
  b.query = rng.normal_matrix(2, ct, 0.02);
  b.deep_text = rng.normal_matrix(spec.num_text_layers, ct, 0.02);
  for (int layer : spec.selected_layers) {
    const int ci = spec.layer_dim(layer);
    const double s = 1.0 / std::sqrt(static_cast<double>(ci));
    b.layers.push_back(layer);
    b.mvp_projectors.push_back(AffineMap{rng.normal_matrix(ci, ct, s), Mat::Zero(1, ct)});
    b.patch_projectors.push_back(AffineMap{rng.normal_matrix(ci, ct, s), Mat::Zero(1, ct)});
  }
  return b;
}

PromptBank PromptBank::zeros_like(const PromptBank& other) {
  PromptBank z = other;
  for (auto& [name, m] : z.parameters()) m->setZero();
  return z;
}

std::vector<std::pair<std::string, Mat*>> PromptBank::parameters() {
  std::vector<std::pair<std::string, Mat*>> out{
      {"normal_state", &normal_state}, {"abnormal_state", &abnormal_state}, {"query", &query}, {"deep_text", &deep_text}};
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const std::string id = std::to_string(layers[k]);
    out.emplace_back("mvp_projector." + id + ".weight", &mvp_projectors[k].weight);
    out.emplace_back("mvp_projector." + id + ".bias", &mvp_projectors[k].bias);
    out.emplace_back("patch_projector." + id + ".weight", &patch_projectors[k].weight);
    out.emplace_back("patch_projector." + id + ".bias", &patch_projectors[k].bias);
  }
  return out;
}

std::vector<std::pair<std::string, const Mat*>> PromptBank::parameters() const {
  std::vector<std::pair<std::string, const Mat*>> out;
  for (auto& [name, m] : const_cast<PromptBank*>(this)->parameters()) out.emplace_back(name, m);
  return out;
}

std::size_t PromptBank::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, m] : parameters()) n += static_cast<std::size_t>(m->size());
  return n;
}

void PromptBank::validate(const EncoderSpec& spec) const {
  auto fail = [](const std::string& m) { throw ShapeError("prompt bank: " + m); };
  const Eigen::Index ct = spec.text_dim;
  auto expect = [&](const std::string& name, const Mat& m, Eigen::Index r, Eigen::Index c) {
    if (m.rows() != r || m.cols() != c)
      fail(name + " is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ", expected " +
           std::to_string(r) + "x" + std::to_string(c));
    if (!m.allFinite()) fail(name + " has non-finite values");
  };
  expect("normal_state", normal_state, 1, ct);
  expect("abnormal_state", abnormal_state, 1, ct);
  expect("query", query, 2, ct);
  expect("deep_text", deep_text, spec.num_text_layers, ct);
  if (layers != spec.selected_layers) fail("projector layers do not match the encoder's selected layers");
  if (mvp_projectors.size() != layers.size() || patch_projectors.size() != layers.size())
    fail("one projector pair per selected layer required");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const int ci = spec.layer_dim(layers[k]);
    const std::string id = std::to_string(layers[k]);
    expect("mvp_projector." + id + ".weight", mvp_projectors[k].weight, ci, ct);
    expect("mvp_projector." + id + ".bias", mvp_projectors[k].bias, 1, ct);
    expect("patch_projector." + id + ".weight", patch_projectors[k].weight, ci, ct);
    expect("patch_projector." + id + ".bias", patch_projectors[k].bias, 1, ct);
  }
}

PromptBank PromptBank::rounded_to_float() const {
  PromptBank r = *this;
  for (auto& [name, m] : r.parameters()) *m = m->cast<float>().cast<double>();
  return r;
}

bool PromptBank::operator==(const PromptBank& other) const {
  if (layers != other.layers) return false;
  const auto a = parameters();
  const auto b = other.parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first) return false;
    if (a[i].second->rows() != b[i].second->rows() || a[i].second->cols() != b[i].second->cols()) return false;
    if (*a[i].second != *b[i].second) return false;
  }
  return true;
}

BankVars bind_bank(ad::Tape& tape, const PromptBank& bank, bool trainable) {
  auto leaf = [&](const Mat& m) { return trainable ? tape.parameter(m) : tape.constant(m); };
  BankVars v;
  v.normal_state = leaf(bank.normal_state);
  v.abnormal_state = leaf(bank.abnormal_state);
  v.query = leaf(bank.query);
  const ad::Var deep = leaf(bank.deep_text);
  v.all = {v.normal_state, v.abnormal_state, v.query, deep};
  for (Eigen::Index l = 0; l < bank.deep_text.rows(); ++l) v.deep_rows.push_back(ad::rows(deep, l, 1));
  for (std::size_t k = 0; k < bank.layers.size(); ++k) {
    v.mvp_weight.push_back(leaf(bank.mvp_projectors[k].weight));
    v.mvp_bias.push_back(leaf(bank.mvp_projectors[k].bias));
    v.patch_weight.push_back(leaf(bank.patch_projectors[k].weight));
    v.patch_bias.push_back(leaf(bank.patch_projectors[k].bias));
    v.all.insert(v.all.end(), {v.mvp_weight.back(), v.mvp_bias.back(), v.patch_weight.back(), v.patch_bias.back()});
  }
  return v;
}

PromptBank collect_gradients(const ad::Tape& tape, const BankVars& vars, const PromptBank& like) {
  PromptBank g = like;
  auto params = g.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].second = tape.grad(vars.all[i]);
  return g;
}

std::string normalize_class_word(std::string_view class_word) {
  std::string out(class_word);
  for (char& c : out)
    if (c == '_') c = ' ';
  return out;
}

RowVec pooled_features(const LayerFeatures& layer) {
  if (layer.patch_grid.rows() == 0) throw ShapeError("make_mvp: empty patch grid");
  if (layer.class_token.size() != layer.patch_grid.cols())
    throw ShapeError("make_mvp: class token width differs from patch width");
  const double n = static_cast<double>(layer.patch_grid.rows() + 1);
  return (layer.patch_grid.colwise().sum() + layer.class_token) / n;
}

RowVec make_mvp(const LayerFeatures& layer, const AffineMap& projector) {
  return projector.apply(pooled_features(layer)).row(0);
}

ad::Var make_mvp(ad::Tape& tape, const LayerFeatures& layer, ad::Var weight, ad::Var bias) {
  const ad::Var pooled = tape.constant(pooled_features(layer));
  return ad::add(ad::matmul(pooled, weight), bias);
}

Mat fuse_query(const Mat& query, const RowVec& vision_token) {
  if (query.rows() != 2 || query.cols() != vision_token.size())
    throw ShapeError("fuse_query: query must be 2 x " + std::to_string(vision_token.size()));
  Mat out = query;
  out.rowwise() += vision_token;
  return out;
}

ad::Var fuse_query(ad::Var query, ad::Var vision_token) { return ad::add_row(query, vision_token); }

namespace {

TokenSequence build_sequence(const PromptTemplate& tpl, const std::string& state_word, const std::string& class_word,
                             const Mat& state, const Mat& query_rows, const Tokenizer& tok) {
  TokenSequence seq;
  auto append_text = [&](const std::string& text) {
    for (int id : tok.ids(text)) seq.token_ids.push_back(id);
  };
  auto append_slot = [&](SlotRole role, const RowVec& value) {
    seq.soft_slots.push_back(SoftSlot{static_cast<int>(seq.token_ids.size()), role, value});
    seq.token_ids.push_back(Tokenizer::kPad);
  };
  seq.token_ids.push_back(Tokenizer::kSot);
  append_slot(SlotRole::state, state.row(0));
  append_text(tpl.prefix);
  append_text(state_word);
  append_text(class_word);
  append_text(tpl.suffix);
  append_slot(SlotRole::query0, query_rows.row(0));
  append_slot(SlotRole::query1, query_rows.row(1));
  append_text(".");
  seq.eot_position = static_cast<int>(seq.token_ids.size());
  seq.token_ids.push_back(Tokenizer::kEot);
  if (static_cast<int>(seq.token_ids.size()) > tok.seq_len())
    throw Error("prompt for class '" + class_word + "' needs " + std::to_string(seq.token_ids.size()) +
                " tokens, limit is " + std::to_string(tok.seq_len()));
  seq.token_ids.resize(static_cast<std::size_t>(tok.seq_len()), Tokenizer::kPad);
  return seq;
}

}  // namespace

PromptPair assemble_prompt(const PromptTemplate& tpl, std::string_view class_word, const PromptBank& bank,
                           const Tokenizer& tokenizer, const Mat* vision_query) {
  if (class_word.empty()) throw Error("assemble_prompt: empty class word");
  const Mat* query = &bank.query;
  std::string cls = normalize_class_word(class_word);
  if (tpl.use_vision_tokens) {
    if (vision_query == nullptr) throw Error("assemble_prompt: vision-enhanced prompt needs vision query tokens");
    if (vision_query->rows() != 2 || vision_query->cols() != bank.query.cols())
      throw ShapeError("assemble_prompt: vision query tokens must be 2 x " + std::to_string(bank.query.cols()));
    query = vision_query;
  } else {
    cls = std::string(kUniversalClassWord);
  }
  return PromptPair{build_sequence(tpl, tpl.normal_word, cls, bank.normal_state, *query, tokenizer),
                    build_sequence(tpl, tpl.abnormal_word, cls, bank.abnormal_state, *query, tokenizer)};
}

TextEmbeddingPair embed_prompt_pair(const PromptPair& prompts, const PromptBank& bank, const FrozenEncoder& encoder) {
  if (encoder.spec().text_dim != bank.query.cols())
    throw ShapeError("embed_prompt_pair: encoder text_dim " + std::to_string(encoder.spec().text_dim) +
                     " differs from prompt width " + std::to_string(bank.query.cols()));
  return TextEmbeddingPair{encoder.encode_text(prompts.normal, &bank.deep_text),
                           encoder.encode_text(prompts.abnormal, &bank.deep_text)};
}

ad::Var embed_prompt_pair(ad::Tape& tape, const PromptPair& prompts, const BankVars& bank, ad::Var query_rows,
                          const FrozenEncoder& encoder) {
  const ad::Var q0 = ad::rows(query_rows, 0, 1);
  const ad::Var q1 = ad::rows(query_rows, 1, 1);
  auto slot_vars = [&](const TokenSequence& seq, ad::Var state) {
    std::vector<ad::Var> vars;
    for (const auto& slot : seq.soft_slots) {
      switch (slot.role) {
        case SlotRole::state: vars.push_back(state); break;
        case SlotRole::query0: vars.push_back(q0); break;
        case SlotRole::query1: vars.push_back(q1); break;
      }
    }
    return vars;
  };
  const auto normal_slots = slot_vars(prompts.normal, bank.normal_state);
  const auto abnormal_slots = slot_vars(prompts.abnormal, bank.abnormal_state);
  const ad::Var n = encoder.encode_text(tape, prompts.normal, normal_slots, bank.deep_rows);
  const ad::Var a = encoder.encode_text(tape, prompts.abnormal, abnormal_slots, bank.deep_rows);
  const ad::Var both[] = {n, a};
  return ad::vstack(both);
}

}  // namespace genclip
