// SPDX-License-Identifier: Apache-2.0
#include "genclip/cnf.hpp"

#include <algorithm>
#include <cctype>

#include "genclip/error.hpp"
#include "genclip/prompting.hpp"

namespace genclip {

void CnfConfig::validate() const {
  if (generic_term.empty()) throw ConfigError("cnf: generic_term must not be empty");
}

const char* to_string(CnfConfig::Mode m) {
  return m == CnfConfig::Mode::per_image ? "per_image" : "per_class_majority";
}

CnfConfig::Mode cnf_mode_from_string(const std::string& s) {
  if (s == "per_image") return CnfConfig::Mode::per_image;
  if (s == "per_class_majority") return CnfConfig::Mode::per_class_majority;
  throw ConfigError("unknown cnf mode '" + s + "' (expected per_image or per_class_majority)");
}

std::string strip_numeric(std::string_view class_name) {
  std::string_view s = class_name;
  while (!s.empty() && std::isdigit(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  while (!s.empty() && (s.back() == '_' || s.back() == '-')) s.remove_suffix(1);
  if (s.empty()) return std::string(class_name);
  return std::string(s);
}

std::string cnf_class_sentence(std::string_view class_word) {
  return "a photo of a " + normalize_class_word(class_word);
}

std::string cnf_generic_sentence(std::string_view generic_term) {
  if (generic_term == "object") return "a photo of an object";
  return "a photo of a " + normalize_class_word(generic_term);
}

namespace {

struct Similarities {
  double cls = 0.0;
  double generic = 0.0;
};

Similarities cnf_similarities(const PatchFeatureStack& features, std::string_view class_word,
                              std::string_view generic_term, const FrozenEncoder& encoder) {
  const RowVec& img = features.image_embedding;
  if (img.size() != encoder.spec().text_dim)
    throw ShapeError("class-name filtering: image embedding width " + std::to_string(img.size()) +
                     " differs from text width " + std::to_string(encoder.spec().text_dim));
  const auto& tok = encoder.tokenizer();
  const RowVec cls = encoder.encode_text(tok.encode(cnf_class_sentence(class_word)));
  const RowVec gen = encoder.encode_text(tok.encode(cnf_generic_sentence(generic_term)));
  // text embeddings are unit norm; normalize the image side explicitly
  const double inv = 1.0 / std::max(img.norm(), 1e-12);
  return Similarities{cls.dot(img) * inv, gen.dot(img) * inv};
}

}  // namespace

CnfDecision decide_class_name(const PatchFeatureStack& features, std::string_view original, const CnfConfig& config,
                              const FrozenEncoder& encoder) {
  config.validate();
  CnfDecision d;
  d.original = std::string(original);
  d.stripped = strip_numeric(original);
  d.final_name = d.stripped;
  if (!config.enabled) return d;
  const auto sim = cnf_similarities(features, d.stripped, config.generic_term, encoder);
  d.class_similarity = sim.cls;
  d.generic_similarity = sim.generic;
  if (sim.generic > sim.cls) d.final_name = config.generic_term;
  return d;
}

std::string filter_class_name(const PatchFeatureStack& features, std::string_view class_name, const CnfConfig& config,
                              const FrozenEncoder& encoder) {
  config.validate();
  if (!config.enabled) return std::string(class_name);
  const auto sim = cnf_similarities(features, class_name, config.generic_term, encoder);
  return sim.generic > sim.cls ? config.generic_term : std::string(class_name);
}

std::string filter_class_name(const Image& image, std::string_view class_name, const CnfConfig& config,
                              const FrozenEncoder& encoder) {
  if (!config.enabled) return std::string(class_name);
  return filter_class_name(encoder.encode_image(image), class_name, config, encoder);
}

std::string majority_class_name(std::span<const CnfDecision> decisions) {
  if (decisions.empty()) throw Error("majority_class_name: no decisions");
  std::size_t replaced = 0;
  for (const auto& d : decisions) replaced += d.replaced() ? 1 : 0;
  const auto& first = decisions.front();
  if (2 * replaced > decisions.size()) {
    for (const auto& d : decisions)
      if (d.replaced()) return d.final_name;
  }
  return first.stripped;
}

}  // namespace genclip
