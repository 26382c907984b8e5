// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <string_view>

#include "genclip/encoder.hpp"

namespace genclip {

/// Class-name filtering settings.
struct CnfConfig {
  enum class Mode { per_image, per_class_majority };

  std::string generic_term = "object";
  bool enabled = true;
  Mode mode = Mode::per_image;

  void validate() const;
};

const char* to_string(CnfConfig::Mode m);
CnfConfig::Mode cnf_mode_from_string(const std::string& s);

/// Drops trailing digits, then a trailing '_' or '-'. Returns the input
/// unchanged when stripping would leave nothing ("02" stays "02").
std::string strip_numeric(std::string_view class_name);

/// "a photo of a <cls>" for a class word, "a photo of an object" for the
/// default generic term, "a photo of a <term>" for any other generic term.
std::string cnf_class_sentence(std::string_view class_word);
std::string cnf_generic_sentence(std::string_view generic_term);

struct CnfDecision {
  std::string original;
  std::string stripped;
  std::string final_name;
  double class_similarity = 0.0;
  double generic_similarity = 0.0;
  bool replaced() const { return final_name != stripped; }
};

/// Compares the frozen image embedding with the frozen embeddings of the two
/// sentences. Returns the generic term iff its similarity is strictly larger;
/// identity when filtering is disabled. `class_name` must already be stripped.
std::string filter_class_name(const PatchFeatureStack& features, std::string_view class_name, const CnfConfig& config,
                              const FrozenEncoder& encoder);
std::string filter_class_name(const Image& image, std::string_view class_name, const CnfConfig& config,
                              const FrozenEncoder& encoder);

/// strip_numeric followed by filter_class_name, with the similarities kept.
CnfDecision decide_class_name(const PatchFeatureStack& features, std::string_view original, const CnfConfig& config,
                              const FrozenEncoder& encoder);

/// Majority vote across one class's per-image decisions; ties keep the class name.
std::string majority_class_name(std::span<const CnfDecision> decisions);

}  // namespace genclip
