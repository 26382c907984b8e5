// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "genclip/cnf.hpp"
#include "genclip/encoder.hpp"
#include "genclip/loss.hpp"
#include "genclip/metrics.hpp"
#include "genclip/scoring.hpp"
#include "genclip/train.hpp"

namespace genclip::cli {

/// Environment variable naming the default config file.
inline constexpr const char* kConfigEnv = "GENCLIP_CONFIG";

/// Everything a run needs, read from one flat JSON object.
///
/// Precedence, lowest first: built-in defaults, the config file (--config,
/// else $GENCLIP_CONFIG), command-line flags.
struct RunConfig {
  std::string encoder_name = "synthetic";
  std::string encoder_weights;
  EncoderSpec encoder;
  ScoringConfig scoring;
  LossConfig loss;
  TrainConfig train;
  CnfConfig cnf;
  EvalConfig::Pooling pooling = EvalConfig::Pooling::per_class;
  double fpr_limit = 0.3;
  int num_thresholds = 200;
  bool raw_dump = true;
  int workers = 1;
  std::string train_root;
  std::string test_root;
  std::string output_dir = "genclip_out";

  void validate() const;
  /// Flat JSON with every key, stable order.
  std::string to_json() const;
  /// Keys absent from `text` keep their current values; unknown keys throw.
  void merge_json(const std::string& text, const std::string& origin);
  EvalConfig eval_config() const;
};

/// Documented key list, in snapshot order.
const std::vector<std::string>& run_config_keys();

/// Defaults, then the file at `path` (or $GENCLIP_CONFIG when path is empty).
RunConfig load_run_config(const std::string& path);

}  // namespace genclip::cli
