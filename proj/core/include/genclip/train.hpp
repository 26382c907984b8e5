// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "genclip/data.hpp"
#include "genclip/encoder.hpp"
#include "genclip/loss.hpp"
#include "genclip/prompting.hpp"
#include "genclip/scoring.hpp"

namespace genclip {

struct TrainConfig {
  double learning_rate = 4e-5;
  int epochs = 15;
  int batch_size = 8;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  int workers = 1;  // per-sample gradients within a batch; summed in sample order

  void validate() const;
};

/// Frozen features and target of one training image.
struct TrainingSample {
  std::string key;
  std::string class_word;
  PatchFeatureStack features;
  Grid gt;
};

TrainingSample make_training_sample(const Sample& sample, const std::string& key, const FrozenEncoder& encoder);

/// Differentiable per-image objective: sum over selected layers of focal +
/// dice on the vision-enhanced map at ground-truth resolution.
ad::Var sample_loss(ad::Tape& tape, const BankVars& bank, const TrainingSample& sample, const FrozenEncoder& encoder,
                    const PromptTemplate& tpl, const LossConfig& loss, double temperature);

struct LossAndGradient {
  double loss = 0.0;
  PromptBank gradient;
};
LossAndGradient loss_and_gradient(const PromptBank& bank, const TrainingSample& sample, const FrozenEncoder& encoder,
                                  const PromptTemplate& tpl, const LossConfig& loss, double temperature);
double loss_value(const PromptBank& bank, const TrainingSample& sample, const FrozenEncoder& encoder,
                  const PromptTemplate& tpl, const LossConfig& loss, double temperature);

/// Adam with bias correction, constant learning rate.
class AdamOptimizer {
 public:
  AdamOptimizer(const PromptBank& like, const TrainConfig& config);
  void step(PromptBank& bank, const PromptBank& gradient);
  int steps() const { return t_; }

 private:
  TrainConfig config_;
  PromptBank m_, v_;
  int t_ = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::uint32_t format_version = kCheckpointVersion;
  std::string encoder_name = "synthetic";
  EncoderSpec encoder;
  ScoringConfig scoring;
  LossConfig loss;
  TrainConfig train;
  std::string dataset_id;
  std::int64_t steps = 0;
  std::string notes = "constant learning rate; no gradient clipping; no weight decay";

  std::string to_json() const;
  static CheckpointHeader from_json(const std::string& text);
};

struct Checkpoint {
  CheckpointHeader header;
  PromptBank bank;  // float32-representable values
};

/// Layout (little-endian): "GENCLIPK" | u32 version | u64 header bytes |
/// header JSON | u32 tensor count | per tensor: u32 name bytes, name,
/// u32 rows, u32 cols, rows*cols f32 | u64 FNV-1a of everything before it.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

struct TrainOptions {
  TrainConfig train;
  LossConfig loss;
  ScoringConfig scoring;  // only the temperature is used; stored in the header
  PromptTemplate tpl;
  std::string encoder_name = "synthetic";
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> step_losses;   // batch mean per optimizer step
  std::vector<double> epoch_losses;  // mean over the epoch's samples
};

/// Trains on prepared samples. Log lines: "epoch=E step=S loss=L".
TrainResult train_on_samples(const std::vector<TrainingSample>& samples, const FrozenEncoder& encoder,
                             const TrainOptions& options, std::ostream* log = nullptr,
                             const std::string& dataset_id = {});

/// Uses every manifest entry (train and test splits) as supervision.
TrainResult train(const DatasetManifest& manifest, const FrozenEncoder& encoder, const TrainOptions& options,
                  std::ostream* log = nullptr);

}  // namespace genclip
