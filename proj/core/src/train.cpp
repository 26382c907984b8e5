// SPDX-License-Identifier: Apache-2.0
#include "genclip/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "genclip/error.hpp"
#include "genclip/parallel.hpp"
#include "genclip/rng.hpp"

namespace genclip {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train: Adam betas must be in [0,1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("train: adam_epsilon must be > 0");
}

TrainingSample make_training_sample(const Sample& sample, const std::string& key, const FrozenEncoder& encoder) {
  TrainingSample t;
  t.key = key;
  t.class_word = sample.class_name;
  t.features = encoder.encode_image(sample.image);
  t.gt = sample.gt_map;
  return t;
}

ad::Var sample_loss(ad::Tape& tape, const BankVars& bank, const TrainingSample& sample, const FrozenEncoder& encoder,
                    const PromptTemplate& tpl, const LossConfig& loss, double temperature) {
  const auto& f = sample.features;
  std::vector<ad::Var> maps;
  for (std::size_t k = 0; k < f.layers.size(); ++k)
    maps.push_back(vision_branch_map(tape, bank, k, f.layers[k], f.grid_h, f.grid_w, sample.class_word, tpl, encoder,
                                     sample.gt.height, sample.gt.width, temperature));
  return total_loss(maps, sample.gt.values, loss);
}

LossAndGradient loss_and_gradient(const PromptBank& bank, const TrainingSample& sample, const FrozenEncoder& encoder,
                                  const PromptTemplate& tpl, const LossConfig& loss, double temperature) {
  ad::Tape tape;
  const BankVars vars = bind_bank(tape, bank, true);
  const ad::Var l = sample_loss(tape, vars, sample, encoder, tpl, loss, temperature);
  tape.backward(l);
  return {l.value()(0, 0), collect_gradients(tape, vars, bank)};
}

double loss_value(const PromptBank& bank, const TrainingSample& sample, const FrozenEncoder& encoder,
                  const PromptTemplate& tpl, const LossConfig& loss, double temperature) {
  ad::Tape tape;
  const BankVars vars = bind_bank(tape, bank, false);
  return sample_loss(tape, vars, sample, encoder, tpl, loss, temperature).value()(0, 0);
}

AdamOptimizer::AdamOptimizer(const PromptBank& like, const TrainConfig& config)
    : config_(config), m_(PromptBank::zeros_like(like)), v_(PromptBank::zeros_like(like)) {}

void AdamOptimizer::step(PromptBank& bank, const PromptBank& gradient) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, t_);
  const double c2 = 1.0 - std::pow(b2, t_);
  auto p = bank.parameters();
  const auto g = gradient.parameters();
  auto m = m_.parameters();
  auto v = v_.parameters();
  for (std::size_t i = 0; i < p.size(); ++i) {
    Mat& pm = *p[i].second;
    const Mat& gm = *g[i].second;
    Mat& mm = *m[i].second;
    Mat& vm = *v[i].second;
    mm = b1 * mm + (1.0 - b1) * gm;
    vm = b2 * vm + (1.0 - b2) * gm.cwiseProduct(gm);
    pm.array() -= config_.learning_rate * (mm.array() / c1) / ((vm.array() / c2).sqrt() + config_.adam_epsilon);
  }
}

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void add_scaled(PromptBank& acc, const PromptBank& g, double s) {
  auto a = acc.parameters();
  const auto b = g.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) *a[i].second += s * *b[i].second;
}

}  // namespace

TrainResult train_on_samples(const std::vector<TrainingSample>& samples, const FrozenEncoder& encoder,
                             const TrainOptions& options, std::ostream* log, const std::string& dataset_id) {
  options.train.validate();
  options.loss.validate();
  options.scoring.validate();
  if (samples.empty()) throw Error("train: empty training set");
  const TrainConfig& cfg = options.train;

  PromptBank bank = PromptBank::initialize(encoder.spec(), cfg.seed);
  AdamOptimizer adam(bank, cfg);
  TrainResult result;

  if (log)
    *log << "train samples=" << samples.size() << " lr=" << format_double(cfg.learning_rate)
         << " epochs=" << cfg.epochs << " batch_size=" << cfg.batch_size << " seed=" << cfg.seed
         << " temperature=" << format_double(options.scoring.temperature)
         << " focal_alpha=" << format_double(options.loss.focal_alpha)
         << " focal_gamma=" << format_double(options.loss.focal_gamma)
         << " dice_epsilon=" << format_double(options.loss.dice_epsilon) << "\n";

  std::vector<std::size_t> order(samples.size());
  std::int64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(derive_seed(cfg.seed, 0x73687566666c65ULL), static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);

    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t n = end - start;
      std::vector<LossAndGradient> parts(n);
      parallel_for(n, cfg.workers, [&](std::size_t i) {
        parts[i] = loss_and_gradient(bank, samples[order[start + i]], encoder, options.tpl, options.loss,
                                     options.scoring.temperature);
      });
      ++step;
      double batch_total = 0.0;
      PromptBank grad = PromptBank::zeros_like(bank);
      for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(parts[i].loss))
          throw Error("train: non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                      " on sample " + samples[order[start + i]].key);
        batch_total += parts[i].loss;
        add_scaled(grad, parts[i].gradient, 1.0 / static_cast<double>(n));
      }
      adam.step(bank, grad);
      const double batch_loss = batch_total / static_cast<double>(n);
      epoch_total += batch_total;
      result.step_losses.push_back(batch_loss);
      if (log) *log << "epoch=" << epoch << " step=" << step << " loss=" << format_double(batch_loss) << "\n";
    }
    const double epoch_loss = epoch_total / static_cast<double>(samples.size());
    result.epoch_losses.push_back(epoch_loss);
    if (log) *log << "epoch=" << epoch << " mean_loss=" << format_double(epoch_loss) << "\n";
  }

  CheckpointHeader& h = result.checkpoint.header;
  h.encoder_name = options.encoder_name;
  h.encoder = encoder.spec();
  h.scoring = options.scoring;
  h.loss = options.loss;
  h.train = cfg;
  h.dataset_id = dataset_id;
  h.steps = step;
  result.checkpoint.bank = bank.rounded_to_float();
  return result;
}

TrainResult train(const DatasetManifest& manifest, const FrozenEncoder& encoder, const TrainOptions& options,
                  std::ostream* log) {
  if (manifest.entries.empty()) throw Error("train: manifest under " + manifest.root.string() + " has no entries");
  const int size = encoder.spec().image_size;
  std::vector<TrainingSample> samples(manifest.entries.size());
  parallel_for(samples.size(), options.train.workers, [&](std::size_t i) {
    const ManifestEntry& e = manifest.entries[i];
    samples[i] = make_training_sample(load_sample(e, size), e.key(), encoder);
  });
  char id[32];
  std::snprintf(id, sizeof id, "%016llx", static_cast<unsigned long long>(manifest.digest()));
  return train_on_samples(samples, encoder, options, log, id);
}

}  // namespace genclip
