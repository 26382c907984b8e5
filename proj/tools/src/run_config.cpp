// SPDX-License-Identifier: Apache-2.0
#include "genclip_cli/run_config.hpp"

#include <cstdlib>

#include "genclip/error.hpp"
#include "genclip/export.hpp"
#include "json.hpp"

namespace genclip::cli {

using json = nlohmann::ordered_json;

namespace {

const char* pooling_name(EvalConfig::Pooling p) { return p == EvalConfig::Pooling::global ? "global" : "per_class"; }

EvalConfig::Pooling pooling_from(const std::string& s) {
  if (s == "per_class") return EvalConfig::Pooling::per_class;
  if (s == "global") return EvalConfig::Pooling::global;
  throw ConfigError("pooling must be 'per_class' or 'global', got '" + s + "'");
}

json as_json(const RunConfig& c) {
  json j;
  j["encoder"] = c.encoder_name;
  j["encoder_weights"] = c.encoder_weights;
  j["num_vision_layers"] = c.encoder.num_vision_layers;
  j["selected_layers"] = c.encoder.selected_layers;
  j["vision_dims"] = c.encoder.vision_dims;
  j["text_dim"] = c.encoder.text_dim;
  j["patch_size"] = c.encoder.patch_size;
  j["image_size"] = c.encoder.image_size;
  j["text_seq_len"] = c.encoder.text_seq_len;
  j["num_text_layers"] = c.encoder.num_text_layers;
  j["vocab_size"] = c.encoder.vocab_size;
  j["encoder_seed"] = c.encoder.seed;
  j["alpha"] = c.scoring.alpha;
  j["sigma"] = c.scoring.sigma;
  j["n1"] = c.scoring.n1;
  j["n2"] = c.scoring.n2;
  j["temperature"] = c.scoring.temperature;
  j["dice_epsilon"] = c.loss.dice_epsilon;
  j["focal_alpha"] = c.loss.focal_alpha;
  j["focal_gamma"] = c.loss.focal_gamma;
  j["learning_rate"] = c.train.learning_rate;
  j["epochs"] = c.train.epochs;
  j["batch_size"] = c.train.batch_size;
  j["beta1"] = c.train.beta1;
  j["beta2"] = c.train.beta2;
  j["adam_epsilon"] = c.train.adam_epsilon;
  j["seed"] = c.train.seed;
  j["cnf_enabled"] = c.cnf.enabled;
  j["generic_term"] = c.cnf.generic_term;
  j["cnf_mode"] = to_string(c.cnf.mode);
  j["pooling"] = pooling_name(c.pooling);
  j["fpr_limit"] = c.fpr_limit;
  j["num_thresholds"] = c.num_thresholds;
  j["raw_dump"] = c.raw_dump;
  j["workers"] = c.workers;
  j["train_root"] = c.train_root;
  j["test_root"] = c.test_root;
  j["output_dir"] = c.output_dir;
  return j;
}

}  // namespace

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = [] {
    const json defaults = as_json(RunConfig{});
    std::vector<std::string> k;
    for (const auto& [key, v] : defaults.items()) k.push_back(key);
    return k;
  }();
  return keys;
}

void RunConfig::validate() const {
  encoder.validate();
  scoring.validate();
  loss.validate();
  train.validate();
  cnf.validate();
  if (!(fpr_limit > 0.0 && fpr_limit <= 1.0)) throw ConfigError("fpr_limit must be in (0,1]");
  if (num_thresholds < 2) throw ConfigError("num_thresholds must be >= 2");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

std::string RunConfig::to_json() const { return as_json(*this).dump(2) + "\n"; }

EvalConfig RunConfig::eval_config() const {
  EvalConfig e;
  e.pooling = pooling;
  e.aupro.fpr_limit = fpr_limit;
  e.aupro.num_thresholds = num_thresholds;
  e.workers = workers;
  return e;
}

void RunConfig::merge_json(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(origin + ": config must be a JSON object");
  const auto& keys = run_config_keys();
  for (const auto& [key, v] : j.items())
    if (std::find(keys.begin(), keys.end(), key) == keys.end())
      throw ConfigError(origin + ": unknown config key '" + key + "'");

  auto get = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      dst = j.at(key).get<std::remove_reference_t<decltype(dst)>>();
    } catch (const json::exception& e) {
      throw ConfigError(origin + ": key '" + key + "': " + e.what());
    }
  };
  get("encoder", encoder_name);
  get("encoder_weights", encoder_weights);
  get("num_vision_layers", encoder.num_vision_layers);
  get("selected_layers", encoder.selected_layers);
  get("vision_dims", encoder.vision_dims);
  get("text_dim", encoder.text_dim);
  get("patch_size", encoder.patch_size);
  get("image_size", encoder.image_size);
  get("text_seq_len", encoder.text_seq_len);
  get("num_text_layers", encoder.num_text_layers);
  get("vocab_size", encoder.vocab_size);
  get("encoder_seed", encoder.seed);
  get("alpha", scoring.alpha);
  get("sigma", scoring.sigma);
  get("n1", scoring.n1);
  get("n2", scoring.n2);
  get("temperature", scoring.temperature);
  get("dice_epsilon", loss.dice_epsilon);
  get("focal_alpha", loss.focal_alpha);
  get("focal_gamma", loss.focal_gamma);
  get("learning_rate", train.learning_rate);
  get("epochs", train.epochs);
  get("batch_size", train.batch_size);
  get("beta1", train.beta1);
  get("beta2", train.beta2);
  get("adam_epsilon", train.adam_epsilon);
  get("seed", train.seed);
  get("cnf_enabled", cnf.enabled);
  get("generic_term", cnf.generic_term);
  std::string mode = to_string(cnf.mode);
  get("cnf_mode", mode);
  cnf.mode = cnf_mode_from_string(mode);
  std::string pool = pooling_name(pooling);
  get("pooling", pool);
  pooling = pooling_from(pool);
  get("fpr_limit", fpr_limit);
  get("num_thresholds", num_thresholds);
  get("raw_dump", raw_dump);
  get("workers", workers);
  get("train_root", train_root);
  get("test_root", test_root);
  get("output_dir", output_dir);
}

RunConfig load_run_config(const std::string& path) {
  RunConfig c;
  std::string p = path;
  if (p.empty())
    if (const char* env = std::getenv(kConfigEnv); env != nullptr && *env != '\0') p = env;
  if (!p.empty()) {
    if (!std::filesystem::exists(p)) throw IoError("config file not found: " + p);
    c.merge_json(read_file(p), p);
  }
  return c;
}

}  // namespace genclip::cli
