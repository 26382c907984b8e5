// SPDX-License-Identifier: Apache-2.0
#include "genclip_cli/commands.hpp"

#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "genclip/cnf.hpp"
#include "genclip/error.hpp"
#include "genclip/export.hpp"
#include "genclip/metrics.hpp"
#include "genclip/parallel.hpp"
#include "genclip/scoring.hpp"
#include "genclip/train.hpp"
#include "genclip_cli/run_config.hpp"

namespace genclip::cli {

namespace fs = std::filesystem;

DatasetManifest open_dataset(const std::string& path) {
  if (path.empty()) throw ConfigError("no dataset path given");
  const fs::path p(path);
  if (!fs::exists(p)) throw IoError("dataset path does not exist: " + path);
  if (fs::is_directory(p)) return scan_dataset(p);
  DatasetManifest m = DatasetManifest::from_json(read_file(p));
  if (m.root.is_relative()) {
    const fs::path root = fs::absolute(p).parent_path() / m.root;
    m = DatasetManifest::from_json(read_file(p), root.lexically_normal());
  }
  return m;
}

std::vector<ManifestEntry> inference_entries(const DatasetManifest& manifest) {
  auto test = manifest.select(Split::test);
  return test.empty() ? manifest.entries : test;
}

namespace {

struct Overrides {
  std::string config;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
  // train
  std::optional<std::string> train_root;
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  std::optional<int> batch_size;
  // infer / cnf
  std::optional<double> alpha, sigma;
  std::optional<int> n1, n2;
  bool no_cnf = false;
  std::optional<std::string> generic_term;
  std::optional<std::string> cnf_mode;
  std::optional<bool> raw_dump;
  // shared paths
  std::optional<std::string> output_dir;
  std::optional<std::string> test_root;
  std::optional<std::string> pooling;
};

RunConfig resolve(const Overrides& o) {
  RunConfig c = load_run_config(o.config);
  if (o.workers) c.workers = *o.workers;
  if (o.seed) c.train.seed = *o.seed;
  if (o.train_root) c.train_root = *o.train_root;
  if (o.epochs) c.train.epochs = *o.epochs;
  if (o.learning_rate) c.train.learning_rate = *o.learning_rate;
  if (o.batch_size) c.train.batch_size = *o.batch_size;
  if (o.alpha) c.scoring.alpha = *o.alpha;
  if (o.sigma) c.scoring.sigma = *o.sigma;
  if (o.n1) c.scoring.n1 = *o.n1;
  if (o.n2) c.scoring.n2 = *o.n2;
  if (o.no_cnf) c.cnf.enabled = false;
  if (o.generic_term) c.cnf.generic_term = *o.generic_term;
  if (o.cnf_mode) c.cnf.mode = cnf_mode_from_string(*o.cnf_mode);
  if (o.raw_dump) c.raw_dump = *o.raw_dump;
  if (o.output_dir) c.output_dir = *o.output_dir;
  if (o.test_root) c.test_root = *o.test_root;
  if (o.pooling) {
    // Reuse the JSON path so the accepted spellings live in one place.
    c.merge_json(std::string("{\"pooling\":\"") + *o.pooling + "\"}", "--pooling");
  }
  c.train.workers = c.workers;
  c.validate();
  return c;
}

void write_snapshot(const RunConfig& c, const std::string& command) {
  write_file_atomic(fs::path(c.output_dir) / (command + "_config.json"), c.to_json());
}

std::shared_ptr<const FrozenEncoder> open_encoder(const RunConfig& c) {
  return std::shared_ptr<const FrozenEncoder>(make_encoder(c.encoder_name, c.encoder, c.encoder_weights));
}

std::string run_header(const std::string& command, const RunConfig& c) {
  std::ostringstream s;
  s << "genclip " << command << " encoder=" << c.encoder_name << " alpha=" << c.scoring.alpha
    << " sigma=" << c.scoring.sigma << " n1=" << c.scoring.n1 << " n2=" << c.scoring.n2
    << " temperature=" << c.scoring.temperature << " lr=" << c.train.learning_rate << " epochs=" << c.train.epochs
    << " batch_size=" << c.train.batch_size << " seed=" << c.train.seed << " cnf=" << (c.cnf.enabled ? "on" : "off")
    << " generic_term=" << c.cnf.generic_term << " workers=" << c.workers;
  return s.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

void cmd_train(const RunConfig& c, std::ostream& out) {
  if (c.train_root.empty()) throw ConfigError("train: no training dataset (set train_root or --train-root)");
  const DatasetManifest manifest = open_dataset(c.train_root);
  const auto encoder = open_encoder(c);
  fs::create_directories(c.output_dir);
  write_snapshot(c, "train");

  std::ofstream log(fs::path(c.output_dir) / "train.log", std::ios::trunc);
  if (!log) throw IoError("cannot write " + (fs::path(c.output_dir) / "train.log").string());
  const std::string header = run_header("train", c);
  out << header << "\n";
  log << header << "\n";

  TrainOptions opts;
  opts.train = c.train;
  opts.loss = c.loss;
  opts.scoring = c.scoring;
  opts.encoder_name = c.encoder_name;
  const TrainResult result = train(manifest, *encoder, opts, &log);
  const fs::path ck = fs::path(c.output_dir) / "checkpoint.bin";
  save_checkpoint(ck, result.checkpoint);
  out << "steps=" << result.checkpoint.header.steps << " final_loss=" << result.step_losses.back()
      << " checkpoint=" << ck.string() << "\n";
}

void check_compatible(const CheckpointHeader& h, const RunConfig& c, const std::string& path) {
  if (h.encoder_name != c.encoder_name)
    throw ConfigError("checkpoint " + path + " was trained with encoder '" + h.encoder_name + "', config uses '" +
                      c.encoder_name + "'");
  if (!(h.encoder == c.encoder))
    throw ConfigError("checkpoint " + path + " encoder spec differs from the config (checkpoint spec: " +
                      h.to_json().substr(0, 400) + ")");
}

void cmd_infer(const RunConfig& c, const std::string& checkpoint_path, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  check_compatible(ck.header, c, checkpoint_path);
  if (c.test_root.empty()) throw ConfigError("infer: no input (set test_root or --input)");
  const DatasetManifest manifest = open_dataset(c.test_root);
  const auto entries = inference_entries(manifest);
  if (entries.empty()) throw Error("infer: no images under " + c.test_root);
  const auto encoder = open_encoder(c);
  fs::create_directories(c.output_dir);
  write_snapshot(c, "infer");
  out << run_header("infer", c) << "\n";

  const InferenceSession session(encoder, ck.bank, c.scoring, c.cnf);
  const int size = c.encoder.image_size;

  std::vector<CnfDecision> decisions(entries.size());
  std::vector<std::string> words(entries.size());
  const bool majority = c.cnf.mode == CnfConfig::Mode::per_class_majority;
  if (majority) {
    parallel_for(entries.size(), c.workers, [&](std::size_t i) {
      const Image img = load_sample(entries[i], size).image;
      decisions[i] = decide_class_name(encoder->encode_image(img), entries[i].class_name, c.cnf, *encoder);
    });
    std::map<std::string, std::vector<CnfDecision>> by_class;
    for (std::size_t i = 0; i < entries.size(); ++i) by_class[entries[i].class_name].push_back(decisions[i]);
    std::map<std::string, std::string> chosen;
    for (const auto& [cls, ds] : by_class) chosen[cls] = majority_class_name(ds);
    for (std::size_t i = 0; i < entries.size(); ++i) words[i] = chosen.at(entries[i].class_name);
  }

  ExportOptions eo;
  eo.raw_dump = c.raw_dump;
  parallel_for(entries.size(), c.workers, [&](std::size_t i) {
    const ManifestEntry& e = entries[i];
    const Image img = load_sample(e, size).image;
    const PatchFeatureStack features = encoder->encode_image(img);
    if (!majority) {
      decisions[i] = decide_class_name(features, e.class_name, c.cnf, *encoder);
      words[i] = decisions[i].final_name;
    }
    const AnomalyResult r = session.infer_features(features, words[i], img.height, img.width);
    export_result(c.output_dir, e.key(), e.class_name, r, eo);
  });

  std::string csv = "image,original,stripped,final,used\n";
  for (std::size_t i = 0; i < entries.size(); ++i)
    csv += csv_field(entries[i].key()) + "," + csv_field(decisions[i].original) + "," +
           csv_field(decisions[i].stripped) + "," + csv_field(decisions[i].final_name) + "," + csv_field(words[i]) +
           "\n";
  write_file_atomic(fs::path(c.output_dir) / "cnf_decisions.csv", csv);
  out << "images=" << entries.size() << " out=" << c.output_dir << "\n";
}

void cmd_eval(const RunConfig& c, const std::string& pred_dir, const std::string& csv_path, std::ostream& out) {
  if (c.test_root.empty()) throw ConfigError("eval: no dataset root (set test_root or --dataset-root)");
  const DatasetManifest manifest = open_dataset(c.test_root);
  const auto entries = manifest.select(Split::test);
  if (entries.empty()) throw Error("eval: dataset " + c.test_root + " has no test images");

  std::vector<std::string> missing;
  for (const auto& e : entries)
    if (!fs::exists(sidecar_path(pred_dir, e.key()))) missing.push_back(e.key());
  if (!missing.empty()) {
    std::string msg = "eval: " + std::to_string(missing.size()) + " test image(s) have no prediction in " + pred_dir + ":";
    for (const auto& k : missing) msg += "\n  " + k;
    throw Error(msg);
  }
  std::map<std::string, Prediction> preds;
  for (const auto& e : entries) {
    ExportedMap m = read_exported(pred_dir, e.key());
    preds[e.key()] = Prediction{std::move(m.s_seg), m.s_det};
  }
  const MetricReport report = evaluate(entries, preds, c.eval_config());
  const std::string csv = report.to_csv();
  const fs::path target = csv_path.empty() ? fs::path(c.output_dir) / "metrics.csv" : fs::path(csv_path);
  write_file_atomic(target, csv);
  RunConfig snap = c;
  snap.output_dir = target.has_parent_path() ? target.parent_path().string() : ".";
  write_snapshot(snap, "eval");
  out << csv;
}

void cmd_cnf(const RunConfig& c, const std::string& csv_path, std::ostream& out) {
  if (c.test_root.empty()) throw ConfigError("cnf: no dataset root (set test_root or --dataset-root)");
  const DatasetManifest manifest = open_dataset(c.test_root);
  const auto entries = inference_entries(manifest);
  const auto encoder = open_encoder(c);
  std::vector<CnfDecision> decisions(entries.size());
  parallel_for(entries.size(), c.workers, [&](std::size_t i) {
    const Image img = load_sample(entries[i], c.encoder.image_size).image;
    decisions[i] = decide_class_name(encoder->encode_image(img), entries[i].class_name, c.cnf, *encoder);
  });
  std::string csv = "image,original,stripped,final\n";
  for (std::size_t i = 0; i < entries.size(); ++i)
    csv += csv_field(entries[i].key()) + "," + csv_field(decisions[i].original) + "," +
           csv_field(decisions[i].stripped) + "," + csv_field(decisions[i].final_name) + "\n";
  const fs::path target = csv_path.empty() ? fs::path(c.output_dir) / "cnf.csv" : fs::path(csv_path);
  write_file_atomic(target, csv);
  RunConfig snap = c;
  snap.output_dir = target.has_parent_path() ? target.parent_path().string() : ".";
  write_snapshot(snap, "cnf");
  out << csv;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"genclip: prompt-learning zero-shot anomaly detection"};
  app.require_subcommand(1);
  Overrides o;
  std::string checkpoint, pred_dir, csv_out;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, std::string("JSON config (default: $") + kConfigEnv + ")");
    sub->add_option("--workers", o.workers, "Parallel workers");
    sub->add_option("--output-dir", o.output_dir, "Output directory");
  };

  CLI::App* train = app.add_subcommand("train", "Train prompt parameters on an auxiliary dataset");
  common(train);
  train->add_option("--train-root", o.train_root, "Dataset root or manifest JSON");
  train->add_option("--epochs", o.epochs);
  train->add_option("--lr", o.learning_rate);
  train->add_option("--batch-size", o.batch_size);
  train->add_option("--seed", o.seed);

  CLI::App* infer = app.add_subcommand("infer", "Write score maps and sidecars for every test image");
  common(infer);
  infer->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  infer->add_option("--input", o.test_root, "Dataset root or manifest JSON");
  infer->add_option("--out", o.output_dir, "Output directory");
  infer->add_option("--alpha", o.alpha);
  infer->add_option("--sigma", o.sigma);
  infer->add_option("--n1", o.n1);
  infer->add_option("--n2", o.n2);
  infer->add_flag("--no-cnf", o.no_cnf, "Disable class-name filtering");
  infer->add_option("--generic-term", o.generic_term);
  infer->add_option("--cnf-mode", o.cnf_mode, "per_image or per_class_majority");
  infer->add_option("--raw-dump", o.raw_dump, "Also write <key>.f32 (true/false)");

  CLI::App* eval = app.add_subcommand("eval", "Compute the metric report from exported predictions");
  common(eval);
  eval->add_option("--pred-dir", pred_dir, "Directory written by infer")->required();
  eval->add_option("--dataset-root", o.test_root, "Dataset root or manifest JSON");
  eval->add_option("--out", csv_out, "CSV path (default <output_dir>/metrics.csv)");
  eval->add_option("--pooling", o.pooling, "per_class or global");

  CLI::App* cnf = app.add_subcommand("cnf", "Report class-name filtering decisions");
  common(cnf);
  cnf->add_option("--dataset-root", o.test_root, "Dataset root or manifest JSON");
  cnf->add_option("--out", csv_out, "CSV path (default <output_dir>/cnf.csv)");
  cnf->add_flag("--no-cnf", o.no_cnf);
  cnf->add_option("--generic-term", o.generic_term);

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    const RunConfig c = resolve(o);
    if (train->parsed()) cmd_train(c, out);
    if (infer->parsed()) cmd_infer(c, checkpoint, out);
    if (eval->parsed()) cmd_eval(c, pred_dir, csv_out, out);
    if (cnf->parsed()) cmd_cnf(c, csv_out, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}

}  // namespace genclip::cli
