// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cmath>
#include <cstring>

#include "genclip/error.hpp"
#include "genclip/export.hpp"
#include "genclip/rng.hpp"
#include "genclip/train.hpp"
#include "json.hpp"

namespace genclip {

namespace {

using json = nlohmann::ordered_json;
constexpr char kMagic[8] = {'G', 'E', 'N', 'C', 'L', 'I', 'P', 'K'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

std::uint64_t checksum(const std::string& bytes, std::size_t n) {
  return fnv1a64(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(bytes.data()), n));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string origin) : b_(bytes), origin_(std::move(origin)) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw IoError("corrupt checkpoint " + origin_ + " at byte offset " + std::to_string(pos_) + ": " + what);
  }
  void need(std::size_t n, const char* what) const {
    if (b_.size() - pos_ < n)
      fail(std::string("truncated while reading ") + what + " (need " + std::to_string(n) + " bytes, " +
           std::to_string(b_.size() - pos_) + " left)");
  }
  std::uint64_t uint(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  std::size_t left() const { return b_.size() - pos_; }

 private:
  const std::string& b_;
  std::string origin_;
  std::size_t pos_ = 0;
};

json spec_json(const EncoderSpec& s) {
  json j;
  j["num_vision_layers"] = s.num_vision_layers;
  j["selected_layers"] = s.selected_layers;
  j["vision_dims"] = s.vision_dims;
  j["text_dim"] = s.text_dim;
  j["patch_size"] = s.patch_size;
  j["image_size"] = s.image_size;
  j["text_seq_len"] = s.text_seq_len;
  j["num_text_layers"] = s.num_text_layers;
  j["vocab_size"] = s.vocab_size;
  j["seed"] = s.seed;
  return j;
}

EncoderSpec spec_from(const json& j) {
  EncoderSpec s;
  s.num_vision_layers = j.at("num_vision_layers").get<int>();
  s.selected_layers = j.at("selected_layers").get<std::vector<int>>();
  s.vision_dims = j.at("vision_dims").get<std::vector<int>>();
  s.text_dim = j.at("text_dim").get<int>();
  s.patch_size = j.at("patch_size").get<int>();
  s.image_size = j.at("image_size").get<int>();
  s.text_seq_len = j.at("text_seq_len").get<int>();
  s.num_text_layers = j.at("num_text_layers").get<int>();
  s.vocab_size = j.at("vocab_size").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

}  // namespace

std::string CheckpointHeader::to_json() const {
  json j;
  j["format_version"] = format_version;
  j["encoder_name"] = encoder_name;
  j["encoder"] = spec_json(encoder);
  j["scoring"] = {{"alpha", scoring.alpha},
                  {"sigma", scoring.sigma},
                  {"n1", scoring.n1},
                  {"n2", scoring.n2},
                  {"temperature", scoring.temperature}};
  j["loss"] = {{"dice_epsilon", loss.dice_epsilon},
               {"focal_alpha", loss.focal_alpha},
               {"focal_gamma", loss.focal_gamma}};
  j["train"] = {{"learning_rate", train.learning_rate},
                {"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"seed", train.seed},
                {"beta1", train.beta1},
                {"beta2", train.beta2},
                {"adam_epsilon", train.adam_epsilon}};
  j["dataset_id"] = dataset_id;
  j["steps"] = steps;
  j["notes"] = notes;
  return j.dump();
}

CheckpointHeader CheckpointHeader::from_json(const std::string& text) {
  const json j = json::parse(text);
  CheckpointHeader h;
  h.format_version = j.at("format_version").get<std::uint32_t>();
  h.encoder_name = j.at("encoder_name").get<std::string>();
  h.encoder = spec_from(j.at("encoder"));
  const auto& s = j.at("scoring");
  h.scoring.alpha = s.at("alpha").get<double>();
  h.scoring.sigma = s.at("sigma").get<double>();
  h.scoring.n1 = s.at("n1").get<int>();
  h.scoring.n2 = s.at("n2").get<int>();
  h.scoring.temperature = s.at("temperature").get<double>();
  const auto& l = j.at("loss");
  h.loss.dice_epsilon = l.at("dice_epsilon").get<double>();
  h.loss.focal_alpha = l.at("focal_alpha").get<double>();
  h.loss.focal_gamma = l.at("focal_gamma").get<double>();
  const auto& t = j.at("train");
  h.train.learning_rate = t.at("learning_rate").get<double>();
  h.train.epochs = t.at("epochs").get<int>();
  h.train.batch_size = t.at("batch_size").get<int>();
  h.train.seed = t.at("seed").get<std::uint64_t>();
  h.train.beta1 = t.at("beta1").get<double>();
  h.train.beta2 = t.at("beta2").get<double>();
  h.train.adam_epsilon = t.at("adam_epsilon").get<double>();
  h.dataset_id = j.at("dataset_id").get<std::string>();
  h.steps = j.at("steps").get<std::int64_t>();
  h.notes = j.value("notes", std::string());
  return h;
}

std::string serialize_checkpoint(const Checkpoint& checkpoint) {
  checkpoint.bank.validate(checkpoint.header.encoder);
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, checkpoint.header.format_version);
  const std::string header = checkpoint.header.to_json();
  put_u64(out, header.size());
  out += header;
  const auto params = checkpoint.bank.parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, m] : params) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(m->rows()));
    put_u32(out, static_cast<std::uint32_t>(m->cols()));
    // Row-major so the on-disk order does not depend on Eigen's storage.
    for (Eigen::Index r = 0; r < m->rows(); ++r)
      for (Eigen::Index c = 0; c < m->cols(); ++c) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>((*m)(r, c))));
  }
  put_u64(out, checksum(out, out.size()));
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader rd(bytes, origin);
  if (rd.bytes(sizeof kMagic, "magic") != std::string(kMagic, sizeof kMagic)) {
    throw IoError("corrupt checkpoint " + origin + " at byte offset 0: bad magic, not a genclip checkpoint");
  }
  const auto version = static_cast<std::uint32_t>(rd.uint(4, "format version"));
  if (version != kCheckpointVersion)
    throw IoError("checkpoint " + origin + " has format version " + std::to_string(version) + ", expected " +
                  std::to_string(kCheckpointVersion));
  const std::uint64_t header_len = rd.uint(8, "header length");
  if (header_len > rd.left()) rd.fail("header length " + std::to_string(header_len) + " exceeds file size");
  const std::size_t header_at = rd.pos();
  Checkpoint ck;
  try {
    ck.header = CheckpointHeader::from_json(rd.bytes(static_cast<std::size_t>(header_len), "header"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint " + origin + " at byte offset " + std::to_string(header_at) +
                  ": header JSON: " + e.what());
  }
  if (ck.header.format_version != version) rd.fail("header version disagrees with file version");

  // Shapes come from the spec; every tensor must be present exactly once.
  ck.bank = PromptBank::zeros_like(PromptBank::initialize(ck.header.encoder, 0));
  auto slots = ck.bank.parameters();
  const auto count = static_cast<std::uint32_t>(rd.uint(4, "tensor count"));
  if (count != slots.size())
    rd.fail("tensor count " + std::to_string(count) + ", spec implies " + std::to_string(slots.size()));
  std::vector<bool> seen(slots.size(), false);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = static_cast<std::uint32_t>(rd.uint(4, "tensor name length"));
    if (name_len > 256) rd.fail("implausible tensor name length " + std::to_string(name_len));
    const std::string name = rd.bytes(name_len, "tensor name");
    std::size_t idx = slots.size();
    for (std::size_t s = 0; s < slots.size(); ++s)
      if (slots[s].first == name) idx = s;
    if (idx == slots.size()) rd.fail("unknown tensor '" + name + "'");
    if (seen[idx]) rd.fail("duplicate tensor '" + name + "'");
    seen[idx] = true;
    Mat& m = *slots[idx].second;
    const auto rows = rd.uint(4, "tensor rows");
    const auto cols = rd.uint(4, "tensor cols");
    if (rows != static_cast<std::uint64_t>(m.rows()) || cols != static_cast<std::uint64_t>(m.cols()))
      rd.fail("tensor '" + name + "' is " + std::to_string(rows) + "x" + std::to_string(cols) + ", expected " +
              std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        m(r, c) = std::bit_cast<float>(static_cast<std::uint32_t>(rd.uint(4, "tensor data")));
  }
  const std::size_t body = rd.pos();
  const std::uint64_t stored = rd.uint(8, "checksum");
  if (rd.left() != 0) rd.fail(std::to_string(rd.left()) + " trailing bytes after checksum");
  if (stored != checksum(bytes, body))
    throw IoError("corrupt checkpoint " + origin + " at byte offset " + std::to_string(body) + ": checksum mismatch");
  try {
    ck.bank.validate(ck.header.encoder);
  } catch (const Error& e) {
    throw IoError("checkpoint " + origin + ": " + e.what());
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file_atomic(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path), path.string()); }

}  // namespace genclip
