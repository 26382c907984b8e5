// SPDX-License-Identifier: Apache-2.0
#include "genclip/export.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "genclip/data.hpp"
#include "genclip/error.hpp"
#include "json.hpp"

namespace genclip {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

void write_file_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_f32(const fs::path& path, const Grid& grid) {
  std::string bytes(grid.size() * 4, '\0');
  for (std::size_t i = 0; i < grid.size(); ++i) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(static_cast<float>(grid.values[i]));
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<char>((u >> (8 * b)) & 0xffu);
  }
  write_file_atomic(path, bytes);
}

Grid read_f32(const fs::path& path, int height, int width) {
  const std::string bytes = read_file(path);
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (bytes.size() != n * 4)
    throw IoError(path.string() + ": expected " + std::to_string(n * 4) + " bytes for " + std::to_string(height) +
                  "x" + std::to_string(width) + ", found " + std::to_string(bytes.size()));
  Grid g(height, width);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    g.values[i] = std::bit_cast<float>(u);
  }
  return g;
}

fs::path sidecar_path(const fs::path& dir, const std::string& key) { return dir / (key + ".json"); }

void export_result(const fs::path& dir, const std::string& key, const std::string& class_name,
                   const AnomalyResult& result, const ExportOptions& options) {
  const Grid& m = result.s_seg;
  if (m.size() == 0) throw ShapeError("export_result: empty map for " + key);
  const auto [lo_it, hi_it] = std::minmax_element(m.values.begin(), m.values.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<std::uint16_t> px(m.size(), 0);
  if (hi > lo)
    for (std::size_t i = 0; i < m.size(); ++i)
      px[i] = static_cast<std::uint16_t>(std::lround((m.values[i] - lo) / (hi - lo) * 65535.0));

  const fs::path base = dir / key;
  fs::create_directories(base.parent_path());
  fs::path png = base;
  png += ".png";
  write_png_gray16(png, px, m.height, m.width);

  json j;
  j["key"] = key;
  j["class"] = class_name;
  j["class_word"] = result.class_word;
  j["height"] = m.height;
  j["width"] = m.width;
  j["s_det"] = result.s_det;
  j["w"] = result.w;
  j["raw_min"] = lo;
  j["raw_max"] = hi;
  j["raw"] = options.raw_dump;
  if (options.raw_dump) {
    fs::path raw = base;
    raw += ".f32";
    write_f32(raw, m);
  }
  write_file_atomic(sidecar_path(dir, key), j.dump(2) + "\n");
}

ExportedMap read_exported(const fs::path& dir, const std::string& key) {
  const fs::path side = sidecar_path(dir, key);
  json j;
  try {
    j = json::parse(read_file(side));
  } catch (const json::exception& e) {
    throw IoError(side.string() + ": " + e.what());
  }
  ExportedMap out;
  try {
    out.key = j.at("key").get<std::string>();
    out.class_name = j.at("class").get<std::string>();
    out.class_word = j.value("class_word", std::string());
    out.s_det = j.at("s_det").get<double>();
    out.w = j.at("w").get<double>();
    out.raw_min = j.at("raw_min").get<double>();
    out.raw_max = j.at("raw_max").get<double>();
    const int h = j.at("height").get<int>();
    const int w = j.at("width").get<int>();
    fs::path base = dir / key;
    fs::path raw = base;
    raw += ".f32";
    if (j.value("raw", false) && fs::exists(raw)) {
      out.s_seg = read_f32(raw, h, w);
    } else {
      fs::path png = base;
      png += ".png";
      int ph = 0, pw = 0;
      const auto px = read_png_gray16(png, ph, pw);
      if (ph != h || pw != w)
        throw IoError(png.string() + ": size " + std::to_string(ph) + "x" + std::to_string(pw) +
                      " differs from sidecar " + std::to_string(h) + "x" + std::to_string(w));
      out.s_seg = Grid(h, w);
      for (std::size_t i = 0; i < px.size(); ++i)
        out.s_seg.values[i] = out.raw_min + (out.raw_max - out.raw_min) * (px[i] / 65535.0);
    }
  } catch (const json::exception& e) {
    throw IoError(side.string() + ": " + e.what());
  }
  return out;
}

}  // namespace genclip
