// SPDX-License-Identifier: Apache-2.0
#include "genclip/data.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <tuple>

#include "json.hpp"
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "genclip/error.hpp"
#include "genclip/rng.hpp"

namespace fs = std::filesystem;

namespace genclip {

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp" || ext == ".tif" || ext == ".tiff";
}

std::vector<fs::path> sorted_children(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : (e.is_regular_file() && is_image_file(e.path()))) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  return out;
}

std::optional<fs::path> find_mask(const fs::path& gt_dir, const fs::path& image) {
  const std::string stem = image.stem().string();
  for (const std::string& candidate : {stem + "_mask", stem}) {
    for (const char* ext : {".png", ".PNG", ".bmp", ".jpg", ".tif", ".tiff"}) {
      fs::path p = gt_dir / (candidate + ext);
      if (fs::is_regular_file(p)) return p;
    }
  }
  return std::nullopt;
}

void scan_split(const fs::path& class_dir, const std::string& class_name, Split split,
                std::vector<ManifestEntry>& entries, std::vector<std::string>& missing) {
  const fs::path split_dir = class_dir / to_string(split);
  for (const auto& defect_dir : sorted_children(split_dir, true)) {
    const std::string defect = defect_dir.filename().string();
    const fs::path gt_dir = class_dir / "ground_truth" / defect;
    for (const auto& img : sorted_children(defect_dir, false)) {
      ManifestEntry e;
      e.class_name = class_name;
      e.split = split;
      e.defect_type = defect;
      e.image_path = img;
      if (defect != "good") {
        e.mask_path = find_mask(gt_dir, img);
        if (!e.mask_path && split == Split::test) missing.push_back(img.string());
      }
      entries.push_back(std::move(e));
    }
  }
}

}  // namespace

const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw Error("unknown split '" + s + "'");
}

std::string ManifestEntry::key() const {
  return class_name + "/" + to_string(split) + "/" + defect_type + "/" + image_path.stem().string();
}

std::vector<ManifestEntry> DatasetManifest::select(Split split) const {
  std::vector<ManifestEntry> out;
  std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
               [split](const ManifestEntry& e) { return e.split == split; });
  return out;
}

std::string DatasetManifest::to_json() const {
  nlohmann::ordered_json j;
  j["root"] = root.generic_string();
  j["classes"] = classes;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    nlohmann::ordered_json row;
    row["class_name"] = e.class_name;
    row["split"] = to_string(e.split);
    row["defect_type"] = e.defect_type;
    row["image_path"] = e.image_path.lexically_relative(root).generic_string();
    row["mask_path"] = e.mask_path ? nlohmann::ordered_json(e.mask_path->lexically_relative(root).generic_string())
                                   : nlohmann::ordered_json(nullptr);
    arr.push_back(std::move(row));
  }
  j["entries"] = std::move(arr);
  return j.dump(2) + "\n";
}

DatasetManifest DatasetManifest::from_json(const std::string& text, const fs::path& root_override) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("manifest: invalid JSON: ") + ex.what());
  }
  DatasetManifest m;
  try {
    m.root = root_override.empty() ? fs::path(j.at("root").get<std::string>()) : root_override;
    m.classes = j.at("classes").get<std::vector<std::string>>();
    for (const auto& row : j.at("entries")) {
      ManifestEntry e;
      e.class_name = row.at("class_name").get<std::string>();
      e.split = split_from_string(row.at("split").get<std::string>());
      e.defect_type = row.at("defect_type").get<std::string>();
      e.image_path = m.root / row.at("image_path").get<std::string>();
      if (!row.at("mask_path").is_null()) e.mask_path = m.root / row.at("mask_path").get<std::string>();
      m.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(std::string("manifest: missing or malformed field: ") + ex.what());
  }
  return m;
}

std::uint64_t DatasetManifest::digest() const {
  DatasetManifest relative = *this;
  relative.root = ".";
  for (auto& e : relative.entries) {
    e.image_path = fs::path(".") / e.image_path.lexically_relative(root);
    if (e.mask_path) e.mask_path = fs::path(".") / e.mask_path->lexically_relative(root);
  }
  const std::string text = relative.to_json();
  return fnv1a64(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

DatasetManifest scan_dataset(const fs::path& root_in, Layout layout) {
  if (layout != Layout::mvtec) throw Error("scan_dataset: unsupported layout");
  if (!fs::is_directory(root_in)) throw IoError("dataset root does not exist: " + root_in.string());
  DatasetManifest m;
  m.root = fs::absolute(root_in).lexically_normal();
  if (!m.root.has_filename()) m.root = m.root.parent_path();

  std::vector<std::string> missing;
  for (const auto& class_dir : sorted_children(m.root, true)) {
    if (!fs::is_directory(class_dir / "train") && !fs::is_directory(class_dir / "test")) continue;
    const std::string name = class_dir.filename().string();
    m.classes.push_back(name);
    scan_split(class_dir, name, Split::train, m.entries, missing);
    scan_split(class_dir, name, Split::test, m.entries, missing);
  }
  if (m.classes.empty()) throw IoError("dataset root contains no class directories: " + m.root.string());
  if (m.entries.empty()) throw IoError("dataset root contains no images: " + m.root.string());
  if (!missing.empty()) {
    std::string msg = "missing ground-truth mask for " + std::to_string(missing.size()) + " defect image(s):";
    for (const auto& p : missing) msg += "\n  " + p;
    throw IoError(msg);
  }
  std::stable_sort(m.entries.begin(), m.entries.end(), [](const ManifestEntry& a, const ManifestEntry& b) {
    return std::tuple(a.class_name, static_cast<int>(a.split), a.defect_type, a.image_path.filename().string()) <
           std::tuple(b.class_name, static_cast<int>(b.split), b.defect_type, b.image_path.filename().string());
  });
  return m;
}

Image read_image(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot read image: " + path.string());
  Image img(bgr.rows, bgr.cols, 3);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      img.at(y, x, 0) = row[x][2] / 255.0;
      img.at(y, x, 1) = row[x][1] / 255.0;
      img.at(y, x, 2) = row[x][0] / 255.0;
    }
  }
  return img;
}

Grid read_gray(const fs::path& path) {
  cv::Mat g = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (g.empty()) throw IoError("cannot read image: " + path.string());
  Grid out(g.rows, g.cols);
  for (int y = 0; y < g.rows; ++y) {
    const auto* row = g.ptr<unsigned char>(y);
    for (int x = 0; x < g.cols; ++x) out.at(y, x) = row[x] / 255.0;
  }
  return out;
}

namespace {

unsigned char to_u8(double v) { return static_cast<unsigned char>(std::clamp(std::lround(v * 255.0), 0L, 255L)); }

void write_or_throw(const fs::path& path, const cv::Mat& m) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw IoError("cannot write image: " + path.string());
}

}  // namespace

void write_png_rgb8(const fs::path& path, const Image& image) {
  if (image.channels != 3) throw ShapeError("write_png_rgb8: expected 3 channels");
  cv::Mat m(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      m.at<cv::Vec3b>(y, x) = cv::Vec3b(to_u8(image.at(y, x, 2)), to_u8(image.at(y, x, 1)), to_u8(image.at(y, x, 0)));
  write_or_throw(path, m);
}

void write_png_gray8(const fs::path& path, const Grid& grid) {
  cv::Mat m(grid.height, grid.width, CV_8UC1);
  for (int y = 0; y < grid.height; ++y)
    for (int x = 0; x < grid.width; ++x) m.at<unsigned char>(y, x) = to_u8(grid.at(y, x));
  write_or_throw(path, m);
}

void write_png_gray16(const fs::path& path, const std::vector<std::uint16_t>& pixels, int height, int width) {
  if (pixels.size() != static_cast<std::size_t>(height) * width) throw ShapeError("write_png_gray16: size mismatch");
  cv::Mat m(height, width, CV_16UC1);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) m.at<std::uint16_t>(y, x) = pixels[static_cast<std::size_t>(y) * width + x];
  write_or_throw(path, m);
}

std::vector<std::uint16_t> read_png_gray16(const fs::path& path, int& height, int& width) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot read image: " + path.string());
  if (m.type() != CV_16UC1) throw IoError("expected 16-bit grayscale PNG: " + path.string());
  height = m.rows;
  width = m.cols;
  std::vector<std::uint16_t> out(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out[static_cast<std::size_t>(y) * width + x] = m.at<std::uint16_t>(y, x);
  return out;
}

Sample load_sample(const ManifestEntry& entry, int image_size) {
  if (image_size <= 0) throw ConfigError("load_sample: image_size must be positive");
  Sample s;
  s.class_name = entry.class_name;
  s.defect_type = entry.defect_type;
  s.split = entry.split;
  s.image = resize_bilinear(read_image(entry.image_path), image_size, image_size);
  s.gt_map = Grid(image_size, image_size, 0.0);
  if (!entry.is_good() && entry.mask_path) {
    Grid mask = resize_nearest(read_gray(*entry.mask_path), image_size, image_size);
    for (std::size_t i = 0; i < mask.size(); ++i) s.gt_map.values[i] = mask.values[i] >= 0.5 ? 1.0 : 0.0;
  }
  s.image_label = std::any_of(s.gt_map.values.begin(), s.gt_map.values.end(), [](double v) { return v > 0.0; }) ? 1 : 0;
  return s;
}

}  // namespace genclip
