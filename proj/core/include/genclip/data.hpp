// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "genclip/image.hpp"

namespace genclip {

enum class Split { train, test };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

struct ManifestEntry {
  std::string class_name;
  Split split = Split::test;
  std::string defect_type;
  std::filesystem::path image_path;                // absolute
  std::optional<std::filesystem::path> mask_path;  // absolute when present

  bool is_good() const { return defect_type == "good"; }
  /// "<class>/<split>/<defect>/<stem>", unique within a manifest.
  std::string key() const;
};

/// Immutable once built. Entries are sorted by (class, split, defect, filename).
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> classes;
  std::vector<ManifestEntry> entries;

  std::vector<ManifestEntry> select(Split split) const;
  /// JSON export with stable key order; paths are stored relative to root.
  std::string to_json() const;
  static DatasetManifest from_json(const std::string& text, const std::filesystem::path& root_override = {});
  /// Content digest over the root-relative JSON, independent of where root lives.
  std::uint64_t digest() const;
};

enum class Layout { mvtec };

/// Expects `<class>/train/good`, `<class>/test/<defect>` and
/// `<class>/ground_truth/<defect>` below root.
DatasetManifest scan_dataset(const std::filesystem::path& root, Layout layout = Layout::mvtec);

struct Sample {
  Image image;   // image_size x image_size x 3, values in [0,1]
  Grid gt_map;   // image_size x image_size, values in {0,1}
  int image_label = 0;
  std::string class_name;
  std::string defect_type;
  Split split = Split::test;
};

Sample load_sample(const ManifestEntry& entry, int image_size);

/// RGB image scaled to [0,1].
Image read_image(const std::filesystem::path& path);
/// Grayscale image scaled to [0,1].
Grid read_gray(const std::filesystem::path& path);
void write_png_rgb8(const std::filesystem::path& path, const Image& image);
void write_png_gray8(const std::filesystem::path& path, const Grid& grid);
/// Writes values already in [0,65535] as a 16-bit grayscale PNG.
void write_png_gray16(const std::filesystem::path& path, const std::vector<std::uint16_t>& pixels, int height, int width);
std::vector<std::uint16_t> read_png_gray16(const std::filesystem::path& path, int& height, int& width);

}  // namespace genclip
