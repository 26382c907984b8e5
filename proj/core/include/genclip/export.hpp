// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "genclip/image.hpp"
#include "genclip/scoring.hpp"

namespace genclip {

/// A score map as stored on disk under `<dir>/<key>.{png,json,f32}`.
struct ExportedMap {
  std::string key;
  std::string class_name;
  std::string class_word;
  Grid s_seg;
  double s_det = 0.0;
  double w = 1.0;
  double raw_min = 0.0;
  double raw_max = 0.0;
};

struct ExportOptions {
  bool raw_dump = true;  // also write <key>.f32 (little-endian float32, row-major)
};

/// 16-bit PNG min-max normalized over [raw_min, raw_max] (a constant map
/// stores zeros), plus a sidecar JSON with s_det, w and the range.
void export_result(const std::filesystem::path& dir, const std::string& key, const std::string& class_name,
                   const AnomalyResult& result, const ExportOptions& options = {});

/// Sidecar path for a key.
std::filesystem::path sidecar_path(const std::filesystem::path& dir, const std::string& key);

/// Reads the map back. Uses the raw dump when present, otherwise the PNG
/// rescaled to the recorded range.
ExportedMap read_exported(const std::filesystem::path& dir, const std::string& key);

void write_f32(const std::filesystem::path& path, const Grid& grid);
Grid read_f32(const std::filesystem::path& path, int height, int width);

/// Writes `bytes` to a temporary sibling, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace genclip
