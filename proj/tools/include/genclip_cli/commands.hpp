// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "genclip/data.hpp"

namespace genclip::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

/// Parses argv (argv[0] is the program name) and runs one command.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// A dataset root (MVTec-style layout) or a manifest JSON file. Relative
/// manifest roots resolve against the manifest's directory.
DatasetManifest open_dataset(const std::string& path);

/// Test-split entries, or every entry when the dataset has no test split.
std::vector<ManifestEntry> inference_entries(const DatasetManifest& manifest);

}  // namespace genclip::cli
