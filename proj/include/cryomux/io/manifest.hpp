#pragma once

// Run manifests and atomic file output.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cryomux::io {

/// Writes to a sibling temporary file and renames it over `path`.
void write_atomic(const std::filesystem::path& path, const std::string& content);

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(const std::string& data);

struct RunManifest {
  std::string command;
  std::string config_sha256;
  std::string program;  ///< preset name or program file
  std::uint64_t seed = 0;
  std::string version;
  std::vector<std::string> outputs;  ///< paths relative to the output directory
  double wall_seconds = 0.0;
};

std::string to_json(const RunManifest& manifest);

}  // namespace cryomux::io
