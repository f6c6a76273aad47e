#pragma once

// manifest.json for command outputs: what ran, on which inputs, with which
// settings, and hashes of everything read and written.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gustwall {

struct Manifest {
  std::string subcommand;
  std::string config_hash;
  std::string calib_hash;
  std::uint64_t seed = 0;
  std::string started_utc;
  std::string finished_utc;  // filled in at write time when empty
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;  // relative to the output directory
  std::string extra_json = "{}";
};

// Entry {"path", "fnv1a64"} for a file; hash is empty if it cannot be read.
std::string file_hash(const std::filesystem::path& path);

// Writes <dir>/manifest.json atomically.
void write_manifest(const std::filesystem::path& dir, const Manifest& manifest);

}  // namespace gustwall
