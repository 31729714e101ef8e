#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace bowsim::cli {

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_text(const std::string& text);

struct ManifestEntry {
  std::string path;  ///< relative to the output directory
  std::uintmax_t bytes = 0;
  std::string sha256;
};

/// Files produced by one run. Entries are sorted by path when written.
class Manifest {
 public:
  explicit Manifest(std::filesystem::path dir) : dir_(std::move(dir)) {}

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path path(const std::string& name) const { return dir_ / name; }

  /// Hashes a file that was written into the output directory.
  void add(const std::string& name);
  const std::vector<ManifestEntry>& entries() const { return entries_; }

  /// Writes manifest.json: command, seed, config hash and the file list. No timestamps.
  void write(const std::string& command, std::uint64_t seed, const std::string& resolved_config) const;

 private:
  std::filesystem::path dir_;
  std::vector<ManifestEntry> entries_;
};

}  // namespace bowsim::cli
