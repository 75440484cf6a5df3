#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lesiongen/io/config.hpp"

namespace lesiongen {

/// Record of one CLI stage. Text form:
///
///   LESIONGEN-MANIFEST 1
///   command = <subcommand>
///   argv = <arguments joined by spaces>
///   seed = <master seed>
///   stream.<name> = <derived seed>
///   input.<name> = <hash>
///   config.<key> = <value>        full resolved config; usable as --config
///   output.<relative path> = <hash>
///   warning = <text>              zero or more
///   wall_clock_seconds = <float>  timing lines; the only ones that differ
///   finished_at = <unix seconds>  between reruns
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  std::map<std::string, std::uint64_t> streams;
  std::map<std::string, std::string> inputs;
  Config config;
  std::map<std::string, std::string> outputs;
  std::vector<std::string> warnings;
  double wall_clock_seconds = 0.0;
  std::int64_t finished_at = 0;

  std::string to_text(bool with_timing = true) const;
  /// Hashes every listed output file under `out_dir`, then writes
  /// out_dir/manifest.txt via a temporary file and rename.
  void finalize(const std::filesystem::path& out_dir);
};

/// FNV-1a of a file's bytes, as 16 hex digits.
std::string file_hash(const std::filesystem::path& path);

/// Manifest text without the timing lines.
std::string manifest_without_timing(const std::filesystem::path& path);

}  // namespace lesiongen
