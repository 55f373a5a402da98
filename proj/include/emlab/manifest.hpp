#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace emlab {

inline constexpr const char* kToolVersion = "0.1.0";

/// Lowercase hex SHA-256 of a file's bytes. Throws FormatError if the file
/// cannot be read.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_bytes(std::string_view bytes);

/// Record of one invocation: what ran, with which parameters,
/// on which inputs, producing which outputs.
struct RunManifest {
  std::string subcommand;
  std::string parameters_json = "{}";  // full parameter set as a JSON object
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path -> sha256
  std::string tool_version = kToolVersion;
  double wall_time_s = 0.0;
  std::string status = "ok";
  std::optional<std::string> failed_stage;
  std::optional<std::string> error;

  void add_input(const std::filesystem::path& p);
  void add_output(const std::filesystem::path& p);
  /// Adds every regular file below `dir` except `skip`, keyed relative to dir.
  void add_outputs_below(const std::filesystem::path& dir, const std::filesystem::path& skip = {});

  std::string to_json() const;
  void write(const std::filesystem::path& path) const;
};

RunManifest read_manifest(const std::filesystem::path& path);

}  // namespace emlab
