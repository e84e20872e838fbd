#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "promptkit/data_engine.hpp"

namespace promptkit::cli {

inline constexpr const char* kSeedEnv = "PROMPTKIT_SEED";

struct CliConfig {
  std::string subcommand;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  std::vector<std::filesystem::path> paths;
  VerifyThresholds thresholds;
};

/// --seed if given, else PROMPTKIT_SEED, else fallback. Throws on an unparsable env value.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback = 0);

/// Reads numbers separated by commas and/or whitespace.
std::vector<double> read_scores(const std::filesystem::path& path);

/// Replaces every byte outside [A-Za-z0-9._-] with '_'.
std::string safe_file_stem(const std::string& image_id);

/// Exit codes: 0 success, 1 failed check or runtime error, 2 usage error.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace promptkit::cli
