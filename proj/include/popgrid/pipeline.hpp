#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace popgrid {

inline constexpr const char* kToolVersion = "0.1.0";

// Stage names accepted by run_stage, in pipeline order.
const std::vector<std::string>& stage_names();

// Runs one pipeline stage. `flags` holds only the options given explicitly on
// the command line (snake_case keys). When flags["config"] names a config file
// its values are merged underneath: command-line flag, then the [stage] table,
// then top-level keys, then built-in defaults. Every stage writes a
// `<stage>.run.json` manifest into its output directory.
void run_stage(std::string_view stage, const nlohmann::json& flags);

// Hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace popgrid
