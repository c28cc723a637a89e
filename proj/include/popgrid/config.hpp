#pragma once

#include <filesystem>
#include <string_view>

#include <nlohmann/json.hpp>

namespace popgrid {

// Parses the TOML subset accepted for run configuration:
//
//   # comment
//   key = "string" | 42 | -1.5e-3 | true | [1, 3, 5]
//   [table]
//   key = value
//
// Keys are bare ([A-Za-z0-9_-]+); arrays fit on one line and may nest. The
// result is a JSON object with one nested object per table.
nlohmann::json parse_config(std::string_view text);
nlohmann::json load_config(const std::filesystem::path& path);

}  // namespace popgrid
