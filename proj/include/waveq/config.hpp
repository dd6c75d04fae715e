#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "waveq/trainer.hpp"

namespace waveq {

/// JSON form of a run configuration. Field names mirror the C++ structs; enums
/// are lower-case strings. Missing keys take defaults, unknown keys are errors.
nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Applies one "dotted.key=value" override; the value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace waveq
