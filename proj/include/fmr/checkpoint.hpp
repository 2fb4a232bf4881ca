#pragma once

// Versioned JSON weight files.
//
//   {"format": "fmr-checkpoint", "version": 1, "kind": "<kind>", ...kind-specific fields}
//
// Kinds: "classifier", "reference-ae", "surrogate-oracle".

#include <filesystem>
#include <string>

#include <json.hpp>

#include "fmr/image.hpp"

namespace fmr {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json checkpoint_header(const std::string& kind);
// Throws ConfigError when the format, version or kind does not match.
void check_checkpoint(const nlohmann::json& j, const std::string& kind);

nlohmann::json shape_to_json(const ImageShape& s);
ImageShape shape_from_json(const nlohmann::json& j);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace fmr
