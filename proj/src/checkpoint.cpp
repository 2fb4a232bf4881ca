#include "fmr/checkpoint.hpp"

#include <fstream>

#include "fmr/error.hpp"

namespace fmr {

nlohmann::json checkpoint_header(const std::string& kind) {
  return {{"format", "fmr-checkpoint"}, {"version", kCheckpointVersion}, {"kind", kind}};
}

void check_checkpoint(const nlohmann::json& j, const std::string& kind) {
  if (!j.is_object() || j.value("format", "") != "fmr-checkpoint")
    throw ConfigError("not an fmr checkpoint (expected kind '" + kind + "')");
  if (j.value("version", 0) != kCheckpointVersion)
    throw ConfigError("unsupported checkpoint version " + std::to_string(j.value("version", 0)));
  if (j.value("kind", "") != kind)
    throw ConfigError("checkpoint kind '" + j.value("kind", "") + "' where '" + kind + "' was expected");
}

nlohmann::json shape_to_json(const ImageShape& s) { return {s.height, s.width, s.channels}; }

ImageShape shape_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("image shape must be [height, width, channels]");
  return {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace fmr
