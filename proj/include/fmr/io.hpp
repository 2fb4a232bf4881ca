#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "fmr/image.hpp"
#include "fmr/interfaces.hpp"
#include "fmr/types.hpp"

namespace fmr {

// Lossless PNG, gray or RGB. Values are rounded to the nearest level of the
// chosen bit depth (8 or 16). Throws IntegrityError on unreadable files.
void write_png(const std::filesystem::path& path, const Image& image, int bit_depth = 8);
Image read_png(const std::filesystem::path& path);

// Worst-case per-pixel error introduced by write_png/read_png.
inline double png_quantization_error(int bit_depth) { return 0.5 / ((1 << bit_depth) - 1); }

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

struct Dataset {
  LabelSet labels;
  ImageShape shape;
  std::vector<LabeledSample> samples;  // sorted by class, then file name
  std::string name;
};

// Directory-per-class layout: root/<class>/<image>.png. When root/index.json
// exists it fixes the class order and may list samples explicitly:
//   {"classes": [...], "samples": [{"id": ..., "path": ..., "label": ...}]}
// Otherwise classes are the sorted sub-directory names. Sample ids are
// "<class>/<file stem>". RGB images are loaded as RGB unless `channels` is 1,
// in which case they are converted to luminance. Throws ConfigError when the
// directory holds no images or shapes disagree.
Dataset load_image_folder(const std::filesystem::path& root, int channels = 0);

}  // namespace fmr
