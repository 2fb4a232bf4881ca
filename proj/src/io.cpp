#include "fmr/io.hpp"

#include <png.h>
#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <iterator>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>

#include "fmr/checkpoint.hpp"
#include "fmr/error.hpp"
#include "fmr/models.hpp"

namespace fmr {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void png_warning_sink(png_structp, png_const_charp) {}
[[noreturn]] void png_error_sink(png_structp png, png_const_charp) { png_longjmp(png, 1); }

}  // namespace

void write_png(const fs::path& path, const Image& image, int bit_depth) {
  require(bit_depth == 8 || bit_depth == 16, "write_png: bit depth must be 8 or 16");
  const auto& s = image.shape();
  require(s.channels == 1 || s.channels == 3, "write_png: only gray and RGB images are supported");
  require(s.size() > 0, "write_png: empty image");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());

  const std::size_t bytes_per_sample = bit_depth / 8;
  const std::size_t row_bytes = s.width * s.channels * bytes_per_sample;
  const double levels = bit_depth == 8 ? 255.0 : 65535.0;
  std::vector<unsigned char> buffer(s.height * row_bytes);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image.data()[i], 0.0, 1.0);
    const auto q = static_cast<unsigned>(std::lround(v * levels));
    if (bit_depth == 8) {
      buffer[i] = static_cast<unsigned char>(q);
    } else {
      buffer[2 * i] = static_cast<unsigned char>(q >> 8);
      buffer[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
    }
  }
  std::vector<png_bytep> rows(s.height);
  for (std::size_t y = 0; y < s.height; ++y) rows[y] = buffer.data() + y * row_bytes;

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ConfigError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_sink, png_warning_sink);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw ConfigError("libpng: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ConfigError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(s.width), static_cast<png_uint_32>(s.height), bit_depth,
               s.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // no time chunk, so identical images give identical bytes
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IntegrityError("cannot open image " + path.string());
  unsigned char sig[8] = {};
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IntegrityError("not a PNG file: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_sink, png_warning_sink);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IntegrityError("libpng: out of memory");
  }
  std::vector<unsigned char> buffer;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  int depth = 0, color = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IntegrityError("corrupted PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_get_IHDR(png, info, &width, &height, &depth, &color, nullptr, nullptr, nullptr);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const int out_channels = png_get_channels(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  buffer.resize(height * row_bytes);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = buffer.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (out_channels != 1 && out_channels != 3) throw IntegrityError("unsupported PNG channel layout: " + path.string());
  const ImageShape shape{height, width, static_cast<std::size_t>(out_channels)};
  std::vector<double> data(shape.size());
  const double levels = out_depth == 16 ? 65535.0 : 255.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const unsigned q = out_depth == 16 ? (unsigned(buffer[2 * i]) << 8) | buffer[2 * i + 1] : buffer[i];
    data[i] = q / levels;
  }
  return Image(shape, std::move(data));
}

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorKind::kIntegrity, "SHA-256 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

namespace {

Image convert_channels(Image img, int channels, const fs::path& path) {
  if (channels == 0 || static_cast<std::size_t>(channels) == img.shape().channels) return img;
  if (channels == 1 && img.shape().channels == 3) return to_luminance(img);
  throw ConfigError("cannot convert " + path.string() + " to " + std::to_string(channels) + " channels");
}

bool is_png(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

}  // namespace

Dataset load_image_folder(const fs::path& root, int channels) {
  if (!fs::is_directory(root)) throw ConfigError("dataset directory not found: " + root.string());
  Dataset ds;
  ds.name = root.filename().empty() ? root.parent_path().filename().string() : root.filename().string();
  struct Entry {
    std::string id;
    fs::path path;
    std::size_t label;
  };
  std::vector<Entry> entries;

  const auto index_path = root / "index.json";
  if (fs::exists(index_path)) {
    const auto j = read_json_file(index_path);
    try {
      ds.labels = LabelSet(j.at("classes").get<std::vector<std::string>>());
      if (j.contains("samples")) {
        for (const auto& s : j["samples"]) {
          const auto label = s.at("label");
          std::size_t idx;
          if (label.is_string()) {
            auto found = ds.labels.index_of(label.get<std::string>());
            if (!found) throw ConfigError("index.json: unknown class '" + label.get<std::string>() + "'");
            idx = *found;
          } else {
            idx = label.get<std::size_t>();
          }
          if (idx >= ds.labels.size()) throw ConfigError("index.json: label index out of range");
          entries.push_back({s.at("id").get<std::string>(), root / s.at("path").get<std::string>(), idx});
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("index.json: ") + e.what());
    }
  } else {
    std::vector<std::string> names;
    for (const auto& d : fs::directory_iterator(root))
      if (d.is_directory()) names.push_back(d.path().filename().string());
    std::sort(names.begin(), names.end());
    if (names.empty()) throw ConfigError("dataset directory has no class sub-directories: " + root.string());
    ds.labels = LabelSet(names);
  }

  if (entries.empty()) {
    for (std::size_t c = 0; c < ds.labels.size(); ++c) {
      const auto dir = root / ds.labels.name(c);
      if (!fs::is_directory(dir)) continue;
      std::vector<fs::path> files;
      for (const auto& f : fs::directory_iterator(dir))
        if (f.is_regular_file() && is_png(f.path())) files.push_back(f.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) entries.push_back({ds.labels.name(c) + "/" + f.stem().string(), f, c});
    }
  }
  if (entries.empty()) throw ConfigError("dataset directory contains no images: " + root.string());

  std::set<std::string> ids;
  ds.samples.resize(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!ids.insert(entries[i].id).second) throw ConfigError("duplicate sample id '" + entries[i].id + "'");
    Image img;
    try {
      img = convert_channels(read_png(entries[i].path), channels, entries[i].path);
    } catch (const IntegrityError& e) {
      throw ConfigError(std::string("dataset: ") + e.what());
    }
    if (i == 0) ds.shape = img.shape();
    if (img.shape() != ds.shape)
      throw ConfigError("image " + entries[i].path.string() + " has shape " + img.shape().str() + ", expected " +
                        ds.shape.str());
    ds.samples[i] = {entries[i].id, std::move(img), entries[i].label};
  }
  return ds;
}

}  // namespace fmr
