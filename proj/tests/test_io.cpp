#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "fmr/checkpoint.hpp"
#include "fmr/error.hpp"
#include "fmr/io.hpp"
#include "fmr/models.hpp"
#include "fmr/training.hpp"

using namespace fmr;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("fmr_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Image random_image(ImageShape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(shape);
  for (double& v : img.data()) v = u(rng);
  return img;
}

double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST_CASE("png round trip stays within the quantization step") {
  const auto dir = scratch_dir("roundtrip");
  for (int depth : {8, 16})
    for (std::size_t c : {1u, 3u}) {
      const Image img = random_image({5, 7, c}, 10 * depth + c);
      const auto path = dir / ("img_" + std::to_string(depth) + "_" + std::to_string(c) + ".png");
      write_png(path, img, depth);
      const Image back = read_png(path);
      REQUIRE(back.shape() == img.shape());
      CHECK(max_abs_diff(img, back) <= png_quantization_error(depth) + 1e-12);
    }
  CHECK(png_quantization_error(8) <= 1.0 / 255.0);
}

TEST_CASE("png writes are byte-deterministic and re-encode exactly") {
  const auto dir = scratch_dir("bytes");
  const Image img = random_image({4, 4, 3}, 3);
  write_png(dir / "a.png", img);
  write_png(dir / "b.png", img);
  CHECK(sha256_file(dir / "a.png") == sha256_file(dir / "b.png"));
  // a decoded 8-bit image is a fixed point of the round trip
  const Image once = read_png(dir / "a.png");
  write_png(dir / "c.png", once);
  CHECK(read_png(dir / "c.png") == once);
}

TEST_CASE("png errors") {
  const auto dir = scratch_dir("errors");
  CHECK_THROWS_AS(read_png(dir / "missing.png"), IntegrityError);
  {
    std::ofstream(dir / "text.png") << "hello, not an image";
  }
  CHECK_THROWS_AS(read_png(dir / "text.png"), IntegrityError);

  write_png(dir / "ok.png", random_image({8, 8, 1}, 1));
  std::string bytes;
  {
    std::ifstream in(dir / "ok.png", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  std::ofstream(dir / "truncated.png", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(read_png(dir / "truncated.png"), IntegrityError);

  CHECK_THROWS_AS(write_png(dir / "x.png", random_image({2, 2, 2}, 1)), ContractViolation);
  CHECK_THROWS_AS(write_png(dir / "x.png", random_image({2, 2, 1}, 1), 4), ContractViolation);
}

TEST_CASE("sha256 known answers") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("image folder: written digits load back in order") {
  const auto dir = scratch_dir("folder");
  const auto labels = digit_labels();
  const auto samples = make_digits({.per_class = 3, .seed = 4});
  write_image_folder(dir, samples, labels);
  const auto ds = load_image_folder(dir);
  CHECK(ds.labels.names() == labels.names());
  CHECK(ds.shape == ImageShape{16, 16, 1});
  REQUIRE(ds.samples.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(ds.samples[i].id == labels.name(samples[i].label) + "/" + samples[i].id);
    CHECK(ds.samples[i].label == samples[i].label);
    CHECK(max_abs_diff(ds.samples[i].image, samples[i].image) <= png_quantization_error(8) + 1e-12);
  }
}

TEST_CASE("image folder: sorted class directories without an index") {
  const auto dir = scratch_dir("sorted");
  write_png(dir / "zebra" / "1.png", random_image({3, 3, 1}, 1));
  write_png(dir / "apple" / "2.png", random_image({3, 3, 1}, 2));
  write_png(dir / "apple" / "1.png", random_image({3, 3, 1}, 3));
  const auto ds = load_image_folder(dir);
  CHECK(ds.labels.names() == std::vector<std::string>{"apple", "zebra"});
  REQUIRE(ds.samples.size() == 3);
  CHECK(ds.samples[0].id == "apple/1");
  CHECK(ds.samples[1].id == "apple/2");
  CHECK(ds.samples[2].id == "zebra/1");
  CHECK(ds.samples[2].label == 1);
}

TEST_CASE("image folder: explicit sample list and channel conversion") {
  const auto dir = scratch_dir("indexed");
  const Image rgb = random_image({4, 4, 3}, 5);
  write_png(dir / "imgs" / "a.png", rgb);
  write_png(dir / "imgs" / "b.png", rgb);
  write_json_file(dir / "index.json",
                  {{"classes", {"cat", "dog"}},
                   {"samples", {{{"id", "first"}, {"path", "imgs/b.png"}, {"label", "dog"}},
                                {{"id", "second"}, {"path", "imgs/a.png"}, {"label", 0}}}}});
  const auto ds = load_image_folder(dir);
  REQUIRE(ds.samples.size() == 2);
  CHECK(ds.samples[0].id == "first");
  CHECK(ds.samples[0].label == 1);
  CHECK(ds.samples[1].label == 0);
  const auto gray = load_image_folder(dir, 1);
  CHECK(gray.shape == ImageShape{4, 4, 1});
  CHECK(max_abs_diff(gray.samples[0].image, to_luminance(read_png(dir / "imgs" / "b.png"))) == 0.0);
}

TEST_CASE("image folder: configuration errors") {
  const auto dir = scratch_dir("bad");
  CHECK_THROWS_AS(load_image_folder(dir / "nope"), ConfigError);
  CHECK_THROWS_AS(load_image_folder(dir), ConfigError);  // no classes
  fs::create_directories(dir / "a");
  CHECK_THROWS_AS(load_image_folder(dir), ConfigError);  // no images
  write_png(dir / "a" / "1.png", random_image({3, 3, 1}, 1));
  write_png(dir / "a" / "2.png", random_image({4, 4, 1}, 1));
  CHECK_THROWS_AS(load_image_folder(dir), ConfigError);  // shape mismatch
}
