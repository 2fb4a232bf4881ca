#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fmr {

struct ImageShape {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t size() const { return height * width * channels; }
  bool operator==(const ImageShape&) const = default;
  std::string str() const;
};

// Row-major HxWxC image with values in [0,1].
class Image {
 public:
  Image() = default;
  explicit Image(ImageShape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
  Image(ImageShape shape, std::vector<double> data);

  const ImageShape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return data_[(y * shape_.width + x) * shape_.channels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return data_[(y * shape_.width + x) * shape_.channels + c];
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  bool in_unit_range() const;
  bool all_finite() const;
  void clamp_unit();

  bool operator==(const Image& o) const = default;

 private:
  ImageShape shape_;
  std::vector<double> data_;
};

// Per-channel affine input normalization: (x - mean[c]) / scale[c].
// An empty mean/scale pair is the identity.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> scale;

  static Normalization identity() { return {}; }
  // Color statistics used for ImageNet-style pipelines.
  static Normalization imagenet() { return {{0.485, 0.456, 0.406}, {0.229, 0.224, 0.225}}; }

  bool is_identity() const { return mean.empty(); }
  void validate(std::size_t channels) const;

  Image apply(const Image& image) const;
  // Chain rule: maps d(loss)/d(normalized) to d(loss)/d(raw) in place.
  void backprop(std::span<double> grad, std::size_t channels) const;

  bool operator==(const Normalization&) const = default;
};

}  // namespace fmr
