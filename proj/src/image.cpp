#include "fmr/image.hpp"

#include <algorithm>
#include <cmath>

#include "fmr/error.hpp"

namespace fmr {

std::string ImageShape::str() const {
  return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
}

Image::Image(ImageShape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  require(data_.size() == shape_.size(), "image data length " + std::to_string(data_.size()) +
                                             " does not match shape " + shape_.str());
}

bool Image::in_unit_range() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
}

bool Image::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Image::clamp_unit() {
  for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
}

void Normalization::validate(std::size_t channels) const {
  if (is_identity()) return;
  if (mean.size() != channels || scale.size() != channels)
    throw ConfigError("normalization has " + std::to_string(mean.size()) + " channels, image has " +
                      std::to_string(channels));
  for (double s : scale)
    if (!(s > 0.0)) throw ConfigError("normalization scale must be positive");
}

Image Normalization::apply(const Image& image) const {
  if (is_identity()) return image;
  const std::size_t c = image.shape().channels;
  validate(c);
  Image out = image;
  auto v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (v[i] - mean[i % c]) / scale[i % c];
  return out;
}

void Normalization::backprop(std::span<double> grad, std::size_t channels) const {
  if (is_identity()) return;
  validate(channels);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] /= scale[i % channels];
}

}  // namespace fmr
