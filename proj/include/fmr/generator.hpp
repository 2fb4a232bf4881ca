#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmr/interfaces.hpp"
#include "fmr/network.hpp"
#include "fmr/types.hpp"

namespace fmr {

// `latent` on the selected dims, `base` everywhere else.
LatentCode apply_mask(const LatentCode& latent, const LatentCode& base, const SparseMask& mask);

// latent_ascent_step restricted to the mask: the step is normalized over the
// masked gradient components only and unmasked coordinates are copied as is.
std::vector<double> masked_ascent_step(std::span<const double> latent,
                                       std::span<const double> gradient, double step_size,
                                       const SparseMask& mask);

// Latent = pixels. Decode clamps to [0,1]; the pullback treats the clamp as
// identity, which is exact for images inside the unit cube.
class PixelGenerator final : public Generator {
 public:
  explicit PixelGenerator(ImageShape shape) : shape_(shape) {}

  std::string name() const override { return "pixel"; }
  ImageShape image_shape() const override { return shape_; }
  std::size_t latent_dim() const override { return shape_.size(); }
  LatentCode encode(const Image& image) const override;
  Image decode(const LatentCode& latent) const override;
  std::vector<double> pullback(const LatentCode& latent,
                               std::span<const double> image_gradient) const override;

 private:
  ImageShape shape_;
};

// Desk-scale reference generator: linear encoder and a sigmoid-output
// decoder. Latents are stored multiplied by latent_scale, which sets how far a
// unit step in latent space travels in the natural code.
class ReferenceAutoencoder final : public Generator {
 public:
  ReferenceAutoencoder(ImageShape shape, nn::Network encoder, nn::Network decoder,
                       double latent_scale);

  std::string name() const override { return "reference-ae"; }
  ImageShape image_shape() const override { return shape_; }
  std::size_t latent_dim() const override { return encoder_.output_size(); }
  LatentCode encode(const Image& image) const override;
  Image decode(const LatentCode& latent) const override;
  std::vector<double> pullback(const LatentCode& latent,
                               std::span<const double> image_gradient) const override;

  double latent_scale() const { return latent_scale_; }
  const nn::Network& encoder() const { return encoder_; }
  const nn::Network& decoder() const { return decoder_; }

  // Measured on the training set when the fixture is fitted.
  double reconstruction_mse = 0.0;    // mean over images
  double reconstruction_bound = 0.0;  // max over images

  nlohmann::json to_json() const;
  static ReferenceAutoencoder from_json(const nlohmann::json& j);

 private:
  void check_latent(const LatentCode& latent) const;

  ImageShape shape_;
  nn::Network encoder_;
  nn::Network decoder_;
  double latent_scale_;
};

double mean_squared_error(const Image& a, const Image& b);

// Rounds decoded images to the grid of a `bit_depth`-bit image format, so what
// the oracle and model see is exactly what a lossless file of that depth
// stores. The pullback is the inner one (straight-through).
class QuantizedGenerator final : public Generator {
 public:
  QuantizedGenerator(std::shared_ptr<const Generator> inner, int bit_depth);

  std::string name() const override { return inner_->name(); }
  ImageShape image_shape() const override { return inner_->image_shape(); }
  std::size_t latent_dim() const override { return inner_->latent_dim(); }
  LatentCode encode(const Image& image) const override { return inner_->encode(image); }
  Image decode(const LatentCode& latent) const override;
  std::vector<double> pullback(const LatentCode& latent, std::span<const double> image_gradient) const override {
    return inner_->pullback(latent, image_gradient);
  }
  bool concurrent_safe() const override { return inner_->concurrent_safe(); }
  int bit_depth() const { return bit_depth_; }

 private:
  std::shared_ptr<const Generator> inner_;
  int bit_depth_;
};

Image quantize_image(const Image& image, int bit_depth);

}  // namespace fmr
