#include "fmr/generator.hpp"

#include <algorithm>
#include <cmath>

#include "fmr/checkpoint.hpp"
#include "fmr/error.hpp"
#include "fmr/protocol.hpp"

namespace fmr {

LatentCode apply_mask(const LatentCode& latent, const LatentCode& base, const SparseMask& mask) {
  require(latent.size() == base.size(), "apply_mask: latent and base lengths differ");
  require(mask.total_dims() == latent.size(), "apply_mask: mask does not match latent length");
  LatentCode out = base;
  for (std::size_t i : mask.selected()) out.values[i] = latent.values[i];
  return out;
}

std::vector<double> masked_ascent_step(std::span<const double> latent,
                                       std::span<const double> gradient, double step_size,
                                       const SparseMask& mask) {
  require(latent.size() == gradient.size(), "masked_ascent_step: latent and gradient lengths differ");
  require(mask.total_dims() == latent.size(), "masked_ascent_step: mask does not match latent length");
  std::vector<double> sub_latent, sub_grad;
  sub_latent.reserve(mask.count());
  sub_grad.reserve(mask.count());
  for (std::size_t i : mask.selected()) {
    sub_latent.push_back(latent[i]);
    sub_grad.push_back(gradient[i]);
  }
  const auto moved = latent_ascent_step(sub_latent, sub_grad, step_size);
  std::vector<double> out(latent.begin(), latent.end());
  for (std::size_t k = 0; k < mask.count(); ++k) out[mask.selected()[k]] = moved[k];
  return out;
}

double mean_squared_error(const Image& a, const Image& b) {
  require(a.shape() == b.shape(), "mean_squared_error: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return a.size() ? s / static_cast<double>(a.size()) : 0.0;
}

// PixelGenerator

LatentCode PixelGenerator::encode(const Image& image) const {
  if (image.shape() != shape_)
    throw ContractViolation("pixel generator: image shape " + image.shape().str() + ", expected " + shape_.str());
  return {image.data(), {shape_.height, shape_.width, shape_.channels}};
}

Image PixelGenerator::decode(const LatentCode& latent) const {
  require(latent.size() == shape_.size(), "pixel generator: latent length mismatch");
  Image out(shape_, latent.values);
  out.clamp_unit();
  return out;
}

std::vector<double> PixelGenerator::pullback(const LatentCode& latent,
                                             std::span<const double> image_gradient) const {
  require(latent.size() == shape_.size() && image_gradient.size() == shape_.size(),
          "pixel generator: pullback size mismatch");
  return {image_gradient.begin(), image_gradient.end()};
}

// ReferenceAutoencoder

ReferenceAutoencoder::ReferenceAutoencoder(ImageShape shape, nn::Network encoder, nn::Network decoder,
                                           double latent_scale)
    : shape_(shape), encoder_(std::move(encoder)), decoder_(std::move(decoder)), latent_scale_(latent_scale) {
  if (encoder_.input_size() != shape_.size() || decoder_.output_size() != shape_.size())
    throw ConfigError("reference autoencoder: networks do not match image shape " + shape_.str());
  if (decoder_.input_size() != encoder_.output_size())
    throw ConfigError("reference autoencoder: encoder/decoder latent sizes differ");
  if (!(latent_scale_ > 0.0)) throw ConfigError("reference autoencoder: latent_scale must be positive");
}

void ReferenceAutoencoder::check_latent(const LatentCode& latent) const {
  if (latent.size() != latent_dim())
    throw ContractViolation("reference autoencoder: latent has " + std::to_string(latent.size()) +
                            " values, expected " + std::to_string(latent_dim()));
}

LatentCode ReferenceAutoencoder::encode(const Image& image) const {
  if (image.shape() != shape_)
    throw ContractViolation("reference autoencoder: image shape " + image.shape().str() +
                            ", expected " + shape_.str());
  auto code = encoder_.forward(image.values());
  for (double& v : code) v *= latent_scale_;
  return {std::move(code), {}};
}

Image ReferenceAutoencoder::decode(const LatentCode& latent) const {
  check_latent(latent);
  std::vector<double> code = latent.values;
  for (double& v : code) v /= latent_scale_;
  Image out(shape_, decoder_.forward(code));
  out.clamp_unit();
  return out;
}

std::vector<double> ReferenceAutoencoder::pullback(const LatentCode& latent,
                                                   std::span<const double> image_gradient) const {
  check_latent(latent);
  require(image_gradient.size() == shape_.size(), "reference autoencoder: image gradient size mismatch");
  std::vector<double> code = latent.values;
  for (double& v : code) v /= latent_scale_;
  const auto trace = decoder_.forward_trace(code);
  auto g = decoder_.backward(trace, image_gradient);
  for (double& v : g) v /= latent_scale_;
  return g;
}

nlohmann::json ReferenceAutoencoder::to_json() const {
  auto j = checkpoint_header("reference-ae");
  j["image_shape"] = shape_to_json(shape_);
  j["latent_scale"] = latent_scale_;
  j["reconstruction_mse"] = reconstruction_mse;
  j["reconstruction_bound"] = reconstruction_bound;
  j["encoder"] = encoder_.to_json();
  j["decoder"] = decoder_.to_json();
  return j;
}

ReferenceAutoencoder ReferenceAutoencoder::from_json(const nlohmann::json& j) {
  check_checkpoint(j, "reference-ae");
  try {
    ReferenceAutoencoder ae(shape_from_json(j.at("image_shape")), nn::Network::from_json(j.at("encoder")),
                            nn::Network::from_json(j.at("decoder")), j.at("latent_scale").get<double>());
    ae.reconstruction_mse = j.value("reconstruction_mse", 0.0);
    ae.reconstruction_bound = j.value("reconstruction_bound", 0.0);
    return ae;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("reference-ae checkpoint: ") + e.what());
  }
}

Image quantize_image(const Image& image, int bit_depth) {
  require(bit_depth == 8 || bit_depth == 16, "quantize_image: bit depth must be 8 or 16");
  const double levels = bit_depth == 8 ? 255.0 : 65535.0;
  Image out = image;
  for (double& v : out.data()) v = std::round(std::clamp(v, 0.0, 1.0) * levels) / levels;
  return out;
}

QuantizedGenerator::QuantizedGenerator(std::shared_ptr<const Generator> inner, int bit_depth)
    : inner_(std::move(inner)), bit_depth_(bit_depth) {
  require(inner_ != nullptr, "QuantizedGenerator: null generator");
  if (bit_depth != 8 && bit_depth != 16) throw ConfigError("image bit depth must be 8 or 16");
}

Image QuantizedGenerator::decode(const LatentCode& latent) const { return quantize_image(inner_->decode(latent), bit_depth_); }

}  // namespace fmr
