#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmr/interfaces.hpp"
#include "fmr/network.hpp"

namespace fmr {

// Softmax cross-entropy at `label` and its gradient with respect to the logits.
// Throws NumericError on non-finite logits.
LossAndGradient softmax_cross_entropy(std::span<const double> logits, std::size_t label);

// Classifier backed by a sequential network; the image is fed flattened.
class NetworkClassifier final : public EvaluatedModel {
 public:
  NetworkClassifier(std::string name, ImageShape input_shape, nn::Network network);

  std::string name() const override { return name_; }
  ImageShape input_shape() const override { return shape_; }
  std::size_t num_classes() const override { return network_.output_size(); }
  std::vector<double> predict(const Image& image) const override;
  LossAndGradient loss_gradient(const Image& image, std::size_t label) const override;

  const nn::Network& network() const { return network_; }
  nn::Network& network() { return network_; }

  nlohmann::json to_json() const;
  static NetworkClassifier from_json(const nlohmann::json& j);

 private:
  void check_image(const Image& image) const;

  std::string name_;
  ImageShape shape_;
  nn::Network network_;
};

// ITU-R BT.601 luma weights.
inline constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;

Image to_luminance(const Image& rgb);

// Feeds RGB images to a single-channel model through the luminance transform.
class GrayscaleModel final : public EvaluatedModel {
 public:
  // Throws ConfigError unless `inner` takes single-channel input.
  explicit GrayscaleModel(std::shared_ptr<const EvaluatedModel> inner);

  std::string name() const override { return inner_->name() + "+grayscale"; }
  ImageShape input_shape() const override;
  std::size_t num_classes() const override { return inner_->num_classes(); }
  std::vector<double> predict(const Image& image) const override;
  LossAndGradient loss_gradient(const Image& image, std::size_t label) const override;
  bool concurrent_safe() const override { return inner_->concurrent_safe(); }

 private:
  void check_image(const Image& image) const;
  std::shared_ptr<const EvaluatedModel> inner_;
};

std::shared_ptr<const EvaluatedModel> grayscale_wrap(std::shared_ptr<const EvaluatedModel> model);

// clamp(image + epsilon * sign(d loss / d image), 0, 1), with sign(0) = 0.
// The gradient is taken through `normalization`.
Image fgsm_init(const Image& image, const EvaluatedModel& model, std::size_t label, double epsilon,
                const Normalization& normalization = {});

}  // namespace fmr
