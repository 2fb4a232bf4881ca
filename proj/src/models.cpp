#include "fmr/models.hpp"

#include <algorithm>
#include <cmath>

#include "fmr/checkpoint.hpp"
#include "fmr/error.hpp"

namespace fmr {

double EvaluatedModel::loss(const Image& image, std::size_t label) const {
  return softmax_cross_entropy(predict(image), label).loss;
}

std::size_t EvaluatedModel::predict_class(const Image& image) const {
  return argmax_lowest(predict(image));
}

LossAndGradient softmax_cross_entropy(std::span<const double> logits, std::size_t label) {
  require(label < logits.size(), "cross-entropy: label outside score vector");
  for (double v : logits)
    if (!std::isfinite(v)) throw NumericError("non-finite model activation");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  // log-sum-exp form keeps the loss exact for confident predictions
  const double loss = std::max(0.0, mx + std::log(z) - logits[label]);
  p[label] -= 1.0;
  return {loss, std::move(p)};
}

// NetworkClassifier

NetworkClassifier::NetworkClassifier(std::string name, ImageShape input_shape, nn::Network network)
    : name_(std::move(name)), shape_(input_shape), network_(std::move(network)) {
  if (network_.input_size() != shape_.size())
    throw ConfigError("classifier '" + name_ + "': network input size does not match " + shape_.str());
  if (network_.output_size() < 1) throw ConfigError("classifier '" + name_ + "': no outputs");
}

void NetworkClassifier::check_image(const Image& image) const {
  if (image.shape() != shape_)
    throw ContractViolation("classifier '" + name_ + "': image shape " + image.shape().str() +
                            ", expected " + shape_.str());
}

std::vector<double> NetworkClassifier::predict(const Image& image) const {
  check_image(image);
  return network_.forward(image.values());
}

LossAndGradient NetworkClassifier::loss_gradient(const Image& image, std::size_t label) const {
  check_image(image);
  const auto trace = network_.forward_trace(image.values());
  auto ce = softmax_cross_entropy(trace.output(), label);
  return {ce.loss, network_.backward(trace, ce.gradient)};
}

nlohmann::json NetworkClassifier::to_json() const {
  auto j = checkpoint_header("classifier");
  j["name"] = name_;
  j["input_shape"] = shape_to_json(shape_);
  j["network"] = network_.to_json();
  return j;
}

NetworkClassifier NetworkClassifier::from_json(const nlohmann::json& j) {
  check_checkpoint(j, "classifier");
  try {
    return NetworkClassifier(j.at("name").get<std::string>(), shape_from_json(j.at("input_shape")),
                             nn::Network::from_json(j.at("network")));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("classifier checkpoint: ") + e.what());
  }
}

// Grayscale

Image to_luminance(const Image& rgb) {
  const auto& s = rgb.shape();
  if (s.channels != 3) throw ConfigError("luminance conversion needs 3 channels, got " + std::to_string(s.channels));
  Image out({s.height, s.width, 1});
  const auto in = rgb.values();
  auto o = out.values();
  for (std::size_t p = 0; p < o.size(); ++p)
    o[p] = kLumaR * in[3 * p] + kLumaG * in[3 * p + 1] + kLumaB * in[3 * p + 2];
  return out;
}

GrayscaleModel::GrayscaleModel(std::shared_ptr<const EvaluatedModel> inner) : inner_(std::move(inner)) {
  if (!inner_) throw ConfigError("grayscale wrapper: null model");
  if (inner_->input_shape().channels != 1)
    throw ConfigError("grayscale wrapper needs a single-channel model, '" + inner_->name() + "' takes " +
                      std::to_string(inner_->input_shape().channels));
}

ImageShape GrayscaleModel::input_shape() const {
  auto s = inner_->input_shape();
  s.channels = 3;
  return s;
}

void GrayscaleModel::check_image(const Image& image) const {
  if (image.shape() != input_shape())
    throw ConfigError("grayscale wrapper: image shape " + image.shape().str() + ", expected " +
                      input_shape().str());
}

std::vector<double> GrayscaleModel::predict(const Image& image) const {
  check_image(image);
  return inner_->predict(to_luminance(image));
}

LossAndGradient GrayscaleModel::loss_gradient(const Image& image, std::size_t label) const {
  check_image(image);
  auto lg = inner_->loss_gradient(to_luminance(image), label);
  std::vector<double> g(image.size());
  for (std::size_t p = 0; p < lg.gradient.size(); ++p) {
    g[3 * p] = kLumaR * lg.gradient[p];
    g[3 * p + 1] = kLumaG * lg.gradient[p];
    g[3 * p + 2] = kLumaB * lg.gradient[p];
  }
  return {lg.loss, std::move(g)};
}

std::shared_ptr<const EvaluatedModel> grayscale_wrap(std::shared_ptr<const EvaluatedModel> model) {
  return std::make_shared<GrayscaleModel>(std::move(model));
}

Image fgsm_init(const Image& image, const EvaluatedModel& model, std::size_t label, double epsilon,
                const Normalization& normalization) {
  require(epsilon > 0.0, "fgsm_init: epsilon must be positive");
  auto lg = model.loss_gradient(normalization.apply(image), label);
  normalization.backprop(lg.gradient, image.shape().channels);
  Image out = image;
  auto v = out.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double g = lg.gradient[i];
    if (!std::isfinite(g)) throw NumericError("fgsm_init: non-finite input gradient");
    const double sign = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
    v[i] = std::clamp(v[i] + epsilon * sign, 0.0, 1.0);
  }
  return out;
}

}  // namespace fmr
