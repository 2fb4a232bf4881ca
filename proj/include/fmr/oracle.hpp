#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmr/interfaces.hpp"
#include "fmr/network.hpp"

namespace fmr {

// One text prompt per class, in label order: "an image of {class}".
std::vector<std::string> build_prompts(const LabelSet& labels);

// Stand-in for a zero-shot vision-language oracle: an image encoder maps the
// image to an embedding, each class prompt owns a text embedding, and class
// scores are the scaled cosine similarities between the two.
class SurrogateOracle final : public Oracle {
 public:
  // Throws AdapterError when a class prompt has no embedding.
  SurrogateOracle(LabelSet labels, ImageShape shape, nn::Network image_encoder,
                  std::map<std::string, std::vector<double>> prompt_embeddings, double logit_scale);

  std::string name() const override { return "surrogate"; }
  const LabelSet& labels() const override { return labels_; }
  ImageShape input_shape() const override { return shape_; }
  OracleScores classify(const Image& image) const override;

  const nn::Network& image_encoder() const { return encoder_; }
  double logit_scale() const { return logit_scale_; }
  const std::vector<std::vector<double>>& class_embeddings() const { return class_embeddings_; }

  nlohmann::json to_json() const;
  static SurrogateOracle from_json(const nlohmann::json& j);

 private:
  LabelSet labels_;
  ImageShape shape_;
  nn::Network encoder_;
  std::map<std::string, std::vector<double>> prompt_embeddings_;
  std::vector<std::vector<double>> class_embeddings_;  // unit-norm, label order
  double logit_scale_;
};

// Cosine-similarity logits between an embedding and unit-norm class
// embeddings, plus the pullback used when training the surrogate.
std::vector<double> cosine_logits(std::span<const double> embedding,
                                  const std::vector<std::vector<double>>& class_embeddings,
                                  double scale);

}  // namespace fmr
