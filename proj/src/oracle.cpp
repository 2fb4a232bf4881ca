#include "fmr/oracle.hpp"

#include <cmath>
#include <set>

#include "fmr/checkpoint.hpp"
#include "fmr/error.hpp"

namespace fmr {

std::size_t argmax_lowest(std::span<const double> scores) {
  require(!scores.empty(), "argmax of an empty score vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

LabelSet::LabelSet(std::vector<std::string> names) : names_(std::move(names)) {
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (n.empty()) throw ConfigError("label set: empty class name");
    if (!seen.insert(n).second) throw ConfigError("label set: duplicate class name '" + n + "'");
  }
}

std::optional<std::size_t> LabelSet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  return std::nullopt;
}

OracleVerdict Oracle::judge(const Image& image, std::size_t label) const {
  require(label < labels().size(), "oracle: label outside label set");
  auto s = classify(image);
  return {s.predicted_class == label, s.predicted_class, std::move(s.scores)};
}

std::vector<std::string> build_prompts(const LabelSet& labels) {
  if (labels.empty()) throw ConfigError("cannot build prompts for an empty label set");
  std::vector<std::string> prompts;
  prompts.reserve(labels.size());
  for (const auto& name : labels.names()) prompts.push_back("an image of " + name);
  return prompts;
}

std::vector<double> cosine_logits(std::span<const double> embedding,
                                  const std::vector<std::vector<double>>& class_embeddings,
                                  double scale) {
  double norm = 0.0;
  for (double v : embedding) norm += v * v;
  norm = std::sqrt(norm);
  std::vector<double> logits(class_embeddings.size(), 0.0);
  if (norm == 0.0) return logits;
  for (std::size_t k = 0; k < class_embeddings.size(); ++k) {
    double dot = 0.0;
    for (std::size_t i = 0; i < embedding.size(); ++i) dot += embedding[i] * class_embeddings[k][i];
    logits[k] = scale * dot / norm;
  }
  return logits;
}

SurrogateOracle::SurrogateOracle(LabelSet labels, ImageShape shape, nn::Network image_encoder,
                                 std::map<std::string, std::vector<double>> prompt_embeddings,
                                 double logit_scale)
    : labels_(std::move(labels)),
      shape_(shape),
      encoder_(std::move(image_encoder)),
      prompt_embeddings_(std::move(prompt_embeddings)),
      logit_scale_(logit_scale) {
  if (encoder_.input_size() != shape_.size())
    throw AdapterError("surrogate oracle: encoder input does not match image shape " + shape_.str());
  for (const auto& prompt : build_prompts(labels_)) {
    auto it = prompt_embeddings_.find(prompt);
    if (it == prompt_embeddings_.end())
      throw AdapterError("surrogate oracle: no text embedding for prompt '" + prompt + "'");
    if (it->second.size() != encoder_.output_size())
      throw AdapterError("surrogate oracle: embedding size mismatch for prompt '" + prompt + "'");
    std::vector<double> e = it->second;
    double n = 0.0;
    for (double v : e) n += v * v;
    n = std::sqrt(n);
    if (n == 0.0) throw AdapterError("surrogate oracle: zero embedding for prompt '" + prompt + "'");
    for (double& v : e) v /= n;
    class_embeddings_.push_back(std::move(e));
  }
}

OracleScores SurrogateOracle::classify(const Image& image) const {
  if (image.shape() != shape_)
    throw AdapterError("surrogate oracle: image shape " + image.shape().str() + ", expected " + shape_.str());
  const auto embedding = encoder_.forward(image.values());
  auto scores = cosine_logits(embedding, class_embeddings_, logit_scale_);
  for (double s : scores)
    if (!std::isfinite(s)) throw AdapterError("surrogate oracle: non-finite score");
  const std::size_t pred = argmax_lowest(scores);
  return {pred, std::move(scores)};
}

nlohmann::json SurrogateOracle::to_json() const {
  auto j = checkpoint_header("surrogate-oracle");
  j["labels"] = labels_.names();
  j["image_shape"] = shape_to_json(shape_);
  j["logit_scale"] = logit_scale_;
  j["prompt_embeddings"] = prompt_embeddings_;
  j["image_encoder"] = encoder_.to_json();
  return j;
}

SurrogateOracle SurrogateOracle::from_json(const nlohmann::json& j) {
  check_checkpoint(j, "surrogate-oracle");
  try {
    return SurrogateOracle(LabelSet(j.at("labels").get<std::vector<std::string>>()),
                           shape_from_json(j.at("image_shape")),
                           nn::Network::from_json(j.at("image_encoder")),
                           j.at("prompt_embeddings").get<std::map<std::string, std::vector<double>>>(),
                           j.at("logit_scale").get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("surrogate-oracle checkpoint: ") + e.what());
  }
}

}  // namespace fmr
