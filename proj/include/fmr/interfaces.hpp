#pragma once

// Adapter contracts for the three pluggable components: the evaluated model,
// the image generator and the verifying oracle.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmr/image.hpp"
#include "fmr/types.hpp"

namespace fmr {

// Index of the largest score; ties go to the lowest index.
std::size_t argmax_lowest(std::span<const double> scores);

class LabelSet {
 public:
  LabelSet() = default;
  // Throws ConfigError on empty or duplicate names.
  explicit LabelSet(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }
  const std::string& name(std::size_t index) const { return names_.at(index); }
  const std::vector<std::string>& names() const { return names_; }
  std::optional<std::size_t> index_of(const std::string& name) const;

  bool operator==(const LabelSet&) const = default;

 private:
  std::vector<std::string> names_;
};

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // d(loss)/d(input image), same layout as the image
};

class EvaluatedModel {
 public:
  virtual ~EvaluatedModel() = default;

  virtual std::string name() const = 0;
  virtual ImageShape input_shape() const = 0;
  virtual std::size_t num_classes() const = 0;

  // Class scores (pre-softmax logits) for an already-normalized image.
  virtual std::vector<double> predict(const Image& image) const = 0;
  // Softmax cross-entropy at `label` and its input gradient.
  virtual LossAndGradient loss_gradient(const Image& image, std::size_t label) const = 0;

  virtual double loss(const Image& image, std::size_t label) const;
  std::size_t predict_class(const Image& image) const;

  virtual bool concurrent_safe() const { return true; }
};

class Generator {
 public:
  virtual ~Generator() = default;

  virtual std::string name() const = 0;
  virtual ImageShape image_shape() const = 0;
  virtual std::size_t latent_dim() const = 0;

  virtual LatentCode encode(const Image& image) const = 0;
  // Output is clamped to [0,1].
  virtual Image decode(const LatentCode& latent) const = 0;
  // d(loss)/d(latent) given d(loss)/d(decoded image) at `latent`.
  virtual std::vector<double> pullback(const LatentCode& latent,
                                       std::span<const double> image_gradient) const = 0;

  virtual bool concurrent_safe() const { return true; }
};

struct OracleScores {
  std::size_t predicted_class = 0;
  std::vector<double> scores;
};

struct OracleVerdict {
  bool accepted = false;
  std::size_t predicted_class = 0;
  std::vector<double> scores;
};

class Oracle {
 public:
  virtual ~Oracle() = default;

  virtual std::string name() const = 0;
  virtual const LabelSet& labels() const = 0;
  virtual ImageShape input_shape() const = 0;

  // Zero-shot scores over every class for an already-normalized image.
  virtual OracleScores classify(const Image& image) const = 0;

  // Adapters with their own input statistics (e.g. CLIP) override this;
  // otherwise the pipeline normalization is used.
  virtual std::optional<Normalization> own_normalization() const { return std::nullopt; }
  virtual bool concurrent_safe() const { return true; }

  OracleVerdict judge(const Image& image, std::size_t label) const;
  bool verify(const Image& image, std::size_t label) const { return judge(image, label).accepted; }
};

}  // namespace fmr
