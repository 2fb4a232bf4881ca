#pragma once

// Test-only fixtures: the 1-D analytic setup used to replay the perturbation
// loop by hand, plus a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "fmr/interfaces.hpp"
#include "fmr/models.hpp"

namespace fmr::testing {

inline ImageShape scalar_shape() { return {1, 1, 1}; }

inline LabeledSample scalar_sample(double x, std::size_t label = 0, std::string id = "s") {
  return {std::move(id), Image(scalar_shape(), std::vector<double>{x}), label};
}

// loss = -y * x with y = -1 for label 0 and +1 for label 1, so ascent on
// label 0 pushes x upward with unit gradient.
class SlopeModel final : public EvaluatedModel {
 public:
  std::string name() const override { return "slope"; }
  ImageShape input_shape() const override { return scalar_shape(); }
  std::size_t num_classes() const override { return 2; }
  std::vector<double> predict(const Image& image) const override {
    const double x = image.data()[0];
    return {0.5 - x, x - 0.5};
  }
  double loss(const Image& image, std::size_t label) const override {
    return -sign(label) * image.data()[0];
  }
  LossAndGradient loss_gradient(const Image& image, std::size_t label) const override {
    return {loss(image, label), {-sign(label)}};
  }
  static double sign(std::size_t label) { return label == 0 ? -1.0 : 1.0; }
};

// Accepts label 0 while x <= threshold.
class ThresholdOracle final : public Oracle {
 public:
  explicit ThresholdOracle(double threshold) : threshold_(threshold), labels_({"low", "high"}) {}
  std::string name() const override { return "threshold"; }
  const LabelSet& labels() const override { return labels_; }
  ImageShape input_shape() const override { return scalar_shape(); }
  OracleScores classify(const Image& image) const override {
    const double x = image.data()[0];
    const std::size_t pred = x <= threshold_ ? 0 : 1;
    std::vector<double> scores(2, 0.0);
    scores[pred] = 1.0;
    return {pred, scores};
  }

 private:
  double threshold_;
  LabelSet labels_;
};

// Predicts the same class for every image.
class ConstantOracle final : public Oracle {
 public:
  ConstantOracle(std::size_t predicted, std::size_t num_classes, ImageShape shape)
      : predicted_(predicted), shape_(shape) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < num_classes; ++i) names.push_back("c" + std::to_string(i));
    labels_ = LabelSet(names);
  }
  std::string name() const override { return "constant"; }
  const LabelSet& labels() const override { return labels_; }
  ImageShape input_shape() const override { return shape_; }
  OracleScores classify(const Image&) const override {
    std::vector<double> s(labels_.size(), 0.0);
    s[predicted_] = 1.0;
    return {predicted_, s};
  }

 private:
  std::size_t predicted_;
  ImageShape shape_;
  LabelSet labels_;
};

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Compares `analytic` against central differences of `f` at `coords` random
// coordinates. Relative error uses max(|a|, |n|) with an absolute floor.
inline GradCheck check_gradient(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> x, std::span<const double> analytic,
                                std::size_t coords, std::uint64_t seed, double h = 1e-5,
                                double floor = 1e-6) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  GradCheck out;
  for (std::size_t k = 0; k < coords; ++k) {
    const std::size_t i = pick(rng);
    const double saved = x[i];
    x[i] = saved + h;
    const double fp = f(x);
    x[i] = saved - h;
    const double fm = f(x);
    x[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), floor});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(numeric - analytic[i]) / denom);
    ++out.checked;
  }
  return out;
}

}  // namespace fmr::testing
