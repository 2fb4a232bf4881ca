#pragma once

// Oracle-constrained counterfactual generation.
//
// For every sample the generator latent is pushed uphill on the evaluated
// model's loss one fixed-length step at a time. Each decoded iterate must
// still be recognised as the original label by the oracle; the first
// rejection rolls back to the previous accepted iterate and stops. A sample
// whose very first iterate is rejected is emitted unchanged.

#include <span>
#include <vector>

#include "fmr/interfaces.hpp"
#include "fmr/types.hpp"

namespace fmr {

// Gradients with Euclidean norm below this are treated as zero.
inline constexpr double kMinGradientNorm = 1e-12;

// latent + step_size * gradient / |gradient|; unchanged for a vanishing gradient.
std::vector<double> latent_ascent_step(std::span<const double> latent,
                                       std::span<const double> gradient, double step_size);

PerturbationOutcome perturb_sample(const LabeledSample& sample, const EvaluatedModel& model,
                                   const Generator& generator, const Oracle& oracle,
                                   const PerturbationConfig& config);

struct DatasetRun {
  std::vector<PerturbationOutcome> outcomes;  // dataset order
  EvaluationReport report;
};

// Runs perturb_sample on every sample (concurrently when every adapter allows
// it) and aggregates the metrics. Throws ConfigError on an empty dataset.
DatasetRun perturb_dataset(std::span<const LabeledSample> dataset, const EvaluatedModel& model,
                           const Generator& generator, const Oracle& oracle,
                           const PerturbationConfig& config);

// Model loss and its gradient with respect to the latent through
// model(normalize(decode(latent))).
LossAndGradient latent_loss_gradient(const LatentCode& latent, std::size_t label,
                                     const EvaluatedModel& model, const Generator& generator,
                                     const Normalization& normalization);

// Oracle check with the normalization the oracle expects.
OracleVerdict oracle_judge(const Oracle& oracle, const Image& image, std::size_t label,
                           const Normalization& pipeline_normalization);

}  // namespace fmr
