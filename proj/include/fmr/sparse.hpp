#pragma once

// Finds the latent dimensions that separate original latents from perturbed
// ones with an L1-penalised logistic regression, and turns the surviving
// coordinates into a SparseMask for masked ascent.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmr/interfaces.hpp"
#include "fmr/types.hpp"

namespace fmr {

// 2n rows: n original latents (label 0) followed by n perturbed latents (label 1).
struct LatentClassificationDataset {
  std::size_t dims = 0;
  std::vector<double> features;  // row-major [rows x dims]
  std::vector<int> labels;

  std::size_t rows() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const { return {features.data() + i * dims, dims}; }
  // Throws ContractViolation on shape mismatch, non-finite values or unbalanced labels.
  void validate() const;
};

// Uses initial/final latents of PERTURBED outcomes. Throws
// InsufficientDataError when there are none.
LatentClassificationDataset collect_latents(std::span<const PerturbationOutcome> outcomes,
                                            const Generator& generator);

struct SparseFitOptions {
  double lambda = 0.0;  // penalty on the mean-loss objective
  int max_epochs = 300;
  double tolerance = 1e-6;     // max parameter change over an epoch
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

// Converts a penalty written for the summed loss, sum_i loss_i + lambda |w|_1,
// into the equivalent penalty on the mean loss.
double mean_form_lambda(double sum_form_lambda, std::size_t train_rows);

inline constexpr double kZeroWeight = 1e-8;

struct SparseSelectionResult {
  std::vector<double> weights;  // standardized-feature coefficients, length dims
  double intercept = 0.0;
  double lambda = 0.0;
  SparseMask mask;              // |w_i| >= kZeroWeight
  double sparsity = 0.0;        // percent of zero weights
  double heldout_score = 0.0;   // percent accuracy on the held-out split
  double train_score = 0.0;
  std::vector<double> feature_mean;   // standardization, training split
  std::vector<double> feature_scale;
  std::vector<double> objective_history;  // per epoch
  int epochs = 0;
  bool converged = false;
  std::string generator_name;
  std::string dataset_name;

  nlohmann::json to_json() const;
  static SparseSelectionResult from_json(const nlohmann::json& j);
};

// Proximal SAGA on mean logistic loss + lambda * |w|_1 with an unpenalised
// intercept, after standardizing columns on a seeded, stratified train split.
// Throws SolverError when the objective rises three epochs in a row.
SparseSelectionResult fit_l1_logistic(const LatentClassificationDataset& data, const SparseFitOptions& options);

struct SparsityRow {
  std::string dataset;
  double sparsity = 0.0;
  double heldout_score = 0.0;
};

SparsityRow report_sparsity(const SparseSelectionResult& result);

// Gaussian latents where the perturbed half is shifted by `shift` standard
// deviations along `shifted_dims` only. n rows per class.
LatentClassificationDataset synthetic_latents(std::size_t dims, const std::vector<std::size_t>& shifted_dims,
                                              double shift, std::size_t n, std::uint64_t seed);

// Mask stored in a result file; checks the generator and latent size so a
// mask is never applied to a different generator by accident.
SparseMask load_mask(const nlohmann::json& result_json, const Generator& generator);

}  // namespace fmr
