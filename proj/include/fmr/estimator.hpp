#pragma once

// Monte Carlo check that a size-weighted pooled estimator built from m biased
// datasets is unbiased like the single-dataset estimator but has no larger
// variance.
//
// Dataset-level estimation errors are sampled directly:
//   mean:       mu_hat_i    = mu + e_i,      e_i ~ N(0, I)
//   covariance: sigma_hat_i = e'_i * Sigma,  e'_i ~ Exp(1)
// The single estimator uses dataset 0; the pooled estimator weights datasets
// 1..m by their sizes n_i. The covariance branch is only simulated for p = 1.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace fmr {

struct EstimatorSimConfig {
  std::size_t p = 3;                // dimension of mu
  std::vector<std::size_t> n;       // dataset sizes n_1..n_m
  std::size_t trials = 10000;
  std::uint64_t seed = 0;

  std::size_t m() const { return n.size(); }
  // Throws ConfigError.
  void validate() const;
};

// Dataset sizes drawn uniformly from [lo, hi], seeded.
std::vector<std::size_t> uniform_sizes(std::size_t m, std::size_t lo, std::size_t hi, std::uint64_t seed);

struct GroundTruthDistribution {
  std::vector<double> mu;     // length p
  std::vector<double> sigma;  // p x p row-major, symmetric PSD

  std::size_t p() const { return mu.size(); }
  // Throws ConfigError unless sigma is p x p, symmetric and PSD.
  void validate() const;
};

struct EstimatePair {
  std::vector<double> single;  // length p (or p*p for covariance)
  std::vector<double> pooled;
};

// One pair per trial, trial order.
std::vector<EstimatePair> sample_mu_estimates(const EstimatorSimConfig& config,
                                              const GroundTruthDistribution& truth);
// Requires p = 1 (ConfigError otherwise).
std::vector<EstimatePair> sample_sigma_estimates(const EstimatorSimConfig& config,
                                                 const GroundTruthDistribution& truth);

// sum n_i^2 / (sum n_i)^2: variance factor of the pooled estimator.
double pooled_variance_factor(const std::vector<std::size_t>& n);

// Per-coordinate sample moments with standard errors. With fewer than two
// trials the variances are NaN and every standard error is +infinity.
struct MomentSummary {
  std::vector<double> mean;
  std::vector<double> bias;
  std::vector<double> bias_se;
  std::vector<double> variance;
  std::vector<double> variance_se;

  bool operator==(const MomentSummary&) const = default;
};

MomentSummary summarize(const std::vector<std::vector<double>>& draws, const std::vector<double>& truth);

enum class Flag { kPass, kFail, kIndeterminate, kNotEvaluated };
const char* to_string(Flag f);

struct BranchReport {
  MomentSummary single;
  MomentSummary pooled;
  std::vector<double> pooled_variance_closed_form;
  Flag unbiased = Flag::kNotEvaluated;            // both estimators, every coordinate
  Flag variance_not_larger = Flag::kNotEvaluated;  // pooled <= single + margin, element-wise
  Flag closed_form = Flag::kNotEvaluated;         // pooled variance matches the closed form

  bool operator==(const BranchReport&) const = default;
};

struct EstimatorSimReport {
  std::size_t p = 0;
  std::size_t m = 0;
  std::size_t trials = 0;
  std::uint64_t seed = 0;
  double variance_factor = 0.0;
  BranchReport mu;
  std::optional<BranchReport> sigma;  // p = 1 only

  bool all_pass() const;
  bool operator==(const EstimatorSimReport&) const = default;
};

// Bias within 4 SE of zero; pooled variance <= single + 4 SE of the
// difference; pooled variance within 5 SE of the closed form.
inline constexpr double kBiasSigmas = 4.0;
inline constexpr double kVarianceSigmas = 4.0;
inline constexpr double kClosedFormSigmas = 5.0;

EstimatorSimReport verify_proposition(const EstimatorSimConfig& config,
                                      const GroundTruthDistribution& truth);

nlohmann::json to_json(const EstimatorSimReport& report);
std::string format_table(const EstimatorSimReport& report);

}  // namespace fmr
