#include "fmr/estimator.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "fmr/error.hpp"
#include "fmr/kernels.hpp"

namespace fmr {

namespace {

// Independent stream per (seed, trial, branch).
std::mt19937_64 trial_rng(std::uint64_t seed, std::size_t trial, std::uint32_t branch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(trial), static_cast<std::uint32_t>(std::uint64_t(trial) >> 32),
                    branch};
  return std::mt19937_64(seq);
}

double total(const std::vector<std::size_t>& n) {
  double s = 0.0;
  for (auto v : n) s += static_cast<double>(v);
  return s;
}

Flag all_of(const std::vector<bool>& ok, bool determinate) {
  if (!determinate) return Flag::kIndeterminate;
  for (bool b : ok)
    if (!b) return Flag::kFail;
  return Flag::kPass;
}

BranchReport compare(const std::vector<EstimatePair>& pairs, const std::vector<double>& truth,
                     const std::vector<double>& closed_form) {
  std::vector<std::vector<double>> single, pooled;
  single.reserve(pairs.size());
  pooled.reserve(pairs.size());
  for (const auto& p : pairs) {
    single.push_back(p.single);
    pooled.push_back(p.pooled);
  }
  BranchReport r;
  r.single = summarize(single, truth);
  r.pooled = summarize(pooled, truth);
  r.pooled_variance_closed_form = closed_form;

  const bool determinate = pairs.size() >= 2;
  std::vector<bool> unbiased, smaller, matches;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    unbiased.push_back(std::abs(r.single.bias[k]) <= kBiasSigmas * r.single.bias_se[k]);
    unbiased.push_back(std::abs(r.pooled.bias[k]) <= kBiasSigmas * r.pooled.bias_se[k]);
    const double se_diff = std::hypot(r.single.variance_se[k], r.pooled.variance_se[k]);
    smaller.push_back(r.pooled.variance[k] <= r.single.variance[k] + kVarianceSigmas * se_diff);
    matches.push_back(std::abs(r.pooled.variance[k] - closed_form[k]) <=
                      kClosedFormSigmas * r.pooled.variance_se[k]);
  }
  r.unbiased = all_of(unbiased, determinate);
  r.variance_not_larger = all_of(smaller, determinate);
  r.closed_form = all_of(matches, determinate);
  return r;
}

}  // namespace

void EstimatorSimConfig::validate() const {
  if (p < 1) throw ConfigError("estimator simulation: p must be >= 1");
  if (n.empty()) throw ConfigError("estimator simulation: need at least one dataset (m >= 1)");
  for (auto v : n)
    if (v < 1) throw ConfigError("estimator simulation: dataset sizes must be >= 1");
  if (trials < 1) throw ConfigError("estimator simulation: trials must be >= 1");
}

std::vector<std::size_t> uniform_sizes(std::size_t m, std::size_t lo, std::size_t hi, std::uint64_t seed) {
  if (lo < 1 || hi < lo) throw ConfigError("dataset size range must satisfy 1 <= lo <= hi");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> d(lo, hi);
  std::vector<std::size_t> n(m);
  for (auto& v : n) v = d(rng);
  return n;
}

void GroundTruthDistribution::validate() const {
  const std::size_t d = p();
  if (d == 0) throw ConfigError("ground truth: empty mean vector");
  if (sigma.size() != d * d) throw ConfigError("ground truth: sigma must be p x p");
  Eigen::MatrixXd s(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      if (!std::isfinite(sigma[i * d + j])) throw ConfigError("ground truth: non-finite sigma");
      if (sigma[i * d + j] != sigma[j * d + i]) throw ConfigError("ground truth: sigma is not symmetric");
      s(i, j) = sigma[i * d + j];
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  const double tol = 1e-12 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -tol) throw ConfigError("ground truth: sigma is not positive semidefinite");
}

double pooled_variance_factor(const std::vector<std::size_t>& n) {
  double sq = 0.0;
  for (auto v : n) sq += static_cast<double>(v) * static_cast<double>(v);
  const double s = total(n);
  return sq / (s * s);
}

std::vector<EstimatePair> sample_mu_estimates(const EstimatorSimConfig& config,
                                              const GroundTruthDistribution& truth) {
  config.validate();
  truth.validate();
  if (truth.p() != config.p) throw ConfigError("ground truth dimension does not match p");
  const std::size_t p = config.p;
  const double denom = total(config.n);
  std::vector<EstimatePair> out(config.trials);
  kernels::for_each_index(config.trials, [&](std::size_t t) {
    auto rng = trial_rng(config.seed, t, 1);
    std::normal_distribution<double> normal;
    EstimatePair e{truth.mu, truth.mu};
    for (std::size_t k = 0; k < p; ++k) e.single[k] += normal(rng);
    std::vector<double> acc(p, 0.0);
    for (std::size_t i = 0; i < config.m(); ++i) {
      const double ni = static_cast<double>(config.n[i]);
      for (std::size_t k = 0; k < p; ++k) acc[k] += normal(rng) * ni;
    }
    for (std::size_t k = 0; k < p; ++k) e.pooled[k] += acc[k] / denom;
    out[t] = std::move(e);
  });
  return out;
}

std::vector<EstimatePair> sample_sigma_estimates(const EstimatorSimConfig& config,
                                                 const GroundTruthDistribution& truth) {
  config.validate();
  truth.validate();
  if (config.p != 1 || truth.p() != 1)
    throw ConfigError("covariance branch is only defined for p = 1");
  const double sigma = truth.sigma[0];
  const double denom = total(config.n);
  std::vector<EstimatePair> out(config.trials);
  kernels::for_each_index(config.trials, [&](std::size_t t) {
    auto rng = trial_rng(config.seed, t, 2);
    std::exponential_distribution<double> expo(1.0);
    const double single = expo(rng) * sigma;
    // Pooling the within-dataset squared deviations weights each dataset's
    // estimate by its size, so the pooled error factor is sum(n_i e'_i) / sum(n_i).
    double acc = 0.0;
    for (std::size_t i = 0; i < config.m(); ++i) acc += static_cast<double>(config.n[i]) * expo(rng);
    out[t] = {{single}, {acc / denom * sigma}};
  });
  return out;
}

MomentSummary summarize(const std::vector<std::vector<double>>& draws, const std::vector<double>& truth) {
  const std::size_t d = truth.size();
  const double n = static_cast<double>(draws.size());
  const double inf = std::numeric_limits<double>::infinity();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  MomentSummary s;
  s.mean.assign(d, 0.0);
  for (const auto& x : draws)
    for (std::size_t k = 0; k < d; ++k) s.mean[k] += x[k];
  for (auto& v : s.mean) v /= n;
  for (std::size_t k = 0; k < d; ++k) s.bias.push_back(s.mean[k] - truth[k]);

  if (draws.size() < 2) {
    s.bias_se.assign(d, inf);
    s.variance.assign(d, nan);
    s.variance_se.assign(d, inf);
    return s;
  }
  std::vector<double> m2(d, 0.0), m4(d, 0.0);
  for (const auto& x : draws)
    for (std::size_t k = 0; k < d; ++k) {
      const double c = x[k] - s.mean[k];
      m2[k] += c * c;
      m4[k] += c * c * c * c;
    }
  for (std::size_t k = 0; k < d; ++k) {
    const double var = m2[k] / (n - 1.0);
    const double mu4 = m4[k] / n, mu2 = m2[k] / n;
    s.variance.push_back(var);
    s.bias_se.push_back(std::sqrt(var / n));
    s.variance_se.push_back(std::sqrt(std::max(0.0, mu4 - mu2 * mu2) / n));
  }
  return s;
}

const char* to_string(Flag f) {
  switch (f) {
    case Flag::kPass: return "pass";
    case Flag::kFail: return "fail";
    case Flag::kIndeterminate: return "indeterminate";
    case Flag::kNotEvaluated: return "not-evaluated";
  }
  return "?";
}

bool EstimatorSimReport::all_pass() const {
  auto ok = [](const BranchReport& b) {
    return b.unbiased == Flag::kPass && b.variance_not_larger == Flag::kPass && b.closed_form == Flag::kPass;
  };
  return ok(mu) && (!sigma || ok(*sigma));
}

EstimatorSimReport verify_proposition(const EstimatorSimConfig& config, const GroundTruthDistribution& truth) {
  EstimatorSimReport r;
  r.p = config.p;
  r.m = config.m();
  r.trials = config.trials;
  r.seed = config.seed;
  const auto mu_pairs = sample_mu_estimates(config, truth);
  r.variance_factor = pooled_variance_factor(config.n);
  r.mu = compare(mu_pairs, truth.mu, std::vector<double>(config.p, r.variance_factor));
  if (config.p == 1) {
    const double s = truth.sigma[0];
    r.sigma = compare(sample_sigma_estimates(config, truth), {s}, {s * s * r.variance_factor});
  }
  return r;
}

namespace {

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

nlohmann::json vec_json(const std::vector<double>& v) {
  auto j = nlohmann::json::array();
  for (double x : v) j.push_back(number_or_null(x));
  return j;
}

nlohmann::json moments_json(const MomentSummary& m) {
  return {{"mean", vec_json(m.mean)},
          {"bias", vec_json(m.bias)},
          {"bias_se", vec_json(m.bias_se)},
          {"variance", vec_json(m.variance)},
          {"variance_se", vec_json(m.variance_se)}};
}

nlohmann::json branch_json(const BranchReport& b) {
  return {{"single", moments_json(b.single)},
          {"pooled", moments_json(b.pooled)},
          {"pooled_variance_closed_form", vec_json(b.pooled_variance_closed_form)},
          {"flags",
           {{"unbiased", to_string(b.unbiased)},
            {"variance_not_larger", to_string(b.variance_not_larger)},
            {"closed_form", to_string(b.closed_form)}}}};
}

void table_rows(std::ostringstream& os, const std::string& name, const BranchReport& b) {
  for (std::size_t k = 0; k < b.single.mean.size(); ++k) {
    os << "| " << name << "[" << k << "] | " << b.single.bias[k] << " ± " << b.single.bias_se[k] << " | "
       << b.pooled.bias[k] << " ± " << b.pooled.bias_se[k] << " | " << b.single.variance[k] << " | "
       << b.pooled.variance[k] << " ± " << b.pooled.variance_se[k] << " | "
       << b.pooled_variance_closed_form[k] << " |\n";
  }
  os << "\n" << name << ": unbiased " << to_string(b.unbiased) << ", pooled variance not larger "
     << to_string(b.variance_not_larger) << ", closed form " << to_string(b.closed_form) << "\n\n";
}

}  // namespace

nlohmann::json to_json(const EstimatorSimReport& r) {
  nlohmann::json j{{"p", r.p},
                   {"m", r.m},
                   {"trials", r.trials},
                   {"seed", r.seed},
                   {"variance_factor", r.variance_factor},
                   {"mu", branch_json(r.mu)},
                   {"sigma", r.sigma ? branch_json(*r.sigma) : nlohmann::json()},
                   {"all_pass", r.all_pass()}};
  if (!r.sigma) j["sigma_note"] = "covariance branch simulated only for p = 1";
  return j;
}

std::string format_table(const EstimatorSimReport& r) {
  std::ostringstream os;
  os.precision(5);
  os << "p=" << r.p << " m=" << r.m << " trials=" << r.trials << " seed=" << r.seed
     << " sum(n^2)/sum(n)^2=" << r.variance_factor << "\n\n";
  os << "| estimate | single bias | pooled bias | single var | pooled var | closed form |\n";
  os << "|---|---|---|---|---|---|\n";
  table_rows(os, "mu", r.mu);
  if (r.sigma) {
    os << "| estimate | single bias | pooled bias | single var | pooled var | closed form |\n";
    os << "|---|---|---|---|---|---|\n";
    table_rows(os, "sigma", *r.sigma);
  } else {
    os << "sigma: not evaluated (p > 1)\n";
  }
  return os.str();
}

}  // namespace fmr
