#include "fmr/sparse.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fmr/error.hpp"

namespace fmr {

void LatentClassificationDataset::validate() const {
  require(dims > 0, "latent dataset: zero dimensions");
  require(features.size() == rows() * dims, "latent dataset: feature matrix does not match rows x dims");
  std::size_t ones = 0;
  for (int l : labels) {
    require(l == 0 || l == 1, "latent dataset: labels must be 0 or 1");
    ones += static_cast<std::size_t>(l);
  }
  require(2 * ones == rows(), "latent dataset: classes are not balanced");
  for (double v : features) require(std::isfinite(v), "latent dataset: non-finite feature");
}

LatentClassificationDataset collect_latents(std::span<const PerturbationOutcome> outcomes,
                                            const Generator& generator) {
  std::vector<const PerturbationOutcome*> perturbed;
  for (const auto& o : outcomes)
    if (o.status == OutcomeStatus::kPerturbed) perturbed.push_back(&o);
  if (perturbed.empty()) throw InsufficientDataError("no PERTURBED outcomes to build a latent dataset from");

  LatentClassificationDataset data;
  data.dims = generator.latent_dim();
  for (int label : {0, 1}) {
    for (const auto* o : perturbed) {
      const auto& l = label == 0 ? o->initial_latent : o->final_latent;
      if (l.size() != data.dims)
        throw ContractViolation("sample " + o->sample_id + ": stored latent has " + std::to_string(l.size()) +
                                " dims, generator declares " + std::to_string(data.dims));
      data.features.insert(data.features.end(), l.values.begin(), l.values.end());
      data.labels.push_back(label);
    }
  }
  data.validate();
  return data;
}

double mean_form_lambda(double sum_form_lambda, std::size_t train_rows) {
  require(train_rows > 0, "mean_form_lambda: no training rows");
  return sum_form_lambda / static_cast<double>(train_rows);
}

namespace {

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) - y z, stable for large |z|
double logistic_loss(double z, int y) {
  const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  return softplus - (y == 1 ? z : 0.0);
}

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

struct Split {
  std::vector<std::size_t> train, test;
};

Split stratified_split(const std::vector<int>& labels, double train_fraction, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Split s;
  for (int cls : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto cut = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(idx.size())));
    s.train.insert(s.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(cut));
    s.test.insert(s.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(cut), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

}  // namespace

SparseSelectionResult fit_l1_logistic(const LatentClassificationDataset& data, const SparseFitOptions& options) {
  data.validate();
  if (!(options.lambda >= 0.0) || !std::isfinite(options.lambda))
    throw ConfigError("lambda must be a finite value >= 0");
  if (options.max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (!(options.train_fraction > 0.0 && options.train_fraction < 1.0))
    throw ConfigError("train_fraction must lie in (0, 1)");

  const std::size_t d = data.dims;
  const auto split = stratified_split(data.labels, options.train_fraction, options.seed);
  if (split.train.empty() || split.test.empty())
    throw InsufficientDataError("too few rows for a train/held-out split");
  const std::size_t n = split.train.size();

  SparseSelectionResult r;
  r.lambda = options.lambda;
  r.feature_mean.assign(d, 0.0);
  r.feature_scale.assign(d, 0.0);
  for (auto i : split.train) {
    const auto x = data.row(i);
    for (std::size_t k = 0; k < d; ++k) r.feature_mean[k] += x[k];
  }
  for (auto& m : r.feature_mean) m /= static_cast<double>(n);
  for (auto i : split.train) {
    const auto x = data.row(i);
    for (std::size_t k = 0; k < d; ++k) {
      const double c = x[k] - r.feature_mean[k];
      r.feature_scale[k] += c * c;
    }
  }
  for (auto& s : r.feature_scale) {
    s = std::sqrt(s / static_cast<double>(n));
    if (s == 0.0) s = 1.0;
  }

  auto standardize = [&](const std::vector<std::size_t>& rows) {
    std::vector<double> x(rows.size() * d);
    for (std::size_t r_i = 0; r_i < rows.size(); ++r_i) {
      const auto src = data.row(rows[r_i]);
      for (std::size_t k = 0; k < d; ++k) x[r_i * d + k] = (src[k] - r.feature_mean[k]) / r.feature_scale[k];
    }
    return x;
  };
  const auto x = standardize(split.train);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = data.labels[split.train[i]];

  std::vector<double> w(d, 0.0);
  double b = 0.0;
  auto margin = [&](std::size_t i) {
    double z = b;
    const double* xi = &x[i * d];
    for (std::size_t k = 0; k < d; ++k) z += w[k] * xi[k];
    return z;
  };
  auto objective = [&]() {
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) loss += logistic_loss(margin(i), y[i]);
    double l1 = 0.0;
    for (double v : w) l1 += std::abs(v);
    return loss / static_cast<double>(n) + options.lambda * l1;
  };

  // SAGA gradient table, initialised at the starting point.
  std::vector<double> table(n), avg_w(d, 0.0);
  double avg_b = 0.0, max_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    table[i] = sigmoid(margin(i)) - y[i];
    double sq = 1.0;
    for (std::size_t k = 0; k < d; ++k) {
      avg_w[k] += table[i] * x[i * d + k];
      sq += x[i * d + k] * x[i * d + k];
    }
    avg_b += table[i];
    max_sq = std::max(max_sq, sq);
  }
  for (auto& v : avg_w) v /= static_cast<double>(n);
  avg_b /= static_cast<double>(n);
  const double step = 1.0 / (3.0 * 0.25 * max_sq);
  const double inv_n = 1.0 / static_cast<double>(n);

  std::mt19937_64 rng(options.seed ^ 0x5a5a5a5aULL);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  double prev = objective();
  int rising = 0;
  for (int epoch = 0; epoch < options.max_epochs; ++epoch) {
    const auto w_start = w;
    const double b_start = b;
    std::shuffle(order.begin(), order.end(), rng);
    for (auto j : order) {
      const double g = sigmoid(margin(j)) - y[j];
      const double delta = g - table[j];
      const double* xj = &x[j * d];
      for (std::size_t k = 0; k < d; ++k)
        w[k] = soft_threshold(w[k] - step * (delta * xj[k] + avg_w[k]), step * options.lambda);
      b -= step * (delta + avg_b);
      for (std::size_t k = 0; k < d; ++k) avg_w[k] += delta * xj[k] * inv_n;
      avg_b += delta * inv_n;
      table[j] = g;
    }
    const double obj = objective();
    if (!std::isfinite(obj)) throw SolverError("SAGA: objective became non-finite at epoch " + std::to_string(epoch + 1));
    r.objective_history.push_back(obj);
    r.epochs = epoch + 1;
    rising = obj > prev + options.tolerance * std::max(1.0, std::abs(prev)) ? rising + 1 : 0;
    if (rising >= 3)
      throw SolverError("SAGA diverged: objective rose for 3 consecutive epochs (last " + std::to_string(prev) +
                        " -> " + std::to_string(obj) + ", step " + std::to_string(step) + ")");
    prev = obj;
    double change = std::abs(b - b_start);
    for (std::size_t k = 0; k < d; ++k) change = std::max(change, std::abs(w[k] - w_start[k]));
    if (change < options.tolerance) {
      r.converged = true;
      break;
    }
  }

  std::vector<std::size_t> selected;
  for (std::size_t k = 0; k < d; ++k) {
    if (std::abs(w[k]) < kZeroWeight) w[k] = 0.0;
    else selected.push_back(k);
  }
  r.weights = w;
  r.intercept = b;
  r.mask = SparseMask(selected, d);
  r.sparsity = 100.0 * static_cast<double>(d - selected.size()) / static_cast<double>(d);

  auto accuracy = [&](const std::vector<std::size_t>& rows) {
    const auto xs = standardize(rows);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      double z = b;
      for (std::size_t k = 0; k < d; ++k) z += w[k] * xs[i * d + k];
      ok += static_cast<std::size_t>((z > 0.0 ? 1 : 0) == data.labels[rows[i]]);
    }
    return 100.0 * static_cast<double>(ok) / static_cast<double>(rows.size());
  };
  r.train_score = accuracy(split.train);
  r.heldout_score = accuracy(split.test);
  return r;
}

SparsityRow report_sparsity(const SparseSelectionResult& result) {
  return {result.dataset_name, result.sparsity, result.heldout_score};
}

LatentClassificationDataset synthetic_latents(std::size_t dims, const std::vector<std::size_t>& shifted_dims,
                                              double shift, std::size_t n, std::uint64_t seed) {
  for (auto k : shifted_dims) require(k < dims, "synthetic_latents: shifted dim out of range");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  LatentClassificationDataset data;
  data.dims = dims;
  data.features.reserve(2 * n * dims);
  for (int label : {0, 1}) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t start = data.features.size();
      for (std::size_t k = 0; k < dims; ++k) data.features.push_back(normal(rng));
      if (label == 1)
        for (auto k : shifted_dims) data.features[start + k] += shift;
      data.labels.push_back(label);
    }
  }
  return data;
}

nlohmann::json SparseSelectionResult::to_json() const {
  return {{"kind", "sparse-selection"},
          {"version", 1},
          {"generator", generator_name},
          {"dataset", dataset_name},
          {"lambda", lambda},
          {"weights", weights},
          {"intercept", intercept},
          {"mask", mask.selected()},
          {"total_dims", mask.total_dims()},
          {"sparsity", sparsity},
          {"heldout_score", heldout_score},
          {"train_score", train_score},
          {"feature_mean", feature_mean},
          {"feature_scale", feature_scale},
          {"objective_history", objective_history},
          {"epochs", epochs},
          {"converged", converged}};
}

SparseSelectionResult SparseSelectionResult::from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "sparse-selection" || j.value("version", 0) != 1)
    throw ConfigError("not a sparse-selection result file");
  try {
    SparseSelectionResult r;
    r.generator_name = j.at("generator").get<std::string>();
    r.dataset_name = j.at("dataset").get<std::string>();
    r.lambda = j.at("lambda").get<double>();
    r.weights = j.at("weights").get<std::vector<double>>();
    r.intercept = j.at("intercept").get<double>();
    r.mask = SparseMask(j.at("mask").get<std::vector<std::size_t>>(), j.at("total_dims").get<std::size_t>());
    r.sparsity = j.at("sparsity").get<double>();
    r.heldout_score = j.at("heldout_score").get<double>();
    r.train_score = j.value("train_score", 0.0);
    r.feature_mean = j.at("feature_mean").get<std::vector<double>>();
    r.feature_scale = j.at("feature_scale").get<std::vector<double>>();
    r.objective_history = j.value("objective_history", std::vector<double>{});
    r.epochs = j.value("epochs", 0);
    r.converged = j.value("converged", false);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("sparse-selection result: ") + e.what());
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("sparse-selection result: ") + e.what());
  }
}

SparseMask load_mask(const nlohmann::json& result_json, const Generator& generator) {
  const auto r = SparseSelectionResult::from_json(result_json);
  if (r.generator_name != generator.name())
    throw ConfigError("mask was fitted for generator '" + r.generator_name + "', run uses '" + generator.name() + "'");
  if (r.mask.total_dims() != generator.latent_dim())
    throw ConfigError("mask covers " + std::to_string(r.mask.total_dims()) + " latent dims, generator has " +
                      std::to_string(generator.latent_dim()));
  return r.mask;
}

}  // namespace fmr
