#include <doctest.h>

#include <set>

#include "fixtures.hpp"
#include "fmr/error.hpp"
#include "fmr/generator.hpp"
#include "fmr/protocol.hpp"
#include "fmr/sparse.hpp"

using namespace fmr;
using namespace fmr::testing;

namespace {

PerturbationOutcome latent_outcome(OutcomeStatus s, std::vector<double> init, std::vector<double> fin) {
  PerturbationOutcome o;
  o.status = s;
  o.initial_latent = {std::move(init), {}};
  o.final_latent = {std::move(fin), {}};
  return o;
}

}  // namespace

TEST_CASE("collect_latents: balanced rows in original-then-perturbed order") {
  PixelGenerator gen({1, 2, 1});
  std::vector<PerturbationOutcome> outs{
      latent_outcome(OutcomeStatus::kPerturbed, {0.1, 0.2}, {0.3, 0.2}),
      latent_outcome(OutcomeStatus::kOriginalKept, {0.5, 0.5}, {0.5, 0.5}),
      latent_outcome(OutcomeStatus::kPerturbed, {0.4, 0.1}, {0.6, 0.1}),
      latent_outcome(OutcomeStatus::kPerturbed, {0.7, 0.9}, {0.8, 0.9}),
  };
  const auto d = collect_latents(outs, gen);
  CHECK(d.rows() == 6);
  CHECK(d.labels == std::vector<int>{0, 0, 0, 1, 1, 1});
  CHECK(d.features == std::vector<double>{0.1, 0.2, 0.4, 0.1, 0.7, 0.9, 0.3, 0.2, 0.6, 0.1, 0.8, 0.9});

  std::vector<PerturbationOutcome> none{latent_outcome(OutcomeStatus::kOriginalKept, {0, 0}, {0, 0})};
  CHECK_THROWS_AS(collect_latents(none, gen), InsufficientDataError);
}

TEST_CASE("collect_latents: 1-D fixture replay gives a readable design") {
  SlopeModel model;
  ThresholdOracle oracle(0.75);
  PixelGenerator gen(scalar_shape());
  PerturbationConfig cfg;
  cfg.step_size = 0.1;
  std::vector<PerturbationOutcome> outs;
  for (double x : {0.5, 0.6}) outs.push_back(perturb_sample(scalar_sample(x, 0), model, gen, oracle, cfg));
  const auto d = collect_latents(outs, gen);
  REQUIRE(d.rows() == 4);
  // 0.5 climbs to 0.7, 0.6 climbs to 0.7 as well (0.8 is rejected)
  CHECK(d.features[0] == 0.5);
  CHECK(d.features[1] == 0.6);
  CHECK(d.features[2] == doctest::Approx(0.7));
  CHECK(d.features[3] == doctest::Approx(0.7));
}

TEST_CASE("fit_l1_logistic: huge lambda zeroes everything") {
  const auto data = synthetic_latents(20, {0, 1}, 3.0, 100, 1);
  const auto r = fit_l1_logistic(data, {.lambda = 1e3});
  CHECK(r.mask.count() == 0);
  CHECK(r.sparsity == 100.0);
  for (double w : r.weights) CHECK(w == 0.0);
}

TEST_CASE("fit_l1_logistic: lambda 0 separates linearly separable 2-D data") {
  LatentClassificationDataset data;
  data.dims = 2;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int label : {0, 1})
    for (int i = 0; i < 100; ++i) {
      double a = u(rng), b = u(rng);
      // brute-force separability: class 1 lies strictly above a + b = 0.2, class 0 below -0.2
      const double s = a + b;
      if (label == 1 && s < 0.2) b += 0.2 - s + 0.05;
      if (label == 0 && s > -0.2) b -= s + 0.2 + 0.05;
      data.features.push_back(a);
      data.features.push_back(b);
      data.labels.push_back(label);
    }
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const double s = data.features[2 * i] + data.features[2 * i + 1];
    REQUIRE((data.labels[i] == 1 ? s > 0.2 : s < -0.2));
  }
  const auto r = fit_l1_logistic(data, {.lambda = 0.0, .max_epochs = 500});
  CHECK(r.heldout_score == 100.0);
}

TEST_CASE("fit_l1_logistic: recovers shifted dims on synthetic latents") {
  const std::vector<std::size_t> truth{7, 100, 211, 333, 480};
  const auto data = synthetic_latents(512, truth, 3.0, 2000, 17);
  const auto r = fit_l1_logistic(data, {.lambda = 0.05, .seed = 2});
  for (auto k : truth) CHECK(r.mask.contains(k));
  CHECK(r.mask.count() <= 25);  // 5% of 512, rounded down
  CHECK(r.heldout_score >= 95.0);
}

TEST_CASE("fit_l1_logistic: mask matches nonzero weights; objective non-increasing") {
  const auto data = synthetic_latents(40, {3, 9}, 1.0, 300, 5);
  const auto r = fit_l1_logistic(data, {.lambda = 0.01, .seed = 4});
  for (std::size_t k = 0; k < 40; ++k) CHECK(r.mask.contains(k) == (r.weights[k] != 0.0));
  CHECK(r.sparsity == doctest::Approx(100.0 * (40 - r.mask.count()) / 40.0));
  for (std::size_t e = 1; e < r.objective_history.size(); ++e)
    CHECK(r.objective_history[e] <= r.objective_history[e - 1] + 1e-6);
}

TEST_CASE("fit_l1_logistic: sparsity monotone in lambda (property)") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto data = synthetic_latents(64, {1, 2, 3}, 1.5, 300, seed);
    double prev = -1.0;
    for (double lam : {0.001, 0.005, 0.02, 0.05, 0.2}) {
      const auto r = fit_l1_logistic(data, {.lambda = lam, .seed = seed});
      CHECK(r.sparsity + 1.0 >= prev);
      prev = r.sparsity;
    }
  }
}

TEST_CASE("fit_l1_logistic: seeded determinism and argument checks") {
  const auto data = synthetic_latents(16, {0}, 2.0, 80, 9);
  const auto a = fit_l1_logistic(data, {.lambda = 0.01, .seed = 1});
  const auto b = fit_l1_logistic(data, {.lambda = 0.01, .seed = 1});
  CHECK(a.weights == b.weights);
  CHECK(a.heldout_score == b.heldout_score);
  CHECK_THROWS_AS(fit_l1_logistic(data, {.lambda = -1.0}), ConfigError);
  CHECK_THROWS_AS(fit_l1_logistic(data, {.lambda = 0.1, .max_epochs = 0}), ConfigError);
}

TEST_CASE("mean_form_lambda") {
  CHECK(mean_form_lambda(36.36, 3600) == doctest::Approx(0.0101));
  CHECK_THROWS_AS(mean_form_lambda(1.0, 0), ContractViolation);
}

TEST_CASE("result JSON round trip, report row and mask loading") {
  const auto data = synthetic_latents(8, {2}, 3.0, 60, 3);
  auto r = fit_l1_logistic(data, {.lambda = 0.02});
  r.generator_name = "pixel";
  r.dataset_name = "toy";
  const auto back = SparseSelectionResult::from_json(r.to_json());
  CHECK(back.weights == r.weights);
  CHECK(back.mask == r.mask);
  const auto row = report_sparsity(back);
  CHECK(row.dataset == "toy");
  CHECK(row.sparsity == r.sparsity);
  CHECK(row.heldout_score == r.heldout_score);

  CHECK(load_mask(r.to_json(), PixelGenerator({2, 4, 1})) == r.mask);
  CHECK_THROWS_AS(load_mask(r.to_json(), PixelGenerator({3, 3, 1})), ConfigError);
}
