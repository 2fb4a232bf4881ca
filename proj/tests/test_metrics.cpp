#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "fmr/error.hpp"
#include "fmr/generator.hpp"
#include "fmr/metrics.hpp"

using namespace fmr;
using namespace fmr::testing;

namespace {

PerturbationOutcome outcome(OutcomeStatus s, double x, std::size_t label = 0) {
  PerturbationOutcome o;
  o.status = s;
  o.label = label;
  o.final_image = Image(scalar_shape(), std::vector<double>{x});
  return o;
}

}  // namespace

TEST_CASE("standard_accuracy: all, none and three of four") {
  SlopeModel model;  // predicts class 0 for x < 0.5, class 1 above
  std::vector<LabeledSample> all{scalar_sample(0.1, 0), scalar_sample(0.9, 1)};
  CHECK(standard_accuracy(model, all) == 100.0);
  std::vector<LabeledSample> none{scalar_sample(0.1, 1), scalar_sample(0.9, 0)};
  CHECK(standard_accuracy(model, none) == 0.0);
  // predictions: 0, 0, 1, 1 against labels 0, 1, 1, 1
  std::vector<LabeledSample> four{scalar_sample(0.1, 0), scalar_sample(0.2, 1), scalar_sample(0.8, 1),
                                  scalar_sample(0.9, 1)};
  CHECK(standard_accuracy(model, four) == 75.0);
  CHECK_THROWS_AS(standard_accuracy(model, std::vector<LabeledSample>{}), ConfigError);
}

TEST_CASE("perturbed_accuracy: denominator is the perturbed subset") {
  SlopeModel model;
  std::vector<PerturbationOutcome> ok{outcome(OutcomeStatus::kPerturbed, 0.2),
                                      outcome(OutcomeStatus::kPerturbed, 0.3)};
  CHECK(*perturbed_accuracy(model, ok) == 100.0);

  std::vector<PerturbationOutcome> kept{outcome(OutcomeStatus::kOriginalKept, 0.9),
                                        outcome(OutcomeStatus::kOriginalKept, 0.1)};
  CHECK_FALSE(perturbed_accuracy(model, kept).has_value());

  // five perturbed images, two of them pushed past 0.5 (prediction flips)
  std::vector<PerturbationOutcome> mixed{
      outcome(OutcomeStatus::kPerturbed, 0.1), outcome(OutcomeStatus::kPerturbed, 0.2),
      outcome(OutcomeStatus::kPerturbed, 0.3), outcome(OutcomeStatus::kPerturbed, 0.6),
      outcome(OutcomeStatus::kPerturbed, 0.7), outcome(OutcomeStatus::kOriginalKept, 0.9)};
  CHECK(*perturbed_accuracy(model, mixed) == 60.0);
}

TEST_CASE("validation_rate") {
  std::vector<PerturbationOutcome> v;
  for (int i = 0; i < 150; ++i)
    v.push_back(outcome(i < 143 ? OutcomeStatus::kPerturbed : OutcomeStatus::kOriginalKept, 0.1));
  CHECK(format_percent(validation_rate(v)) == "95.33");

  std::vector<PerturbationOutcome> all(9, outcome(OutcomeStatus::kPerturbed, 0.1));
  CHECK(format_percent(validation_rate(all)) == "100.00");

  std::vector<PerturbationOutcome> kept(4, outcome(OutcomeStatus::kOriginalKept, 0.1));
  CHECK(validation_rate(kept) == 0.0);

  // aborted samples leave the denominator
  std::vector<PerturbationOutcome> ab{outcome(OutcomeStatus::kPerturbed, 0.1),
                                      outcome(OutcomeStatus::kAborted, 0.1)};
  CHECK(validation_rate(ab) == 100.0);
}

TEST_CASE("fmr: printed table rows") {
  CHECK(format_percent(fmr::fmr(33.15, 76.26)) == "43.47");
  CHECK(format_percent(fmr::fmr(27.78, 99.09)) == "28.04");
  // remaining rows: {SA, PA, FMR}
  const double rows[][3] = {{95.38, 52.34, 54.88}, {92.30, 27.95, 30.28}, {82.40, 41.65, 50.55},
                            {78.57, 43.25, 55.05}, {80.53, 48.52, 60.25}, {79.88, 47.82, 59.87},
                            {81.67, 56.95, 69.73}, {82.05, 47.68, 58.11}};
  for (const auto& r : rows) CHECK(std::abs(fmr::fmr(r[1], r[0]) - r[2]) <= 0.01);
  CHECK(fmr::fmr(50.0, 50.0) == 100.0);
  CHECK_THROWS_AS(fmr::fmr(10.0, 0.0), UndefinedMetricError);
}

TEST_CASE("fmr: scale consistency (property)") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.01, 100.0), k(0.01, 50.0);
  for (int i = 0; i < 500; ++i) {
    const double pa = u(rng), sa = u(rng), s = k(rng);
    CHECK(fmr::fmr(s * pa, s * sa) == doctest::Approx(fmr::fmr(pa, sa)).epsilon(1e-12));
  }
}

TEST_CASE("format_percent: round half to even at two decimals") {
  CHECK(format_percent(12.125) == "12.12");
  CHECK(format_percent(12.375) == "12.38");
  CHECK(format_percent(100.0) == "100.00");
  CHECK(format_percent(std::optional<double>{}) == "undefined");
}

TEST_CASE("build_report: per-class counts reconstruct a 9-class table") {
  // Per-class (samples, clean correct, perturbed, perturbed correct) with 150
  // images per class, chosen so the printed percentages come out.
  struct Row {
    const char* name;
    int clean, pert, pert_ok;
    double sa, vr, fmr;
  };
  const Row rows[] = {
      {"Dog", 140, 143, 24, 93.33, 95.33, 17.98},    {"Cat", 145, 141, 43, 96.67, 94.00, 31.55},
      {"Frog", 128, 121, 21, 85.33, 80.67, 20.34},   {"Turtle", 127, 118, 29, 84.67, 78.67, 29.03},
      {"Bird", 137, 144, 37, 91.33, 96.00, 28.13},   {"Primate", 144, 72, 43, 96.00, 48.00, 62.21},
      {"Fish", 141, 115, 49, 94.00, 76.67, 45.33},   {"Crab", 144, 131, 25, 96.00, 87.33, 19.87},
      {"Insect", 140, 117, 37, 93.33, 78.00, 33.88},
  };
  std::vector<std::string> names;
  std::vector<SampleFacts> facts;
  for (std::size_t c = 0; c < 9; ++c) {
    names.push_back(rows[c].name);
    for (int i = 0; i < 150; ++i) {
      SampleFacts f;
      f.id = std::string(rows[c].name) + std::to_string(i);
      f.label = c;
      f.clean_prediction = i < rows[c].clean ? c : (c + 1) % 9;
      if (i < rows[c].pert) {
        f.status = OutcomeStatus::kPerturbed;
        f.final_prediction = i < rows[c].pert_ok ? c : (c + 1) % 9;
      }
      facts.push_back(f);
    }
  }
  const auto r = build_report(facts, LabelSet(names), "ResNet-18", "fp");
  for (std::size_t c = 0; c < 9; ++c) {
    CHECK(round_percent(r.per_class[c].standard_accuracy) == doctest::Approx(rows[c].sa));
    CHECK(round_percent(r.per_class[c].validation_rate) == doctest::Approx(rows[c].vr));
    CHECK(std::abs(round_percent(*r.per_class[c].fmr) - rows[c].fmr) <= 0.01 + 1e-9);
  }
  CHECK(format_percent(r.standard_accuracy) == "92.30");
  CHECK(format_percent(r.validation_rate) == "81.63");
  CHECK(format_percent(r.perturbed_accuracy) == "27.95");
  CHECK(format_percent(r.fmr) == "30.28");

  // sample-weighted per-class SA equals the overall SA
  double weighted = 0.0;
  for (const auto& c : r.per_class) weighted += c.standard_accuracy * static_cast<double>(c.samples);
  weighted /= static_cast<double>(r.counts.total);
  CHECK(std::abs(weighted - r.standard_accuracy) <= 1e-9 * r.standard_accuracy);
}

TEST_CASE("build_report: aborted samples are flagged and excluded from VR and PA") {
  std::vector<SampleFacts> facts{
      {"a", 0, 0, OutcomeStatus::kPerturbed, 0},
      {"b", 0, 0, OutcomeStatus::kAborted, std::nullopt},
      {"c", 1, 0, OutcomeStatus::kOriginalKept, std::nullopt},
  };
  const auto r = build_report(facts, LabelSet({"x", "y"}), "m", "");
  CHECK(r.counts.aborted == 1);
  CHECK(r.aborted_ids == std::vector<std::string>{"b"});
  CHECK(r.validation_rate == 50.0);
  CHECK(*r.perturbed_accuracy == 100.0);
  CHECK(r.standard_accuracy == doctest::Approx(200.0 / 3.0));
}

TEST_CASE("build_report: rebuilding from the same facts is bit-exact") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> lab(0, 3), st(0, 2);
  std::vector<SampleFacts> facts;
  for (int i = 0; i < 300; ++i) {
    SampleFacts f{"s" + std::to_string(i), lab(rng), lab(rng), static_cast<OutcomeStatus>(st(rng)), std::nullopt};
    if (f.status == OutcomeStatus::kPerturbed) f.final_prediction = lab(rng);
    facts.push_back(f);
  }
  const LabelSet labels({"a", "b", "c", "d"});
  CHECK(build_report(facts, labels, "m", "x") == build_report(facts, labels, "m", "x"));
}
