#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fmr/interfaces.hpp"
#include "fmr/types.hpp"

namespace fmr {

// Percent of samples whose argmax prediction matches the label.
double standard_accuracy(const EvaluatedModel& model, std::span<const LabeledSample> dataset,
                         const Normalization& normalization = {});

// Accuracy over PERTURBED outcomes only; nullopt when there are none.
std::optional<double> perturbed_accuracy(const EvaluatedModel& model,
                                         std::span<const PerturbationOutcome> outcomes,
                                         const Normalization& normalization = {});

// Percent PERTURBED among outcomes that were not aborted.
double validation_rate(std::span<const PerturbationOutcome> outcomes);

// 100 * pa / sa. Throws UndefinedMetricError when sa is not positive.
double fmr(double pa, double sa);

// Two-decimal value with ties rounded to even.
double round_percent(double value);
std::string format_percent(double value);
std::string format_percent(const std::optional<double>& value);  // "undefined" for nullopt

// Everything the report needs about one sample; persisted per record so a
// report can be rebuilt from disk.
struct SampleFacts {
  std::string id;
  std::size_t label = 0;
  std::size_t clean_prediction = 0;
  OutcomeStatus status = OutcomeStatus::kOriginalKept;
  std::optional<std::size_t> final_prediction;  // set for PERTURBED
};

std::vector<SampleFacts> collect_facts(std::span<const LabeledSample> dataset,
                                       std::span<const PerturbationOutcome> outcomes,
                                       const EvaluatedModel& model, const Normalization& normalization);

EvaluationReport build_report(std::span<const SampleFacts> facts, const LabelSet& labels,
                              std::string model_name, std::string config_fingerprint);

}  // namespace fmr
