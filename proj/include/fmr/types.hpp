#pragma once

// Domain data shared across the perturbation protocol, metrics and harness.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fmr/image.hpp"

namespace fmr {

struct LabeledSample {
  std::string id;
  Image image;
  std::size_t label = 0;
};

// Throws ConfigError unless pixels are finite, in [0,1] and the label is valid.
void validate_sample(const LabeledSample& sample, std::size_t num_classes);

struct LatentCode {
  std::vector<double> values;
  std::vector<std::size_t> shape;  // generator-native layout; empty means flat

  std::size_t size() const { return values.size(); }
  bool operator==(const LatentCode&) const = default;
};

// Subset of latent coordinates allowed to move during ascent.
class SparseMask {
 public:
  SparseMask() = default;
  // Sorts and validates; throws ContractViolation on duplicates or out-of-range indices.
  SparseMask(std::vector<std::size_t> selected, std::size_t total_dims);

  static SparseMask all(std::size_t total_dims);
  static SparseMask none(std::size_t total_dims) { return SparseMask({}, total_dims); }

  const std::vector<std::size_t>& selected() const { return selected_; }
  std::size_t total_dims() const { return total_; }
  std::size_t count() const { return selected_.size(); }
  bool contains(std::size_t i) const;

  bool operator==(const SparseMask&) const = default;

 private:
  std::vector<std::size_t> selected_;
  std::size_t total_ = 0;
};

struct PerturbationConfig {
  int budget = 50;           // total generator iterations, including the first one
  double step_size = 0.001;  // Euclidean length of each latent step
  Normalization normalization;
  std::uint64_t seed = 0;
  std::optional<SparseMask> mask;  // restricts ascent to these latent dims

  void validate() const;
};

struct TraceEntry {
  std::size_t iteration = 0;
  double loss_value = 0.0;  // model loss at this iterate
  bool oracle_verdict = false;
  bool accepted = false;
  double latent_step_norm = 0.0;

  bool operator==(const TraceEntry&) const = default;
};

enum class OutcomeStatus { kOriginalKept, kPerturbed, kAborted };

const char* to_string(OutcomeStatus s);
OutcomeStatus status_from_string(const std::string& s);

struct PerturbationOutcome {
  std::string sample_id;
  std::size_t label = 0;
  Image final_image;
  OutcomeStatus status = OutcomeStatus::kOriginalKept;
  std::size_t accepted_iterations = 0;
  std::vector<TraceEntry> trace;
  LatentCode initial_latent;  // encoder output for the input image
  LatentCode final_latent;    // latent of the emitted image (equals initial when kept)
  std::string diagnostic;     // set for aborted samples

  bool operator==(const PerturbationOutcome&) const = default;
};

struct ClassBreakdown {
  std::string name;
  std::size_t samples = 0;
  std::size_t clean_correct = 0;
  std::size_t perturbed = 0;
  std::size_t perturbed_correct = 0;
  std::size_t aborted = 0;
  double standard_accuracy = 0.0;
  std::optional<double> perturbed_accuracy;
  double validation_rate = 0.0;
  std::optional<double> fmr;

  bool operator==(const ClassBreakdown&) const = default;
};

struct ReportCounts {
  std::size_t total = 0;
  std::size_t clean_correct = 0;
  std::size_t perturbed = 0;
  std::size_t perturbed_correct = 0;
  std::size_t original_kept = 0;
  std::size_t aborted = 0;

  bool operator==(const ReportCounts&) const = default;
};

struct EvaluationReport {
  std::string model_name;
  double standard_accuracy = 0.0;
  std::optional<double> perturbed_accuracy;  // nullopt when nothing was perturbed
  double validation_rate = 0.0;
  std::optional<double> fmr;  // nullopt when PA is undefined or SA is zero
  std::vector<ClassBreakdown> per_class;
  ReportCounts counts;
  std::vector<std::string> aborted_ids;
  std::string config_fingerprint;

  bool operator==(const EvaluationReport&) const = default;
};

}  // namespace fmr
