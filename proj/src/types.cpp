#include "fmr/types.hpp"

#include <algorithm>

#include "fmr/error.hpp"

namespace fmr {

void validate_sample(const LabeledSample& sample, std::size_t num_classes) {
  if (!sample.image.all_finite() || !sample.image.in_unit_range())
    throw ConfigError("sample '" + sample.id + "': pixel values must be finite and within [0,1]");
  if (sample.label >= num_classes)
    throw ConfigError("sample '" + sample.id + "': label " + std::to_string(sample.label) +
                      " outside label set of size " + std::to_string(num_classes));
}

SparseMask::SparseMask(std::vector<std::size_t> selected, std::size_t total_dims)
    : selected_(std::move(selected)), total_(total_dims) {
  std::sort(selected_.begin(), selected_.end());
  require(std::adjacent_find(selected_.begin(), selected_.end()) == selected_.end(),
          "sparse mask: duplicate latent index");
  require(selected_.empty() || selected_.back() < total_, "sparse mask: index out of range");
}

SparseMask SparseMask::all(std::size_t total_dims) {
  std::vector<std::size_t> idx(total_dims);
  for (std::size_t i = 0; i < total_dims; ++i) idx[i] = i;
  return SparseMask(std::move(idx), total_dims);
}

bool SparseMask::contains(std::size_t i) const {
  return std::binary_search(selected_.begin(), selected_.end(), i);
}

void PerturbationConfig::validate() const {
  if (budget < 1) throw ConfigError("perturbation budget must be at least 1");
  if (!(step_size > 0.0)) throw ConfigError("perturbation step size must be positive");
}

const char* to_string(OutcomeStatus s) {
  switch (s) {
    case OutcomeStatus::kOriginalKept: return "ORIGINAL_KEPT";
    case OutcomeStatus::kPerturbed: return "PERTURBED";
    case OutcomeStatus::kAborted: return "ABORTED";
  }
  return "?";
}

OutcomeStatus status_from_string(const std::string& s) {
  if (s == "ORIGINAL_KEPT") return OutcomeStatus::kOriginalKept;
  if (s == "PERTURBED") return OutcomeStatus::kPerturbed;
  if (s == "ABORTED") return OutcomeStatus::kAborted;
  throw ConfigError("unknown outcome status '" + s + "'");
}

}  // namespace fmr
