#include "fmr/metrics.hpp"

#include <cfenv>
#include <cmath>
#include <cstdio>

#include "fmr/error.hpp"

namespace fmr {
namespace {

double percent(std::size_t num, std::size_t den) {
  return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double standard_accuracy(const EvaluatedModel& model, std::span<const LabeledSample> dataset,
                         const Normalization& normalization) {
  if (dataset.empty()) throw ConfigError("standard_accuracy: empty dataset");
  std::size_t correct = 0;
  for (const auto& s : dataset)
    if (model.predict_class(normalization.apply(s.image)) == s.label) ++correct;
  return percent(correct, dataset.size());
}

std::optional<double> perturbed_accuracy(const EvaluatedModel& model,
                                         std::span<const PerturbationOutcome> outcomes,
                                         const Normalization& normalization) {
  std::size_t n = 0, correct = 0;
  for (const auto& o : outcomes) {
    if (o.status != OutcomeStatus::kPerturbed) continue;
    ++n;
    if (model.predict_class(normalization.apply(o.final_image)) == o.label) ++correct;
  }
  if (n == 0) return std::nullopt;
  return percent(correct, n);
}

double validation_rate(std::span<const PerturbationOutcome> outcomes) {
  std::size_t valid = 0, perturbed = 0;
  for (const auto& o : outcomes) {
    if (o.status == OutcomeStatus::kAborted) continue;
    ++valid;
    if (o.status == OutcomeStatus::kPerturbed) ++perturbed;
  }
  return valid ? percent(perturbed, valid) : 0.0;
}

double fmr(double pa, double sa) {
  if (!(sa > 0.0)) throw UndefinedMetricError("FMR is undefined when standard accuracy is 0");
  return 100.0 * pa / sa;
}

double round_percent(double value) {
  const int old = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double r = std::nearbyint(value * 100.0) / 100.0;
  std::fesetround(old);
  return r;
}

std::string format_percent(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", round_percent(value));
  return buf;
}

std::string format_percent(const std::optional<double>& value) {
  return value ? format_percent(*value) : std::string("undefined");
}

std::vector<SampleFacts> collect_facts(std::span<const LabeledSample> dataset,
                                       std::span<const PerturbationOutcome> outcomes,
                                       const EvaluatedModel& model, const Normalization& normalization) {
  require(dataset.size() == outcomes.size(), "collect_facts: dataset and outcomes differ in length");
  std::vector<SampleFacts> facts(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto& f = facts[i];
    f.id = dataset[i].id;
    f.label = dataset[i].label;
    f.clean_prediction = model.predict_class(normalization.apply(dataset[i].image));
    f.status = outcomes[i].status;
    if (f.status == OutcomeStatus::kPerturbed)
      f.final_prediction = model.predict_class(normalization.apply(outcomes[i].final_image));
  }
  return facts;
}

EvaluationReport build_report(std::span<const SampleFacts> facts, const LabelSet& labels,
                              std::string model_name, std::string config_fingerprint) {
  if (facts.empty()) throw ConfigError("cannot build a report from zero samples");
  EvaluationReport r;
  r.model_name = std::move(model_name);
  r.config_fingerprint = std::move(config_fingerprint);
  r.per_class.resize(labels.size());
  for (std::size_t c = 0; c < labels.size(); ++c) r.per_class[c].name = labels.name(c);

  for (const auto& f : facts) {
    require(f.label < labels.size(), "report: label outside label set");
    auto& cls = r.per_class[f.label];
    auto& n = r.counts;
    ++n.total;
    ++cls.samples;
    if (f.clean_prediction == f.label) {
      ++n.clean_correct;
      ++cls.clean_correct;
    }
    switch (f.status) {
      case OutcomeStatus::kPerturbed: {
        ++n.perturbed;
        ++cls.perturbed;
        require(f.final_prediction.has_value(), "report: perturbed sample without a final prediction");
        if (*f.final_prediction == f.label) {
          ++n.perturbed_correct;
          ++cls.perturbed_correct;
        }
        break;
      }
      case OutcomeStatus::kOriginalKept: ++n.original_kept; break;
      case OutcomeStatus::kAborted:
        ++n.aborted;
        ++cls.aborted;
        r.aborted_ids.push_back(f.id);
        break;
    }
  }

  auto finish = [](std::size_t samples, std::size_t clean, std::size_t pert, std::size_t pert_ok,
                   std::size_t aborted, double& sa, std::optional<double>& pa, double& vr,
                   std::optional<double>& fm) {
    sa = samples ? percent(clean, samples) : 0.0;
    pa = pert ? std::optional<double>(percent(pert_ok, pert)) : std::nullopt;
    vr = samples > aborted ? percent(pert, samples - aborted) : 0.0;
    fm = (pa && sa > 0.0) ? std::optional<double>(fmr(*pa, sa)) : std::nullopt;
  };
  finish(r.counts.total, r.counts.clean_correct, r.counts.perturbed, r.counts.perturbed_correct,
         r.counts.aborted, r.standard_accuracy, r.perturbed_accuracy, r.validation_rate, r.fmr);
  for (auto& c : r.per_class)
    finish(c.samples, c.clean_correct, c.perturbed, c.perturbed_correct, c.aborted, c.standard_accuracy,
           c.perturbed_accuracy, c.validation_rate, c.fmr);
  return r;
}

}  // namespace fmr
