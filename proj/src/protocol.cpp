#include "fmr/protocol.hpp"

#include <cmath>
#include <exception>

#include "fmr/error.hpp"
#include "fmr/generator.hpp"
#include "fmr/kernels.hpp"
#include "fmr/metrics.hpp"

namespace fmr {
namespace {

double euclidean_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

// Adapter failures carry the sample id; our own error kinds are preserved.
template <class F>
auto with_sample_context(const std::string& id, const char* what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const NumericError&) {
    throw;
  } catch (const Error& e) {
    throw Error(e.kind(), "sample '" + id + "': " + what + ": " + e.what());
  } catch (const std::exception& e) {
    throw AdapterError("sample '" + id + "': " + what + ": " + e.what());
  }
}

struct IterateEval {
  double loss = 0.0;
  std::vector<double> latent_gradient;
};

IterateEval evaluate_iterate(const LatentCode& latent, const Image& decoded, std::size_t label,
                             const EvaluatedModel& model, const Generator& generator,
                             const Normalization& normalization, bool need_gradient) {
  if (!need_gradient) return {model.loss(normalization.apply(decoded), label), {}};
  auto lg = model.loss_gradient(normalization.apply(decoded), label);
  normalization.backprop(lg.gradient, decoded.shape().channels);
  return {lg.loss, generator.pullback(latent, lg.gradient)};
}

}  // namespace

std::vector<double> latent_ascent_step(std::span<const double> latent,
                                       std::span<const double> gradient, double step_size) {
  require(latent.size() == gradient.size(), "latent_ascent_step: latent has " +
                                                std::to_string(latent.size()) + " values, gradient " +
                                                std::to_string(gradient.size()));
  require(step_size > 0.0, "latent_ascent_step: step size must be positive");
  std::vector<double> out(latent.begin(), latent.end());
  const double norm = euclidean_norm(gradient);
  if (!(norm >= kMinGradientNorm)) return out;
  const double scale = step_size / norm;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * gradient[i];
  return out;
}

LossAndGradient latent_loss_gradient(const LatentCode& latent, std::size_t label,
                                     const EvaluatedModel& model, const Generator& generator,
                                     const Normalization& normalization) {
  const Image decoded = generator.decode(latent);
  auto it = evaluate_iterate(latent, decoded, label, model, generator, normalization, true);
  return {it.loss, std::move(it.latent_gradient)};
}

OracleVerdict oracle_judge(const Oracle& oracle, const Image& image, std::size_t label,
                           const Normalization& pipeline_normalization) {
  const auto own = oracle.own_normalization();
  return oracle.judge((own ? *own : pipeline_normalization).apply(image), label);
}

PerturbationOutcome perturb_sample(const LabeledSample& sample, const EvaluatedModel& model,
                                   const Generator& generator, const Oracle& oracle,
                                   const PerturbationConfig& config) {
  config.validate();
  validate_sample(sample, oracle.labels().size());
  if (sample.image.shape() != generator.image_shape() || sample.image.shape() != model.input_shape() ||
      sample.image.shape() != oracle.input_shape())
    throw ConfigError("sample '" + sample.id + "': image shape " + sample.image.shape().str() +
                      " does not match the model/generator/oracle shapes");
  if (model.num_classes() != oracle.labels().size())
    throw ConfigError("model and oracle disagree on the number of classes");

  const auto& id = sample.id;
  const std::size_t label = sample.label;
  const Normalization& norm = config.normalization;

  PerturbationOutcome out;
  out.sample_id = id;
  out.label = label;
  out.final_image = sample.image;
  out.status = OutcomeStatus::kOriginalKept;

  LatentCode current = with_sample_context(id, "encode", [&] { return generator.encode(sample.image); });
  if (config.mask && config.mask->total_dims() != current.size())
    throw ConfigError("sparse mask covers " + std::to_string(config.mask->total_dims()) +
                      " dims, generator latent has " + std::to_string(current.size()));
  out.initial_latent = current;
  out.final_latent = current;

  auto abort = [&](const std::string& why) {
    out.status = OutcomeStatus::kAborted;
    out.final_image = sample.image;
    out.final_latent = out.initial_latent;
    out.diagnostic = why;
    return out;
  };

  std::vector<double> gradient;
  {
    const Image start = with_sample_context(id, "decode", [&] { return generator.decode(current); });
    IterateEval eval;
    try {
      eval = with_sample_context(id, "model", [&] {
        return evaluate_iterate(current, start, label, model, generator, norm, true);
      });
    } catch (const NumericError& e) {
      return abort(e.what());
    }
    if (!std::isfinite(eval.loss) || !all_finite(eval.latent_gradient))
      return abort("non-finite loss or gradient at the starting latent");
    gradient = std::move(eval.latent_gradient);
  }

  const std::size_t budget = static_cast<std::size_t>(config.budget);
  for (std::size_t t = 0; t < budget; ++t) {
    LatentCode next{config.mask ? masked_ascent_step(current.values, gradient, config.step_size, *config.mask)
                                : latent_ascent_step(current.values, gradient, config.step_size),
                    current.shape};
    double step_norm = 0.0;
    for (std::size_t i = 0; i < next.size(); ++i) {
      const double d = next.values[i] - current.values[i];
      step_norm += d * d;
    }
    step_norm = std::sqrt(step_norm);

    Image decoded = with_sample_context(id, "decode", [&] { return generator.decode(next); });
    const bool verdict =
        with_sample_context(id, "oracle", [&] { return oracle_judge(oracle, decoded, label, norm).accepted; });
    const bool need_gradient = verdict && t + 1 < budget;
    IterateEval eval;
    try {
      eval = with_sample_context(id, "model", [&] {
        return evaluate_iterate(next, decoded, label, model, generator, norm, need_gradient);
      });
    } catch (const NumericError& e) {
      return abort(e.what());
    }
    out.trace.push_back({t, eval.loss, verdict, verdict, step_norm});
    if (!std::isfinite(eval.loss) || (need_gradient && !all_finite(eval.latent_gradient)))
      return abort("non-finite loss or gradient at iteration " + std::to_string(t));

    if (!verdict) break;  // keep the previous accepted iterate (or the input when t == 0)

    out.status = OutcomeStatus::kPerturbed;
    ++out.accepted_iterations;
    out.final_image = std::move(decoded);
    out.final_latent = next;
    current = std::move(next);
    gradient = std::move(eval.latent_gradient);
  }
  return out;
}

DatasetRun perturb_dataset(std::span<const LabeledSample> dataset, const EvaluatedModel& model,
                           const Generator& generator, const Oracle& oracle,
                           const PerturbationConfig& config) {
  if (dataset.empty()) throw ConfigError("perturb_dataset: empty dataset");
  config.validate();
  DatasetRun run;
  run.outcomes.resize(dataset.size());
  const bool concurrent = model.concurrent_safe() && generator.concurrent_safe() && oracle.concurrent_safe();
  kernels::for_each_index(
      dataset.size(),
      [&](std::size_t i) { run.outcomes[i] = perturb_sample(dataset[i], model, generator, oracle, config); },
      concurrent);
  const auto facts = collect_facts(dataset, run.outcomes, model, config.normalization);
  run.report = build_report(facts, oracle.labels(), model.name(), "");
  return run;
}

}  // namespace fmr
