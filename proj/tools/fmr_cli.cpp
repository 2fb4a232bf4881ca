// fmr: command-line front end.
//
// Exit codes: 0 success, 2 configuration error, 3 adapter error,
// 4 integrity error, 1 anything else (including failed checks).

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "fmr/checkpoint.hpp"
#include "fmr/error.hpp"
#include "fmr/estimator.hpp"
#include "fmr/generator.hpp"
#include "fmr/harness.hpp"
#include "fmr/sparse.hpp"

namespace fs = std::filesystem;
using namespace fmr;

namespace {

int exit_code(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::kConfig:
      return 2;
    case ErrorKind::kAdapter:
      return 3;
    case ErrorKind::kIntegrity:
      return 4;
    default:
      return 1;
  }
}

struct EvaluateArgs {
  std::string config;
  std::optional<std::string> dataset, model, model_checkpoint, generator, generator_checkpoint, oracle,
      oracle_checkpoint, normalization, sparse_mask, output;
  std::optional<int> channels, budget, image_bit_depth;
  std::optional<double> step_size, fgsm_epsilon;
  std::optional<std::uint64_t> seed;
  bool grayscale = false, allow_foreign_mask = false, export_images = false, save_latents = false;
  bool overwrite = false, quiet = false;
  std::optional<std::size_t> stop_after;
};

RunConfig resolve_config(const EvaluateArgs& a) {
  RunConfig c = a.config.empty() ? RunConfig{} : RunConfig::from_json(read_json_file(a.config));
  auto set = [](auto& dst, const auto& src) {
    if (src) dst = *src;
  };
  set(c.dataset, a.dataset);
  set(c.model, a.model);
  set(c.model_checkpoint, a.model_checkpoint);
  set(c.generator, a.generator);
  set(c.generator_checkpoint, a.generator_checkpoint);
  set(c.oracle, a.oracle);
  set(c.oracle_checkpoint, a.oracle_checkpoint);
  set(c.normalization, a.normalization);
  set(c.sparse_mask, a.sparse_mask);
  set(c.output_dir, a.output);
  set(c.channels, a.channels);
  set(c.budget, a.budget);
  set(c.image_bit_depth, a.image_bit_depth);
  set(c.step_size, a.step_size);
  set(c.seed, a.seed);
  if (a.fgsm_epsilon) c.fgsm_epsilon = a.fgsm_epsilon;
  c.grayscale = c.grayscale || a.grayscale;
  c.allow_foreign_mask = c.allow_foreign_mask || a.allow_foreign_mask;
  c.export_images = c.export_images || a.export_images;
  c.save_latents = c.save_latents || a.save_latents;
  return c;
}

void print_report(const EvaluationReport& r) {
  std::cout << summary_table(std::span(&r, 1), ReportFormat::kMarkdown) << "\n"
            << per_class_table(r, ReportFormat::kMarkdown);
}

int cmd_evaluate(const EvaluateArgs& a) {
  const RunConfig c = resolve_config(a);
  RunOptions opts;
  opts.stop_after = a.stop_after;
  opts.overwrite = a.overwrite;
  if (!a.quiet)
    opts.on_progress = [](std::size_t done, std::size_t total) {
      std::fprintf(stderr, "\r%zu / %zu samples", done, total);
      if (done == total) std::fprintf(stderr, "\n");
    };
  const auto result = run_evaluation(c, opts);
  if (result.resumed_from > 0) std::cerr << "resumed after " << result.resumed_from << " records\n";
  if (!result.complete) {
    std::cout << "stopped after " << result.records.size() << " records; rerun to resume\n";
    return 0;
  }
  print_report(result.report);
  std::cout << "\nresults: " << evaluation_paths(c.output_dir).results.string() << "\n";
  return 0;
}

struct TransferArgs {
  std::string manifest, output;
  TransferOptions options;
};

int cmd_transfer(const TransferArgs& a) {
  const auto t = run_transfer(a.manifest, a.options);
  print_report(t.report);
  std::cout << "\nprediction changes vs. source run: clean " << t.clean_prediction_changes << ", perturbed "
            << t.final_prediction_changes << "\n";
  if (!a.output.empty()) write_json_file(a.output, report_to_json(t.report));
  return 0;
}

struct SparsifyArgs {
  std::string run_dir, output;
  double lambda = 0.01;
  std::string lambda_form = "mean";
  int max_epochs = 300;
  double tolerance = 1e-6;
  std::uint64_t seed = 0;
};

int cmd_sparsify(const SparsifyArgs& a) {
  const auto paths = evaluation_paths(a.run_dir);
  const auto cfg_json = read_json_file(paths.config);
  auto cj = cfg_json;
  cj.erase("fingerprint");
  const auto cfg = RunConfig::from_json(cj);
  const auto records = read_results(paths.results);
  std::size_t dim = 0;
  for (const auto& r : records)
    if (!r.initial_latent.empty()) {
      dim = r.initial_latent.size();
      break;
    }
  if (dim == 0) throw ConfigError("run has no saved latents; evaluate with --save-latents");
  const auto data = latents_from_results(records, dim);
  SparseFitOptions fo{.lambda = a.lambda, .max_epochs = a.max_epochs, .tolerance = a.tolerance, .seed = a.seed};
  if (a.lambda_form == "sum") {
    const auto train_rows = static_cast<std::size_t>(fo.train_fraction * static_cast<double>(data.rows()));
    fo.lambda = mean_form_lambda(a.lambda, std::max<std::size_t>(train_rows, 1));
  } else if (a.lambda_form != "mean") {
    throw ConfigError("--lambda-form must be sum or mean");
  }
  auto result = fit_l1_logistic(data, fo);
  result.generator_name = cfg.generator;
  result.dataset_name = fs::path(cfg.dataset).filename().string();
  if (result.dataset_name.empty()) result.dataset_name = fs::path(cfg.dataset).parent_path().filename().string();
  const auto row = report_sparsity(result);
  std::printf("| Dataset | lambda | Sparsity | Held-out |\n| --- | ---: | ---: | ---: |\n| %s | %g | %s | %s |\n",
              row.dataset.c_str(), result.lambda, format_percent(row.sparsity).c_str(),
              format_percent(row.heldout_score).c_str());
  const std::string out = a.output.empty() ? (fs::path(a.run_dir) / "mask.json").string() : a.output;
  write_json_file(out, result.to_json());
  std::cout << "mask (" << result.mask.count() << " of " << dim << " dims): " << out << "\n";
  return 0;
}

struct TheoryArgs {
  std::size_t p = 3, m = 10, trials = 10000, lo = 1, hi = 100;
  std::uint64_t seed = 0;
  double sigma = 1.0;
  std::string output;
};

int cmd_verify_theory(const TheoryArgs& a) {
  EstimatorSimConfig c{.p = a.p, .n = uniform_sizes(a.m, a.lo, a.hi, a.seed), .trials = a.trials, .seed = a.seed};
  GroundTruthDistribution truth;
  truth.mu.assign(a.p, 0.0);
  truth.sigma.assign(a.p * a.p, 0.0);
  for (std::size_t i = 0; i < a.p; ++i) truth.sigma[i * a.p + i] = a.sigma;
  const auto report = verify_proposition(c, truth);
  std::cout << format_table(report);
  if (!a.output.empty()) write_json_file(a.output, to_json(report));
  return report.all_pass() ? 0 : 1;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string format = "md", output;
  bool per_class = false, recompute = false;
};

int cmd_report(const ReportArgs& a) {
  std::vector<EvaluationReport> reports;
  for (const auto& in : a.inputs) {
    fs::path p = in;
    if (fs::is_directory(p)) p = evaluation_paths(p).report;
    auto r = report_from_json(read_json_file(p));
    if (a.recompute) {
      const auto jsonl = p.parent_path() / "results.jsonl";
      std::string fp;
      const auto records = read_results(jsonl, &fp);
      std::vector<std::string> names;
      for (const auto& c : r.per_class) names.push_back(c.name);
      const auto again = report_from_records(records, LabelSet(names), r.model_name, fp);
      if (!(again == r)) throw IntegrityError(p.string() + " does not match the report rebuilt from " + jsonl.string());
      std::cerr << p.string() << ": matches " << records.size() << " records\n";
    }
    reports.push_back(std::move(r));
  }
  const auto format = report_format_from_string(a.format);
  if (a.output.empty()) {
    if (format == ReportFormat::kPng) throw ConfigError("png output needs --output");
    if (a.per_class)
      for (const auto& r : reports) std::cout << per_class_table(r, format);
    else
      std::cout << summary_table(reports, format);
    return 0;
  }
  emit_report(reports, format, a.output, a.per_class);
  return 0;
}

struct FixtureArgs {
  std::string output = "fixtures";
  FixtureOptions options;
};

int cmd_fixtures(FixtureArgs a) {
  a.options.log = [](const std::string& s) { std::cerr << s << "\n"; };
  const auto p = build_fixtures(a.output, a.options);
  std::cout << "fixtures written to " << a.output << "\nevaluate with: fmr evaluate --config " << p.config.string()
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Oracle-constrained counterfactual robustness evaluation"};
  app.require_subcommand(1);

  EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Run the perturbation protocol over a dataset");
  evaluate->add_option("--config", ev.config, "Run configuration JSON; flags override it")->check(CLI::ExistingFile);
  evaluate->add_option("--dataset", ev.dataset, "Dataset directory (one sub-directory per class)");
  evaluate->add_option("--channels", ev.channels, "0 keeps stored channels, 1 converts to luminance");
  evaluate->add_option("--model", ev.model, "Model adapter");
  evaluate->add_option("--model-checkpoint", ev.model_checkpoint);
  evaluate->add_option("--generator", ev.generator, "Generator adapter");
  evaluate->add_option("--generator-checkpoint", ev.generator_checkpoint);
  evaluate->add_option("--oracle", ev.oracle, "Oracle adapter");
  evaluate->add_option("--oracle-checkpoint", ev.oracle_checkpoint);
  evaluate->add_option("--budget", ev.budget, "Generator iterations per sample");
  evaluate->add_option("--step-size", ev.step_size, "Latent step length");
  evaluate->add_option("--normalization", ev.normalization, "identity or imagenet");
  evaluate->add_option("--image-bit-depth", ev.image_bit_depth, "Round generator output to 8 or 16 bits; 0 disables");
  evaluate->add_option("--fgsm-epsilon", ev.fgsm_epsilon, "Start from FGSM images with this epsilon");
  evaluate->add_flag("--grayscale", ev.grayscale, "Feed the model luminance images");
  evaluate->add_option("--sparse-mask", ev.sparse_mask, "Mask file written by sparsify");
  evaluate->add_flag("--allow-foreign-mask", ev.allow_foreign_mask, "Accept a mask fitted on another dataset");
  evaluate->add_option("--output", ev.output, "Output directory");
  evaluate->add_flag("--export-images", ev.export_images, "Write original and perturbed PNGs plus a manifest");
  evaluate->add_flag("--save-latents", ev.save_latents, "Store initial and final latents in the records");
  evaluate->add_option("--seed", ev.seed);
  evaluate->add_option("--stop-after", ev.stop_after, "Stop once this many records exist");
  evaluate->add_flag("--overwrite", ev.overwrite, "Discard results written under another configuration");
  evaluate->add_flag("--quiet", ev.quiet, "No progress output");

  TransferArgs tr;
  auto* transfer = app.add_subcommand("transfer", "Evaluate a model on an exported perturbed set");
  transfer->add_option("--manifest", tr.manifest, "manifest.json of an export")->required();
  transfer->add_option("--model", tr.options.model, "Model adapter");
  transfer->add_option("--model-checkpoint", tr.options.model_checkpoint)->required();
  transfer->add_flag("--grayscale", tr.options.grayscale);
  transfer->add_option("--normalization", tr.options.normalization);
  transfer->add_option("--output", tr.output, "Write the report JSON here");

  SparsifyArgs sp;
  auto* sparsify = app.add_subcommand("sparsify", "Fit an L1 logistic mask on latents saved by evaluate");
  sparsify->add_option("--run", sp.run_dir, "Output directory of an evaluate run with --save-latents")->required();
  sparsify->add_option("--lambda", sp.lambda, "Penalty strength");
  sparsify->add_option("--lambda-form", sp.lambda_form, "mean (default) or sum: how --lambda is written")
      ->check(CLI::IsMember({"mean", "sum"}));
  sparsify->add_option("--max-epochs", sp.max_epochs);
  sparsify->add_option("--tolerance", sp.tolerance);
  sparsify->add_option("--seed", sp.seed);
  sparsify->add_option("--output", sp.output, "Mask JSON (default <run>/mask.json)");

  TheoryArgs th;
  auto* theory = app.add_subcommand("verify-theory", "Monte Carlo check of the pooled-estimator proposition");
  theory->add_option("--p", th.p, "Dimension");
  theory->add_option("--m", th.m, "Number of datasets");
  theory->add_option("--trials", th.trials);
  theory->add_option("--min-size", th.lo);
  theory->add_option("--max-size", th.hi);
  theory->add_option("--sigma", th.sigma, "Diagonal of the true covariance");
  theory->add_option("--seed", th.seed);
  theory->add_option("--output", th.output, "Write the report JSON here");

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Emit tables or a bar plot from report files");
  report->add_option("inputs", rp.inputs, "report.json files or run directories")->required();
  report->add_option("--format", rp.format, "csv, md or png");
  report->add_option("--output", rp.output);
  report->add_flag("--per-class", rp.per_class, "Per-class table with VR and a Total row");
  report->add_flag("--recompute", rp.recompute, "Check each report against its results.jsonl");

  FixtureArgs fx;
  auto* fixtures = app.add_subcommand("fixtures", "Build the desk-scale digit set and trained checkpoints");
  fixtures->add_option("--output", fx.output);
  fixtures->add_option("--train-per-class", fx.options.train_per_class);
  fixtures->add_option("--test-per-class", fx.options.test_per_class);
  fixtures->add_option("--oracle-per-class", fx.options.oracle_per_class);
  fixtures->add_option("--latent-scale", fx.options.latent_scale);
  fixtures->add_option("--seed", fx.options.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*evaluate) return cmd_evaluate(ev);
    if (*transfer) return cmd_transfer(tr);
    if (*sparsify) return cmd_sparsify(sp);
    if (*theory) return cmd_verify_theory(th);
    if (*report) return cmd_report(rp);
    if (*fixtures) return cmd_fixtures(fx);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
