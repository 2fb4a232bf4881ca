#pragma once

// Runnable surface: configuration, adapter wiring, the resumable per-sample
// JSONL sink, PNG export with a checksummed manifest, transfer evaluation and
// report emission.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fmr/interfaces.hpp"
#include "fmr/io.hpp"
#include "fmr/metrics.hpp"
#include "fmr/sparse.hpp"
#include "fmr/types.hpp"

namespace fmr {

inline constexpr int kResultSchemaVersion = 1;

struct RunConfig {
  std::string dataset;  // directory
  std::string dataset_format = "folder";
  int channels = 0;  // 0 = as stored, 1 = convert to luminance

  std::string model = "network";
  std::string model_checkpoint;
  std::string generator = "reference-ae";
  std::string generator_checkpoint;
  std::string oracle = "surrogate";
  std::string oracle_checkpoint;

  int budget = 50;
  double step_size = 0.001;
  std::string normalization = "identity";  // or "imagenet"
  // Generator output is rounded to this image depth (8 or 16; 0 keeps it
  // continuous). Exports use the same depth, 8 when 0.
  int image_bit_depth = 8;

  std::optional<double> fgsm_epsilon;  // start each sample from its FGSM image
  bool grayscale = false;              // feed the model luminance images
  std::string sparse_mask;             // sparsify result JSON
  bool allow_foreign_mask = false;     // accept a mask fitted on another dataset

  std::string output_dir;
  bool export_images = false;
  bool save_latents = false;
  std::uint64_t seed = 0;

  // Unknown keys are rejected.
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  // Field checks plus registry lookups and path existence.
  void validate() const;
  Normalization resolved_normalization() const;
};

// Adapter registry. Names map to loaders taking a checkpoint path (ignored by
// adapters that need none). "vqgan-external" and "clip-external" are known
// names whose backends are not part of this build; loading them raises
// AdapterError.
std::vector<std::string> registered_models();
std::vector<std::string> registered_generators();
std::vector<std::string> registered_oracles();

std::shared_ptr<const EvaluatedModel> load_model(const std::string& name, const std::string& checkpoint);
std::shared_ptr<const Generator> load_generator(const std::string& name, const std::string& checkpoint,
                                                ImageShape dataset_shape);
std::shared_ptr<const Oracle> load_oracle(const std::string& name, const std::string& checkpoint);

nlohmann::json report_to_json(const EvaluationReport& report);
EvaluationReport report_from_json(const nlohmann::json& j);

// One JSONL line per sample.
struct ResultRecord {
  std::size_t index = 0;
  std::string id;
  std::size_t label = 0;
  std::string label_name;
  OutcomeStatus status = OutcomeStatus::kOriginalKept;
  std::size_t accepted_iterations = 0;
  std::size_t clean_prediction = 0;
  std::optional<std::size_t> final_prediction;  // PERTURBED only
  std::optional<bool> oracle_verdict;           // false when the first iterate was rejected; unset when aborted
  std::optional<double> initial_loss, final_loss, max_loss;
  std::size_t loss_evaluations = 0;
  std::string diagnostic;
  std::string original_path, image_path;  // relative to the export dir, when exported
  std::vector<double> initial_latent, final_latent;  // when save_latents

  nlohmann::json to_json(const std::string& fingerprint) const;
  static ResultRecord from_json(const nlohmann::json& j);
  SampleFacts facts() const;
};

struct EvaluationPaths {
  std::filesystem::path results;   // results.jsonl
  std::filesystem::path report;    // report.json
  std::filesystem::path config;    // config.json (resolved)
  std::filesystem::path export_dir;  // export/, holding manifest.json
  std::filesystem::path manifest;
};
EvaluationPaths evaluation_paths(const std::filesystem::path& output_dir);

struct RunOptions {
  // Stop after this many records exist in the JSONL (simulates an interrupt).
  std::optional<std::size_t> stop_after;
  // Discard an existing results file written under another configuration.
  bool overwrite = false;
  std::size_t chunk = 64;  // samples processed between flushes
  std::function<void(std::size_t done, std::size_t total)> on_progress;
};

struct EvaluationResult {
  EvaluationReport report;
  std::vector<ResultRecord> records;
  std::string fingerprint;
  std::size_t resumed_from = 0;  // records found on disk before this run
  bool complete = false;
};

// Hash over every setting and input that affects the records.
std::string config_fingerprint(const RunConfig& config);

// Loads and wires everything before touching the output directory, then
// resumes after the last complete JSONL line (a torn final line is dropped).
EvaluationResult run_evaluation(const RunConfig& config, const RunOptions& options = {});

// Reads a results file; the report is rebuilt from the records alone.
std::vector<ResultRecord> read_results(const std::filesystem::path& jsonl, std::string* fingerprint = nullptr);
EvaluationReport report_from_records(std::span<const ResultRecord> records, const LabelSet& labels,
                                     const std::string& model_name, const std::string& fingerprint);

// Transfer: evaluates a model on an exported set. SA is measured on the
// exported originals, PA on the exported perturbed images.
struct TransferOptions {
  std::string model = "network";
  std::string model_checkpoint;
  bool grayscale = false;
  std::string normalization = "identity";
};

struct TransferResult {
  EvaluationReport report;
  std::vector<SampleFacts> facts;
  // Samples whose prediction differs from the one recorded by the source run
  // (meaningful when the source model is re-evaluated).
  std::size_t clean_prediction_changes = 0;
  std::size_t final_prediction_changes = 0;
};

// Throws IntegrityError naming the first file whose checksum or decoding fails.
TransferResult run_transfer(const std::filesystem::path& manifest, const TransferOptions& options);

// Sparse selection over latents saved by an evaluation run (save_latents).
LatentClassificationDataset latents_from_results(std::span<const ResultRecord> records, std::size_t latent_dim);

enum class ReportFormat { kCsv, kMarkdown, kPng };
ReportFormat report_format_from_string(const std::string& s);

// Model, SA, PA, FMR; one row per report.
std::string summary_table(std::span<const EvaluationReport> reports, ReportFormat format);
// Class, SA, PA, VR, FMR; one row per class plus a Total row.
std::string per_class_table(const EvaluationReport& report, ReportFormat format);

struct SummaryRow {
  std::string model;
  std::optional<double> sa, pa, fmr;
  bool operator==(const SummaryRow&) const = default;
};
std::vector<SummaryRow> parse_summary_csv(const std::string& csv);

// Bars of FMR per model on a 0..100 scale.
Image fmr_bar_plot(std::span<const EvaluationReport> reports);

// Writes `out` in the chosen format; per_class only applies to a single report.
void emit_report(std::span<const EvaluationReport> reports, ReportFormat format, const std::filesystem::path& out,
                 bool per_class = false);

// Desk-scale fixture set: digit train/test folders plus trained checkpoints.
struct FixtureOptions {
  std::size_t train_per_class = 100;
  std::size_t test_per_class = 100;
  std::size_t oracle_per_class = 300;  // separate, larger draw for the surrogate oracle
  bool rgb_test = true;  // also write an RGB copy of the test digits
  double latent_scale = 0.05;
  std::uint64_t seed = 0;
  std::function<void(const std::string&)> log;
};

struct FixturePaths {
  std::filesystem::path train, test, test_rgb;
  std::filesystem::path convnet, mlp, autoencoder, oracle;
  std::filesystem::path config;  // evaluation config for convnet + autoencoder + surrogate on test
};

FixturePaths build_fixtures(const std::filesystem::path& dir, const FixtureOptions& options = {});

}  // namespace fmr
