#include "fmr/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "fmr/checkpoint.hpp"
#include "fmr/error.hpp"
#include "fmr/generator.hpp"
#include "fmr/kernels.hpp"
#include "fmr/models.hpp"
#include "fmr/oracle.hpp"
#include "fmr/protocol.hpp"
#include "fmr/sparse.hpp"
#include "fmr/training.hpp"

namespace fmr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kConfigKeys{
    "dataset",     "dataset_format", "channels",     "model",           "model_checkpoint",
    "generator",   "generator_checkpoint", "oracle", "oracle_checkpoint", "budget",
    "step_size",   "normalization", "image_bit_depth",  "fgsm_epsilon", "grayscale",       "sparse_mask",
    "allow_foreign_mask", "output_dir", "export_images", "save_latents", "seed"};

template <class T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config: field '") + key + "' has the wrong type");
  }
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> optional_double(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + ": checkpoint path is required");
  if (!fs::is_regular_file(path)) throw ConfigError(what + ": file not found: " + path);
}

[[noreturn]] void external_backend(const std::string& name) {
  throw AdapterError("adapter '" + name + "' needs an external backend that is not part of this build");
}

using ModelLoader = std::function<std::shared_ptr<const EvaluatedModel>(const std::string&)>;
using GeneratorLoader = std::function<std::shared_ptr<const Generator>(const std::string&, ImageShape)>;
using OracleLoader = std::function<std::shared_ptr<const Oracle>(const std::string&)>;

bool has_conv(const nn::Network& n) {
  return std::any_of(n.layers().begin(), n.layers().end(),
                     [](const nn::Layer& l) { return std::holds_alternative<nn::Conv2d>(l); });
}

std::shared_ptr<const EvaluatedModel> load_classifier(const std::string& path, std::optional<bool> want_conv,
                                                      const std::string& adapter) {
  require_file(path, "model '" + adapter + "'");
  auto m = std::make_shared<NetworkClassifier>(NetworkClassifier::from_json(read_json_file(path)));
  if (want_conv && has_conv(m->network()) != *want_conv)
    throw AdapterError("checkpoint " + path + " does not hold a " + adapter + " network");
  return m;
}

const std::map<std::string, ModelLoader>& model_registry() {
  static const std::map<std::string, ModelLoader> r{
      {"network", [](const std::string& p) { return load_classifier(p, std::nullopt, "network"); }},
      {"mlp", [](const std::string& p) { return load_classifier(p, false, "mlp"); }},
      {"convnet", [](const std::string& p) { return load_classifier(p, true, "convnet"); }},
  };
  return r;
}

const std::map<std::string, GeneratorLoader>& generator_registry() {
  static const std::map<std::string, GeneratorLoader> r{
      {"reference-ae",
       [](const std::string& p, ImageShape) -> std::shared_ptr<const Generator> {
         require_file(p, "generator 'reference-ae'");
         return std::make_shared<ReferenceAutoencoder>(ReferenceAutoencoder::from_json(read_json_file(p)));
       }},
      {"pixel", [](const std::string&, ImageShape s) -> std::shared_ptr<const Generator> {
         return std::make_shared<PixelGenerator>(s);
       }},
      {"vqgan-external", [](const std::string&, ImageShape) -> std::shared_ptr<const Generator> {
         external_backend("vqgan-external");
       }},
  };
  return r;
}

const std::map<std::string, OracleLoader>& oracle_registry() {
  static const std::map<std::string, OracleLoader> r{
      {"surrogate",
       [](const std::string& p) -> std::shared_ptr<const Oracle> {
         require_file(p, "oracle 'surrogate'");
         return std::make_shared<SurrogateOracle>(SurrogateOracle::from_json(read_json_file(p)));
       }},
      {"clip-external", [](const std::string&) -> std::shared_ptr<const Oracle> { external_backend("clip-external"); }},
  };
  return r;
}

template <class Map>
std::vector<std::string> keys(const Map& m) {
  std::vector<std::string> out;
  for (const auto& [k, v] : m) out.push_back(k);
  return out;
}

template <class Map>
const typename Map::mapped_type& lookup(const Map& m, const std::string& name, const std::string& kind) {
  auto it = m.find(name);
  if (it == m.end()) {
    std::string known;
    for (const auto& [k, v] : m) known += (known.empty() ? "" : ", ") + k;
    throw ConfigError("unknown " + kind + " adapter '" + name + "' (registered: " + known + ")");
  }
  return it->second;
}

Normalization normalization_from_name(const std::string& name) {
  if (name == "identity") return Normalization::identity();
  if (name == "imagenet") return Normalization::imagenet();
  throw ConfigError("unknown normalization '" + name + "' (expected identity or imagenet)");
}

// Relative export path for a sample id; keeps '/' separators, replaces
// anything unusual and refuses to climb out of the export directory.
fs::path export_relpath(const std::string& kind, const std::string& id) {
  fs::path p = kind;
  std::string part;
  auto flush = [&] {
    if (part.empty() || part == "." || part == "..") {
      if (!part.empty()) p /= std::string(part.size(), '_');
    } else {
      p /= part;
    }
    part.clear();
  };
  for (char c : id) {
    if (c == '/') {
      flush();
    } else {
      const auto u = static_cast<unsigned char>(c);
      part.push_back(std::isalnum(u) || c == '-' || c == '_' || c == '.' ? c : '_');
    }
  }
  flush();
  return p.string() + ".png";
}

ResultRecord make_record(std::size_t index, const LabeledSample& sample, const LabelSet& labels,
                         const SampleFacts& facts, const PerturbationOutcome& outcome, bool save_latents) {
  ResultRecord r;
  r.index = index;
  r.id = sample.id;
  r.label = sample.label;
  r.label_name = labels.name(sample.label);
  r.status = outcome.status;
  r.accepted_iterations = outcome.accepted_iterations;
  r.clean_prediction = facts.clean_prediction;
  r.final_prediction = facts.final_prediction;
  if (outcome.status == OutcomeStatus::kPerturbed) r.oracle_verdict = true;
  if (outcome.status == OutcomeStatus::kOriginalKept) r.oracle_verdict = false;
  if (!outcome.trace.empty()) {
    r.initial_loss = outcome.trace.front().loss_value;
    r.final_loss = outcome.trace.front().loss_value;
    double mx = outcome.trace.front().loss_value;
    for (const auto& t : outcome.trace) {
      if (t.accepted) r.final_loss = t.loss_value;
      mx = std::max(mx, t.loss_value);
    }
    r.max_loss = mx;
  }
  r.loss_evaluations = outcome.trace.size();
  r.diagnostic = outcome.diagnostic;
  if (save_latents) {
    r.initial_latent = outcome.initial_latent.values;
    r.final_latent = outcome.final_latent.values;
  }
  return r;
}

struct Wiring {
  Dataset dataset;
  std::shared_ptr<const EvaluatedModel> model;
  std::shared_ptr<const Generator> generator;
  std::shared_ptr<const Oracle> oracle;
  PerturbationConfig perturbation;
};

std::shared_ptr<const EvaluatedModel> wrap_model(std::shared_ptr<const EvaluatedModel> m, bool grayscale,
                                                 ImageShape data_shape) {
  if (grayscale) m = grayscale_wrap(std::move(m));
  if (m->input_shape() != data_shape)
    throw AdapterError("model '" + m->name() + "' expects " + m->input_shape().str() + " images, dataset has " +
                       data_shape.str());
  return m;
}

Wiring wire(const RunConfig& c) {
  c.validate();
  Wiring w;
  w.dataset = load_image_folder(c.dataset, c.channels);
  const auto& labels = w.dataset.labels;
  w.model = wrap_model(load_model(c.model, c.model_checkpoint), c.grayscale, w.dataset.shape);
  if (w.model->num_classes() != labels.size())
    throw AdapterError("model has " + std::to_string(w.model->num_classes()) + " classes, dataset has " +
                       std::to_string(labels.size()));
  w.generator = load_generator(c.generator, c.generator_checkpoint, w.dataset.shape);
  if (w.generator->image_shape() != w.dataset.shape)
    throw AdapterError("generator '" + w.generator->name() + "' produces " + w.generator->image_shape().str() +
                       " images, dataset has " + w.dataset.shape.str());
  if (c.image_bit_depth != 0) w.generator = std::make_shared<QuantizedGenerator>(w.generator, c.image_bit_depth);
  w.oracle = load_oracle(c.oracle, c.oracle_checkpoint);
  if (w.oracle->labels().names() != labels.names())
    throw AdapterError("oracle '" + w.oracle->name() + "' label set differs from the dataset classes");
  if (w.oracle->input_shape() != w.dataset.shape)
    throw AdapterError("oracle '" + w.oracle->name() + "' expects " + w.oracle->input_shape().str() + " images");

  w.perturbation.budget = c.budget;
  w.perturbation.step_size = c.step_size;
  w.perturbation.normalization = c.resolved_normalization();
  w.perturbation.normalization.validate(w.dataset.shape.channels);
  w.perturbation.seed = c.seed;
  if (!c.sparse_mask.empty()) {
    const auto mj = read_json_file(c.sparse_mask);
    w.perturbation.mask = load_mask(mj, *w.generator);
    const auto fitted_on = mj.value("dataset_name", std::string());
    if (!c.allow_foreign_mask && fitted_on != w.dataset.name)
      throw ConfigError("sparse mask was fitted on dataset '" + fitted_on + "', not '" + w.dataset.name +
                        "' (pass allow_foreign_mask to use it anyway)");
  }
  w.perturbation.validate();
  return w;
}

struct LoadedResults {
  std::vector<ResultRecord> records;
  std::string fingerprint;
  std::size_t good_bytes = 0;
};

LoadedResults load_results_file(const fs::path& path) {
  LoadedResults out;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot read " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // torn final line
    const std::string line = text.substr(pos, nl - pos);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      if (nl + 1 == text.size()) break;
      throw IntegrityError(path.string() + ": malformed record on line " + std::to_string(out.records.size() + 1));
    }
    if (j.value("schema_version", 0) != kResultSchemaVersion)
      throw IntegrityError(path.string() + ": unsupported record schema version");
    const auto fp = j.value("fingerprint", std::string());
    if (out.records.empty())
      out.fingerprint = fp;
    else if (fp != out.fingerprint)
      throw IntegrityError(path.string() + ": records from different configurations are mixed");
    out.records.push_back(ResultRecord::from_json(j));
    pos = nl + 1;
    out.good_bytes = pos;
  }
  return out;
}

json manifest_entry(const ResultRecord& r, const fs::path& export_dir) {
  json e{{"id", r.id},
         {"label", r.label},
         {"status", to_string(r.status)},
         {"clean_prediction", r.clean_prediction},
         {"final_prediction", r.final_prediction ? json(*r.final_prediction) : json(nullptr)}};
  e["original"] = {{"path", r.original_path}, {"sha256", sha256_file(export_dir / r.original_path)}};
  if (!r.image_path.empty())
    e["perturbed"] = {{"path", r.image_path}, {"sha256", sha256_file(export_dir / r.image_path)}};
  else
    e["perturbed"] = nullptr;
  return e;
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string md_cell(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '|') out += '\\';
    out += c;
  }
  return out;
}

std::string render_rows(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows,
                        ReportFormat format) {
  std::ostringstream os;
  if (format == ReportFormat::kCsv) {
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << csv_cell(cells[i]);
      os << "\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
  } else if (format == ReportFormat::kMarkdown) {
    auto line = [&](const std::vector<std::string>& cells) {
      os << "|";
      for (const auto& c : cells) os << " " << md_cell(c) << " |";
      os << "\n";
    };
    line(header);
    os << "|";
    for (std::size_t i = 0; i < header.size(); ++i) os << (i == 0 ? " --- |" : " ---: |");
    os << "\n";
    for (const auto& r : rows) line(r);
  } else {
    throw ConfigError("tables can only be written as csv or md");
  }
  return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

std::optional<double> parse_percent(const std::string& s) {
  if (s == "undefined") return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw ConfigError("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("summary csv: not a percentage: '" + s + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::find(kConfigKeys.begin(), kConfigKeys.end(), k) == kConfigKeys.end())
      throw ConfigError("config: unknown field '" + k + "'");
  RunConfig c;
  read_field(j, "dataset", c.dataset);
  read_field(j, "dataset_format", c.dataset_format);
  read_field(j, "channels", c.channels);
  read_field(j, "model", c.model);
  read_field(j, "model_checkpoint", c.model_checkpoint);
  read_field(j, "generator", c.generator);
  read_field(j, "generator_checkpoint", c.generator_checkpoint);
  read_field(j, "oracle", c.oracle);
  read_field(j, "oracle_checkpoint", c.oracle_checkpoint);
  read_field(j, "budget", c.budget);
  read_field(j, "step_size", c.step_size);
  read_field(j, "normalization", c.normalization);
  read_field(j, "image_bit_depth", c.image_bit_depth);
  if (j.contains("fgsm_epsilon") && !j["fgsm_epsilon"].is_null()) {
    double e = 0;
    read_field(j, "fgsm_epsilon", e);
    c.fgsm_epsilon = e;
  }
  read_field(j, "grayscale", c.grayscale);
  read_field(j, "sparse_mask", c.sparse_mask);
  read_field(j, "allow_foreign_mask", c.allow_foreign_mask);
  read_field(j, "output_dir", c.output_dir);
  read_field(j, "export_images", c.export_images);
  read_field(j, "save_latents", c.save_latents);
  read_field(j, "seed", c.seed);
  return c;
}

json RunConfig::to_json() const {
  return {{"dataset", dataset},
          {"dataset_format", dataset_format},
          {"channels", channels},
          {"model", model},
          {"model_checkpoint", model_checkpoint},
          {"generator", generator},
          {"generator_checkpoint", generator_checkpoint},
          {"oracle", oracle},
          {"oracle_checkpoint", oracle_checkpoint},
          {"budget", budget},
          {"step_size", step_size},
          {"normalization", normalization},
          {"image_bit_depth", image_bit_depth},
          {"fgsm_epsilon", optional_json(fgsm_epsilon)},
          {"grayscale", grayscale},
          {"sparse_mask", sparse_mask},
          {"allow_foreign_mask", allow_foreign_mask},
          {"output_dir", output_dir},
          {"export_images", export_images},
          {"save_latents", save_latents},
          {"seed", seed}};
}

Normalization RunConfig::resolved_normalization() const { return normalization_from_name(normalization); }

void RunConfig::validate() const {
  if (dataset.empty()) throw ConfigError("config: dataset is required");
  if (dataset_format != "folder")
    throw ConfigError("config: unsupported dataset_format '" + dataset_format + "' (expected folder)");
  if (!fs::is_directory(dataset)) throw ConfigError("config: dataset directory not found: " + dataset);
  if (channels != 0 && channels != 1) throw ConfigError("config: channels must be 0 or 1");
  lookup(model_registry(), model, "model");
  lookup(generator_registry(), generator, "generator");
  lookup(oracle_registry(), oracle, "oracle");
  if (budget < 1) throw ConfigError("config: budget must be >= 1");
  if (!(step_size > 0)) throw ConfigError("config: step_size must be positive");
  resolved_normalization();
  if (image_bit_depth != 0 && image_bit_depth != 8 && image_bit_depth != 16)
    throw ConfigError("config: image_bit_depth must be 0, 8 or 16");
  if (fgsm_epsilon && !(*fgsm_epsilon > 0)) throw ConfigError("config: fgsm_epsilon must be positive");
  if (!sparse_mask.empty() && !fs::is_regular_file(sparse_mask))
    throw ConfigError("config: sparse mask not found: " + sparse_mask);
  if (output_dir.empty()) throw ConfigError("config: output_dir is required");
}

std::vector<std::string> registered_models() { return keys(model_registry()); }
std::vector<std::string> registered_generators() { return keys(generator_registry()); }
std::vector<std::string> registered_oracles() { return keys(oracle_registry()); }

std::shared_ptr<const EvaluatedModel> load_model(const std::string& name, const std::string& checkpoint) {
  return lookup(model_registry(), name, "model")(checkpoint);
}
std::shared_ptr<const Generator> load_generator(const std::string& name, const std::string& checkpoint,
                                                ImageShape dataset_shape) {
  return lookup(generator_registry(), name, "generator")(checkpoint, dataset_shape);
}
std::shared_ptr<const Oracle> load_oracle(const std::string& name, const std::string& checkpoint) {
  return lookup(oracle_registry(), name, "oracle")(checkpoint);
}

// ---------------------------------------------------------------------------
// Reports and records

json report_to_json(const EvaluationReport& r) {
  json classes = json::array();
  for (const auto& c : r.per_class)
    classes.push_back({{"name", c.name},
                       {"samples", c.samples},
                       {"clean_correct", c.clean_correct},
                       {"perturbed", c.perturbed},
                       {"perturbed_correct", c.perturbed_correct},
                       {"aborted", c.aborted},
                       {"standard_accuracy", c.standard_accuracy},
                       {"perturbed_accuracy", optional_json(c.perturbed_accuracy)},
                       {"validation_rate", c.validation_rate},
                       {"fmr", optional_json(c.fmr)}});
  return {{"schema_version", kResultSchemaVersion},
          {"model", r.model_name},
          {"config_fingerprint", r.config_fingerprint},
          {"standard_accuracy", r.standard_accuracy},
          {"perturbed_accuracy", optional_json(r.perturbed_accuracy)},
          {"validation_rate", r.validation_rate},
          {"fmr", optional_json(r.fmr)},
          {"display",
           {{"SA", format_percent(r.standard_accuracy)},
            {"PA", format_percent(r.perturbed_accuracy)},
            {"VR", format_percent(r.validation_rate)},
            {"FMR", format_percent(r.fmr)}}},
          {"counts",
           {{"total", r.counts.total},
            {"clean_correct", r.counts.clean_correct},
            {"perturbed", r.counts.perturbed},
            {"perturbed_correct", r.counts.perturbed_correct},
            {"original_kept", r.counts.original_kept},
            {"aborted", r.counts.aborted}}},
          {"per_class", classes},
          {"aborted_ids", r.aborted_ids}};
}

EvaluationReport report_from_json(const json& j) {
  try {
    EvaluationReport r;
    r.model_name = j.at("model").get<std::string>();
    r.config_fingerprint = j.value("config_fingerprint", std::string());
    r.standard_accuracy = j.at("standard_accuracy").get<double>();
    r.perturbed_accuracy = optional_double(j.at("perturbed_accuracy"));
    r.validation_rate = j.at("validation_rate").get<double>();
    r.fmr = optional_double(j.at("fmr"));
    const auto& n = j.at("counts");
    r.counts = {n.at("total").get<std::size_t>(),     n.at("clean_correct").get<std::size_t>(),
                n.at("perturbed").get<std::size_t>(), n.at("perturbed_correct").get<std::size_t>(),
                n.at("original_kept").get<std::size_t>(), n.at("aborted").get<std::size_t>()};
    for (const auto& c : j.at("per_class")) {
      ClassBreakdown b;
      b.name = c.at("name").get<std::string>();
      b.samples = c.at("samples").get<std::size_t>();
      b.clean_correct = c.at("clean_correct").get<std::size_t>();
      b.perturbed = c.at("perturbed").get<std::size_t>();
      b.perturbed_correct = c.at("perturbed_correct").get<std::size_t>();
      b.aborted = c.at("aborted").get<std::size_t>();
      b.standard_accuracy = c.at("standard_accuracy").get<double>();
      b.perturbed_accuracy = optional_double(c.at("perturbed_accuracy"));
      b.validation_rate = c.at("validation_rate").get<double>();
      b.fmr = optional_double(c.at("fmr"));
      r.per_class.push_back(std::move(b));
    }
    r.aborted_ids = j.at("aborted_ids").get<std::vector<std::string>>();
    return r;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("report JSON: ") + e.what());
  }
}

json ResultRecord::to_json(const std::string& fingerprint) const {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j{{"schema_version", kResultSchemaVersion},
         {"fingerprint", fingerprint},
         {"index", index},
         {"id", id},
         {"label", label},
         {"label_name", label_name},
         {"status", to_string(status)},
         {"accepted_iterations", accepted_iterations},
         {"clean_prediction", clean_prediction},
         {"final_prediction", final_prediction ? json(*final_prediction) : json(nullptr)},
         {"oracle_verdict", oracle_verdict ? json(*oracle_verdict) : json(nullptr)},
         {"loss",
          {{"initial", opt(initial_loss)},
           {"final", opt(final_loss)},
           {"max", opt(max_loss)},
           {"evaluations", loss_evaluations}}}};
  if (!diagnostic.empty()) j["diagnostic"] = diagnostic;
  if (!original_path.empty()) j["original"] = original_path;
  if (!image_path.empty()) j["image"] = image_path;
  if (!initial_latent.empty()) j["latents"] = {{"initial", initial_latent}, {"final", final_latent}};
  return j;
}

ResultRecord ResultRecord::from_json(const json& j) {
  try {
    ResultRecord r;
    r.index = j.at("index").get<std::size_t>();
    r.id = j.at("id").get<std::string>();
    r.label = j.at("label").get<std::size_t>();
    r.label_name = j.at("label_name").get<std::string>();
    r.status = status_from_string(j.at("status").get<std::string>());
    r.accepted_iterations = j.at("accepted_iterations").get<std::size_t>();
    r.clean_prediction = j.at("clean_prediction").get<std::size_t>();
    if (!j.at("final_prediction").is_null()) r.final_prediction = j["final_prediction"].get<std::size_t>();
    if (!j.at("oracle_verdict").is_null()) r.oracle_verdict = j["oracle_verdict"].get<bool>();
    const auto& l = j.at("loss");
    r.initial_loss = optional_double(l.at("initial"));
    r.final_loss = optional_double(l.at("final"));
    r.max_loss = optional_double(l.at("max"));
    r.loss_evaluations = l.at("evaluations").get<std::size_t>();
    r.diagnostic = j.value("diagnostic", std::string());
    r.original_path = j.value("original", std::string());
    r.image_path = j.value("image", std::string());
    if (j.contains("latents")) {
      r.initial_latent = j["latents"].at("initial").get<std::vector<double>>();
      r.final_latent = j["latents"].at("final").get<std::vector<double>>();
    }
    return r;
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("result record: ") + e.what());
  } catch (const ContractViolation& e) {
    throw IntegrityError(std::string("result record: ") + e.what());
  }
}

SampleFacts ResultRecord::facts() const { return {id, label, clean_prediction, status, final_prediction}; }

EvaluationPaths evaluation_paths(const fs::path& dir) {
  return {dir / "results.jsonl", dir / "report.json", dir / "config.json", dir / "export",
          dir / "export" / "manifest.json"};
}

std::string config_fingerprint(const RunConfig& c) {
  json j = c.to_json();
  j.erase("output_dir");
  j["schema_version"] = kResultSchemaVersion;
  json files = json::object();
  for (const auto& [key, path] : {std::pair<std::string, std::string>{"model", c.model_checkpoint},
                                  {"generator", c.generator_checkpoint},
                                  {"oracle", c.oracle_checkpoint},
                                  {"sparse_mask", c.sparse_mask}})
    if (!path.empty() && fs::is_regular_file(path)) files[key] = sha256_file(path);
  j["file_digests"] = files;
  return sha256_hex(j.dump()).substr(0, 16);
}

std::vector<ResultRecord> read_results(const fs::path& jsonl, std::string* fingerprint) {
  auto loaded = load_results_file(jsonl);
  if (fingerprint) *fingerprint = loaded.fingerprint;
  return std::move(loaded.records);
}

EvaluationReport report_from_records(std::span<const ResultRecord> records, const LabelSet& labels,
                                     const std::string& model_name, const std::string& fingerprint) {
  std::vector<SampleFacts> facts;
  facts.reserve(records.size());
  for (const auto& r : records) facts.push_back(r.facts());
  return build_report(facts, labels, model_name, fingerprint);
}

// ---------------------------------------------------------------------------
// Evaluation

EvaluationResult run_evaluation(const RunConfig& config, const RunOptions& options) {
  if (options.chunk < 1) throw ConfigError("run options: chunk must be >= 1");
  const Wiring w = wire(config);
  const auto& samples = w.dataset.samples;
  const auto& labels = w.dataset.labels;
  const std::string fingerprint = config_fingerprint(config);
  const auto paths = evaluation_paths(config.output_dir);

  EvaluationResult result;
  result.fingerprint = fingerprint;

  fs::create_directories(config.output_dir);
  std::vector<ResultRecord> records;
  if (fs::exists(paths.results)) {
    auto loaded = load_results_file(paths.results);
    if (!loaded.records.empty() && loaded.fingerprint != fingerprint) {
      if (!options.overwrite)
        throw ConfigError(paths.results.string() +
                          " holds results of a different configuration; choose another output directory or overwrite");
      loaded = {};
    }
    for (std::size_t k = 0; k < loaded.records.size(); ++k)
      if (k >= samples.size() || loaded.records[k].index != k || loaded.records[k].id != samples[k].id)
        throw IntegrityError(paths.results.string() + ": record " + std::to_string(k) +
                             " does not match the dataset order");
    fs::resize_file(paths.results, loaded.good_bytes);
    records = std::move(loaded.records);
  }
  result.resumed_from = records.size();
  {
    json cj = config.to_json();
    cj["fingerprint"] = fingerprint;
    write_json_file(paths.config, cj);
  }

  std::ofstream out(paths.results, std::ios::binary | std::ios::app);
  if (!out) throw ConfigError("cannot write " + paths.results.string());
  const bool concurrent = w.model->concurrent_safe() && w.generator->concurrent_safe() && w.oracle->concurrent_safe();
  const int export_depth = config.image_bit_depth == 16 ? 16 : 8;
  const std::size_t limit = std::min(samples.size(), options.stop_after.value_or(samples.size()));

  for (std::size_t start = records.size(); start < limit; start += options.chunk) {
    const std::size_t end = std::min(limit, start + options.chunk);
    const std::span<const LabeledSample> batch(samples.data() + start, end - start);
    std::vector<PerturbationOutcome> outcomes(batch.size());
    kernels::for_each_index(
        batch.size(),
        [&](std::size_t i) {
          if (config.fgsm_epsilon) {
            const LabeledSample start_sample{
                batch[i].id,
                fgsm_init(batch[i].image, *w.model, batch[i].label, *config.fgsm_epsilon,
                          w.perturbation.normalization),
                batch[i].label};
            outcomes[i] = perturb_sample(start_sample, *w.model, *w.generator, *w.oracle, w.perturbation);
          } else {
            outcomes[i] = perturb_sample(batch[i], *w.model, *w.generator, *w.oracle, w.perturbation);
          }
        },
        concurrent);
    const auto facts = collect_facts(batch, outcomes, *w.model, w.perturbation.normalization);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto rec = make_record(start + i, batch[i], labels, facts[i], outcomes[i], config.save_latents);
      if (config.export_images) {
        rec.original_path = export_relpath("original", batch[i].id).generic_string();
        write_png(paths.export_dir / rec.original_path, batch[i].image, export_depth);
        if (rec.status == OutcomeStatus::kPerturbed) {
          rec.image_path = export_relpath("perturbed", batch[i].id).generic_string();
          write_png(paths.export_dir / rec.image_path, outcomes[i].final_image, export_depth);
        }
      }
      out << rec.to_json(fingerprint).dump() << '\n';
      records.push_back(std::move(rec));
    }
    out.flush();
    if (!out) throw ConfigError("failed writing " + paths.results.string());
    if (options.on_progress) options.on_progress(records.size(), samples.size());
  }
  out.close();

  result.complete = records.size() == samples.size();
  if (result.complete) {
    // the report always comes from what is on disk
    result.records = read_results(paths.results);
    result.report = report_from_records(result.records, labels, w.model->name(), fingerprint);
    write_json_file(paths.report, report_to_json(result.report));
    if (config.export_images) {
      json entries = json::array();
      for (const auto& r : result.records) entries.push_back(manifest_entry(r, paths.export_dir));
      write_json_file(paths.manifest, {{"schema_version", kResultSchemaVersion},
                                       {"format", "fmr-export"},
                                       {"bit_depth", export_depth},
                                       {"quantization_error", png_quantization_error(export_depth)},
                                       {"generator_output_bit_depth", config.image_bit_depth},
                                       {"classes", labels.names()},
                                       {"image_shape", shape_to_json(w.dataset.shape)},
                                       {"source",
                                        {{"model", w.model->name()},
                                         {"fingerprint", fingerprint},
                                         {"dataset", w.dataset.name},
                                         {"report", report_to_json(result.report)}}},
                                       {"entries", entries}});
    }
  } else {
    result.records = std::move(records);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Transfer

TransferResult run_transfer(const fs::path& manifest_path, const TransferOptions& options) {
  if (!fs::is_regular_file(manifest_path)) throw ConfigError("manifest not found: " + manifest_path.string());
  const auto manifest = read_json_file(manifest_path);
  if (manifest.value("format", std::string()) != "fmr-export")
    throw IntegrityError(manifest_path.string() + " is not an export manifest");
  const fs::path root = manifest_path.parent_path();

  LabelSet labels;
  ImageShape shape;
  try {
    labels = LabelSet(manifest.at("classes").get<std::vector<std::string>>());
    shape = shape_from_json(manifest.at("image_shape"));
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("manifest: ") + e.what());
  }
  const auto norm = normalization_from_name(options.normalization);
  auto model = wrap_model(load_model(options.model, options.model_checkpoint), options.grayscale, shape);
  if (model->num_classes() != labels.size()) throw AdapterError("model class count differs from the exported set");

  struct Item {
    std::string id;
    std::size_t label;
    OutcomeStatus status;
    std::size_t source_clean;
    std::optional<std::size_t> source_final;
    fs::path original, perturbed;
  };
  std::vector<Item> items;
  auto verified = [&](const json& ref) {
    const fs::path p = root / ref.at("path").get<std::string>();
    if (!fs::is_regular_file(p)) throw IntegrityError("exported image missing: " + p.string());
    if (sha256_file(p) != ref.at("sha256").get<std::string>())
      throw IntegrityError("checksum mismatch for " + p.string());
    return p;
  };
  try {
    for (const auto& e : manifest.at("entries")) {
      Item it{e.at("id").get<std::string>(),
              e.at("label").get<std::size_t>(),
              status_from_string(e.at("status").get<std::string>()),
              e.at("clean_prediction").get<std::size_t>(),
              std::nullopt,
              verified(e.at("original")),
              {}};
      if (!e.at("final_prediction").is_null()) it.source_final = e["final_prediction"].get<std::size_t>();
      if (!e.at("perturbed").is_null()) it.perturbed = verified(e["perturbed"]);
      if (it.status == OutcomeStatus::kPerturbed && it.perturbed.empty())
        throw IntegrityError("manifest entry " + it.id + " is PERTURBED but has no image");
      if (it.label >= labels.size()) throw IntegrityError("manifest entry " + it.id + " has an invalid label");
      items.push_back(std::move(it));
    }
  } catch (const json::exception& e) {
    throw IntegrityError(std::string("manifest: ") + e.what());
  } catch (const ContractViolation& e) {
    throw IntegrityError(std::string("manifest: ") + e.what());
  }
  if (items.empty()) throw ConfigError("manifest lists no samples");

  TransferResult out;
  out.facts.resize(items.size());
  kernels::for_each_index(
      items.size(),
      [&](std::size_t i) {
        const auto& it = items[i];
        auto& f = out.facts[i];
        f.id = it.id;
        f.label = it.label;
        f.status = it.status;
        const Image orig = read_png(it.original);
        if (orig.shape() != shape) throw IntegrityError("unexpected image shape in " + it.original.string());
        f.clean_prediction = model->predict_class(norm.apply(orig));
        if (it.status == OutcomeStatus::kPerturbed) {
          const Image pert = read_png(it.perturbed);
          if (pert.shape() != shape) throw IntegrityError("unexpected image shape in " + it.perturbed.string());
          f.final_prediction = model->predict_class(norm.apply(pert));
        }
      },
      model->concurrent_safe());
  for (std::size_t i = 0; i < items.size(); ++i) {
    out.clean_prediction_changes += out.facts[i].clean_prediction != items[i].source_clean;
    out.final_prediction_changes += out.facts[i].final_prediction != items[i].source_final;
  }
  out.report = build_report(out.facts, labels, model->name(), sha256_file(manifest_path).substr(0, 16));
  return out;
}

LatentClassificationDataset latents_from_results(std::span<const ResultRecord> records, std::size_t latent_dim) {
  std::vector<PerturbationOutcome> outcomes;
  for (const auto& r : records) {
    if (r.status != OutcomeStatus::kPerturbed) continue;
    if (r.initial_latent.size() != latent_dim || r.final_latent.size() != latent_dim)
      throw ConfigError("results do not carry latents of size " + std::to_string(latent_dim) +
                        " (run the evaluation with save_latents)");
    PerturbationOutcome o;
    o.status = r.status;
    o.initial_latent.values = r.initial_latent;
    o.final_latent.values = r.final_latent;
    outcomes.push_back(std::move(o));
  }
  if (outcomes.empty()) throw InsufficientDataError("no PERTURBED records to learn a mask from");
  PixelGenerator dims_only({1, latent_dim, 1});
  return collect_latents(outcomes, dims_only);
}

// ---------------------------------------------------------------------------
// Report emission

ReportFormat report_format_from_string(const std::string& s) {
  if (s == "csv") return ReportFormat::kCsv;
  if (s == "md" || s == "markdown") return ReportFormat::kMarkdown;
  if (s == "png") return ReportFormat::kPng;
  throw ConfigError("unsupported report format '" + s + "' (expected csv, md or png)");
}

std::string summary_table(std::span<const EvaluationReport> reports, ReportFormat format) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : reports)
    rows.push_back({r.model_name, format_percent(r.standard_accuracy), format_percent(r.perturbed_accuracy),
                    format_percent(r.fmr)});
  return render_rows({"Model", "SA", "PA", "FMR"}, rows, format);
}

std::string per_class_table(const EvaluationReport& r, ReportFormat format) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& c : r.per_class)
    rows.push_back({c.name, format_percent(c.standard_accuracy), format_percent(c.perturbed_accuracy),
                    format_percent(c.validation_rate), format_percent(c.fmr)});
  rows.push_back({"Total", format_percent(r.standard_accuracy), format_percent(r.perturbed_accuracy),
                  format_percent(r.validation_rate), format_percent(r.fmr)});
  return render_rows({"Class", "SA", "PA", "VR", "FMR"}, rows, format);
}

std::vector<SummaryRow> parse_summary_csv(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"Model", "SA", "PA", "FMR"})
    throw ConfigError("summary csv: unexpected header");
  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4) throw ConfigError("summary csv: expected 4 cells in '" + line + "'");
    rows.push_back({cells[0], parse_percent(cells[1]), parse_percent(cells[2]), parse_percent(cells[3])});
  }
  return rows;
}

Image fmr_bar_plot(std::span<const EvaluationReport> reports) {
  require(!reports.empty(), "bar plot needs at least one report");
  const std::size_t bar = 24, gap = 12, height = 120, margin = 10;
  const std::size_t width = 2 * margin + reports.size() * bar + (reports.size() - 1) * gap;
  Image img({height + 2 * margin, width, 3}, 1.0);
  const std::size_t base = margin + height;
  for (std::size_t x = margin / 2; x < width - margin / 2; ++x)
    for (std::size_t c = 0; c < 3; ++c) {
      img.at(base, x, c) = 0.0;       // axis
      img.at(margin, x, c) = 0.75;    // the 100 line
    }
  for (std::size_t k = 0; k < reports.size(); ++k) {
    const double v = std::clamp(reports[k].fmr.value_or(0.0), 0.0, 100.0);
    const auto h = static_cast<std::size_t>(std::lround(v / 100.0 * static_cast<double>(height)));
    const std::size_t x0 = margin + k * (bar + gap);
    const double shade = reports[k].fmr ? 0.0 : 0.6;
    for (std::size_t y = base - h; y < base; ++y)
      for (std::size_t x = x0; x < x0 + bar; ++x) {
        img.at(y, x, 0) = 0.2 + shade;
        img.at(y, x, 1) = 0.4 + shade * 0.5;
        img.at(y, x, 2) = 0.75;
      }
  }
  return img;
}

void emit_report(std::span<const EvaluationReport> reports, ReportFormat format, const fs::path& out,
                 bool per_class) {
  if (reports.empty()) throw ConfigError("no reports to emit");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  if (format == ReportFormat::kPng) {
    write_png(out, fmr_bar_plot(reports));
    return;
  }
  std::string text;
  if (per_class) {
    for (std::size_t i = 0; i < reports.size(); ++i) {
      if (format == ReportFormat::kMarkdown && reports.size() > 1) text += "### " + reports[i].model_name + "\n\n";
      text += per_class_table(reports[i], format);
      if (i + 1 < reports.size()) text += "\n";
    }
  } else {
    text = summary_table(reports, format);
  }
  std::ofstream f(out, std::ios::binary);
  if (!f) throw ConfigError("cannot write " + out.string());
  f << text;
}

// ---------------------------------------------------------------------------
// Fixtures

FixturePaths build_fixtures(const fs::path& dir, const FixtureOptions& o) {
  auto log = [&](const std::string& s) {
    if (o.log) o.log(s);
  };
  FixturePaths p{dir / "train",        dir / "test",         o.rgb_test ? dir / "test_rgb" : fs::path(),
                 dir / "convnet.json", dir / "mlp.json",     dir / "reference-ae.json",
                 dir / "surrogate.json", dir / "config.json"};
  const auto labels = digit_labels();
  const auto train = make_digits({.per_class = o.train_per_class, .seed = o.seed * 4 + 1, .id_prefix = "train_"});
  const auto test = make_digits({.per_class = o.test_per_class, .seed = o.seed * 4 + 2, .id_prefix = "test_"});
  for (const auto& d : {p.train, p.test, p.test_rgb})
    if (!d.empty()) fs::remove_all(d);
  write_image_folder(p.train, train, labels);
  write_image_folder(p.test, test, labels);
  if (o.rgb_test)
    write_image_folder(p.test_rgb,
                       make_digits({.per_class = o.test_per_class, .channels = 3, .seed = o.seed * 4 + 3,
                                    .id_prefix = "rgb_"}),
                       labels);
  log("wrote digit folders");

  // train on what the harness will read back, i.e. after PNG quantization
  const auto stored = load_image_folder(p.train).samples;
  const TrainOptions cls{.epochs = 8, .batch = 32, .learning_rate = 3e-3, .seed = o.seed * 16 + 1};
  auto conv = train_classifier("convnet", Architecture::kConvnet, stored, labels.size(), cls);
  write_json_file(p.convnet, conv.to_json());
  log("convnet train accuracy " + format_percent(accuracy(conv, stored)));
  auto mlp = train_classifier("mlp", Architecture::kMlp, stored, labels.size(),
                              {.epochs = 8, .batch = 32, .learning_rate = 3e-3, .seed = o.seed * 16 + 2});
  write_json_file(p.mlp, mlp.to_json());
  log("mlp train accuracy " + format_percent(accuracy(mlp, stored)));

  const auto ae = train_autoencoder(
      stored, {.latent_dim = 32,
               .latent_scale = o.latent_scale,
               .train = {.epochs = 30, .batch = 32, .learning_rate = 3e-3, .seed = o.seed * 16 + 3}});
  write_json_file(p.autoencoder, ae.to_json());
  log("autoencoder reconstruction mse " + std::to_string(ae.reconstruction_mse));

  // the oracle sees a larger draw, quantized like the stored images
  auto oracle_train = make_digits({.per_class = o.oracle_per_class, .seed = o.seed * 4 + 4, .id_prefix = "oracle_"});
  for (auto& s : oracle_train)
    for (double& v : s.image.data()) v = std::round(v * 255.0) / 255.0;
  const auto oracle = train_surrogate_oracle(
      oracle_train, labels, &ae, {.train = {.epochs = 15, .batch = 32, .learning_rate = 2e-3, .seed = o.seed * 16 + 4}});
  write_json_file(p.oracle, oracle.to_json());
  log("surrogate oracle trained");

  RunConfig c;
  c.dataset = p.test.string();
  c.model = "convnet";
  c.model_checkpoint = p.convnet.string();
  c.generator = "reference-ae";
  c.generator_checkpoint = p.autoencoder.string();
  c.oracle = "surrogate";
  c.oracle_checkpoint = p.oracle.string();
  c.output_dir = (dir / "run").string();
  c.seed = o.seed;
  write_json_file(p.config, c.to_json());
  return p;
}

}  // namespace fmr
