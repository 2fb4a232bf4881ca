#pragma once

// Desk-scale fixtures: a synthetic ten-class digit set and the offline
// training loops for the evaluated models, the reference autoencoder and the
// surrogate oracle. Everything is seeded; minibatch gradients are computed
// per sample (concurrently when allowed) and reduced in sample order, so a
// given seed produces the same weights on any thread count.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fmr/generator.hpp"
#include "fmr/models.hpp"
#include "fmr/oracle.hpp"
#include "fmr/types.hpp"

namespace fmr {

struct DigitOptions {
  std::size_t per_class = 100;
  std::size_t size = 16;     // square canvas
  std::size_t channels = 1;  // 1 = gray, 3 = random stroke colour
  double noise = 0.03;       // additive Gaussian pixel noise
  std::uint64_t seed = 0;
  std::string id_prefix;     // prepended to sample ids
};

// "zero" .. "nine"
LabelSet digit_labels();

// Seven-segment style digits with random placement, scale, slant, stroke
// width and brightness. Class-major order.
std::vector<LabeledSample> make_digits(const DigitOptions& options);

// Writes root/<class>/<id>.png plus root/index.json fixing the class order.
void write_image_folder(const std::filesystem::path& root, std::span<const LabeledSample> samples,
                        const LabelSet& labels, int bit_depth = 8);

struct TrainOptions {
  int epochs = 10;
  std::size_t batch = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  double pgd_epsilon = 0.0;  // > 0 trains on l_inf PGD examples
  int pgd_steps = 5;
  std::function<void(int epoch, double mean_loss)> on_epoch;
};

enum class Architecture { kMlp, kConvnet };
Architecture architecture_from_string(const std::string& name);

nn::Network make_classifier_network(Architecture arch, ImageShape shape, std::size_t classes,
                                    std::uint64_t seed);

NetworkClassifier train_classifier(const std::string& name, Architecture arch,
                                   std::span<const LabeledSample> train, std::size_t classes,
                                   const TrainOptions& options);

// l_inf projected sign-gradient ascent from a seeded random start.
Image pgd_attack(const Image& image, const EvaluatedModel& model, std::size_t label, double epsilon,
                 int steps, std::mt19937_64& rng);

double accuracy(const EvaluatedModel& model, std::span<const LabeledSample> samples);

struct AutoencoderOptions {
  std::size_t latent_dim = 32;
  double latent_scale = 0.05;
  TrainOptions train;
};

// Fits on `train`; reconstruction_mse / reconstruction_bound are the mean and
// max per-image MSE over `train`.
ReferenceAutoencoder train_autoencoder(std::span<const LabeledSample> train, const AutoencoderOptions& options);

struct OracleOptions {
  std::size_t hidden = 128;
  std::size_t embedding_dim = 32;
  double logit_scale = 20.0;
  TrainOptions train;
};

// Fixed text embedding for a prompt, derived from a hash of the string.
std::vector<double> prompt_embedding(const std::string& prompt, std::size_t dim);

// Trains the image tower against fixed prompt embeddings on `train`, plus the
// autoencoder reconstructions of `train` when an autoencoder is given.
SurrogateOracle train_surrogate_oracle(std::span<const LabeledSample> train, const LabelSet& labels,
                                       const ReferenceAutoencoder* reconstructions, const OracleOptions& options);

// d(loss)/d(embedding) for cosine_logits, given d(loss)/d(logits).
std::vector<double> cosine_logits_backward(std::span<const double> embedding,
                                           const std::vector<std::vector<double>>& class_embeddings,
                                           double scale, std::span<const double> grad_logits);

}  // namespace fmr
