#include "fmr/training.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "fmr/checkpoint.hpp"
#include "fmr/error.hpp"
#include "fmr/io.hpp"
#include "fmr/kernels.hpp"

namespace fmr {

namespace {

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

// Segments a..g as (x0, y0, x1, y1) in a unit box, y pointing down.
constexpr std::array<std::array<double, 4>, 7> kSegments{{
    {0, 0, 1, 0},      // a
    {1, 0, 1, 0.5},    // b
    {1, 0.5, 1, 1},    // c
    {0, 1, 1, 1},      // d
    {0, 0.5, 0, 1},    // e
    {0, 0, 0, 0.5},    // f
    {0, 0.5, 1, 0.5},  // g
}};

// bit i set = segment i lit
constexpr std::array<unsigned, 10> kDigitSegments{
    0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110,
    0b1101101, 0b1111101, 0b0000111, 0b1111111, 0b1101111,
};

double segment_distance(double px, double py, double x0, double y0, double x1, double y1) {
  const double dx = x1 - x0, dy = y1 - y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - x0) * dx + (py - y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (x0 + t * dx), py - (y0 + t * dy));
}

Image render_digit(std::size_t digit, const DigitOptions& o, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double n = static_cast<double>(o.size);
  const double scale = 0.9 + 0.2 * u(rng);
  const double box_w = 0.42 * n * scale, box_h = 0.66 * n * scale;
  const double cx = n / 2 + (u(rng) - 0.5) * 0.14 * n, cy = n / 2 + (u(rng) - 0.5) * 0.14 * n;
  const double slant = (u(rng) - 0.5) * 0.3;
  const double half_width = (0.045 + 0.03 * u(rng)) * n;
  const double brightness = 0.8 + 0.2 * u(rng);
  std::array<double, 3> colour{1.0, 1.0, 1.0};
  if (o.channels == 3)
    for (double& c : colour) c = 0.35 + 0.65 * u(rng);

  std::vector<std::array<double, 4>> strokes;
  for (std::size_t s = 0; s < 7; ++s) {
    if (!(kDigitSegments[digit] >> s & 1u)) continue;
    auto seg = kSegments[s];
    std::array<double, 4> p{};
    for (int e = 0; e < 2; ++e) {
      const double bx = seg[2 * e], by = seg[2 * e + 1];
      const double y = cy + (by - 0.5) * box_h;
      const double x = cx + (bx - 0.5) * box_w - slant * (by - 0.5) * box_h;
      p[2 * e] = x;
      p[2 * e + 1] = y;
    }
    strokes.push_back(p);
  }

  std::normal_distribution<double> noise(0.0, o.noise);
  Image img({o.size, o.size, o.channels});
  for (std::size_t y = 0; y < o.size; ++y)
    for (std::size_t x = 0; x < o.size; ++x) {
      double d = 1e9;
      for (const auto& s : strokes)
        d = std::min(d, segment_distance(x + 0.5, y + 0.5, s[0], s[1], s[2], s[3]));
      const double ink = std::clamp(1.0 - (d - half_width), 0.0, 1.0) * brightness;
      for (std::size_t c = 0; c < o.channels; ++c) {
        const double v = ink * colour[c] + (o.noise > 0 ? noise(rng) : 0.0);
        img.at(y, x, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  return img;
}

// Per-sample gradients for one minibatch, summed in index order and averaged.
struct BatchGradients {
  double loss = 0.0;
  std::vector<nn::Gradients> grads;
};

BatchGradients batch_gradients(std::size_t count, const std::vector<const nn::Network*>& nets,
                               const std::function<double(std::size_t, std::vector<nn::Gradients>&)>& body) {
  std::vector<std::vector<nn::Gradients>> per(count);
  std::vector<double> losses(count, 0.0);
  kernels::for_each_index(count, [&](std::size_t i) {
    for (const auto* n : nets) per[i].push_back(n->zero_gradients());
    losses[i] = body(i, per[i]);
  });
  BatchGradients out;
  for (const auto* n : nets) out.grads.push_back(n->zero_gradients());
  for (std::size_t i = 0; i < count; ++i) {
    out.loss += losses[i];
    for (std::size_t k = 0; k < nets.size(); ++k) out.grads[k].add(per[i][k]);
  }
  const double inv = 1.0 / static_cast<double>(count);
  for (auto& g : out.grads) g.scale(inv);
  out.loss *= inv;
  return out;
}

void check_train_options(const TrainOptions& o) {
  if (o.epochs < 1) throw ConfigError("training: epochs must be >= 1");
  if (o.batch < 1) throw ConfigError("training: batch size must be >= 1");
  if (!(o.learning_rate > 0)) throw ConfigError("training: learning rate must be positive");
}

// Runs `epochs` passes over `n` items in seeded shuffled minibatches.
template <class Step>
void for_each_minibatch(std::size_t n, const TrainOptions& o, Step&& step) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < o.epochs; ++epoch) {
    auto rng = derived_rng(o.seed, 0x7e40c0deULL, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += o.batch) {
      const std::size_t end = std::min(n, start + o.batch);
      total += step(std::span<const std::size_t>(order.data() + start, end - start), epoch);
      ++batches;
    }
    if (o.on_epoch) o.on_epoch(epoch + 1, total / static_cast<double>(batches));
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

LabelSet digit_labels() {
  return LabelSet({"zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"});
}

std::vector<LabeledSample> make_digits(const DigitOptions& o) {
  if (o.size < 8) throw ConfigError("digit canvas must be at least 8 pixels");
  if (o.channels != 1 && o.channels != 3) throw ConfigError("digits: channels must be 1 or 3");
  if (o.noise < 0) throw ConfigError("digits: noise must be >= 0");
  const auto labels = digit_labels();
  std::vector<LabeledSample> out(10 * o.per_class);
  kernels::for_each_index(out.size(), [&](std::size_t i) {
    const std::size_t digit = i / o.per_class, k = i % o.per_class;
    auto rng = derived_rng(o.seed, digit, k);
    char buf[24];
    std::snprintf(buf, sizeof buf, "%05zu", k);
    out[i] = {o.id_prefix + labels.name(digit) + "_" + buf, render_digit(digit, o, rng), digit};
  });
  return out;
}

void write_image_folder(const std::filesystem::path& root, std::span<const LabeledSample> samples,
                        const LabelSet& labels, int bit_depth) {
  std::filesystem::create_directories(root);
  for (const auto& s : samples) {
    require(s.label < labels.size(), "write_image_folder: label outside label set");
    write_png(root / labels.name(s.label) / (s.id + ".png"), s.image, bit_depth);
  }
  write_json_file(root / "index.json", {{"classes", labels.names()}});
}

Architecture architecture_from_string(const std::string& name) {
  if (name == "mlp") return Architecture::kMlp;
  if (name == "convnet") return Architecture::kConvnet;
  throw ConfigError("unknown architecture '" + name + "' (expected mlp or convnet)");
}

nn::Network make_classifier_network(Architecture arch, ImageShape shape, std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  if (arch == Architecture::kMlp)
    return nn::Network(shape.size(), {nn::make_dense(shape.size(), 64, rng), nn::Tanh{}, nn::make_dense(64, classes, rng)});
  const std::size_t channels = 8;
  const std::size_t oh = shape.height - 2, ow = shape.width - 2;
  return nn::Network(shape.size(), {nn::make_conv(shape.height, shape.width, shape.channels, channels, 3, rng),
                                    nn::Tanh{}, nn::AvgPool2{oh, ow, channels},
                                    nn::make_dense((oh / 2) * (ow / 2) * channels, classes, rng)});
}

Image pgd_attack(const Image& image, const EvaluatedModel& model, std::size_t label, double epsilon, int steps,
                 std::mt19937_64& rng) {
  require(epsilon > 0 && steps >= 1, "pgd_attack: epsilon > 0 and steps >= 1 required");
  std::uniform_real_distribution<double> u(-epsilon, epsilon);
  const double alpha = 2.5 * epsilon / steps;
  Image x = image;
  for (double& v : x.data()) v += u(rng);
  x.clamp_unit();
  for (int s = 0; s < steps; ++s) {
    const auto g = model.loss_gradient(x, label).gradient;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double sg = g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0);
      const double v = x.data()[i] + alpha * sg;
      x.data()[i] = std::clamp(std::clamp(v, image.data()[i] - epsilon, image.data()[i] + epsilon), 0.0, 1.0);
    }
  }
  return x;
}

NetworkClassifier train_classifier(const std::string& name, Architecture arch, std::span<const LabeledSample> train,
                                   std::size_t classes, const TrainOptions& o) {
  check_train_options(o);
  if (train.empty()) throw ConfigError("train_classifier: empty training set");
  const ImageShape shape = train.front().image.shape();
  NetworkClassifier model(name, shape, make_classifier_network(arch, shape, classes, o.seed));
  nn::Adam adam(model.network(), o.learning_rate);
  for_each_minibatch(train.size(), o, [&](std::span<const std::size_t> idx, int epoch) {
    const NetworkClassifier snapshot = model;
    const auto& net = snapshot.network();
    auto bg = batch_gradients(idx.size(), {&net}, [&](std::size_t i, std::vector<nn::Gradients>& g) {
      const auto& s = train[idx[i]];
      Image x = s.image;
      if (o.pgd_epsilon > 0) {
        auto rng = derived_rng(o.seed ^ 0x9d9dULL, static_cast<std::uint64_t>(epoch), idx[i]);
        x = pgd_attack(s.image, snapshot, s.label, o.pgd_epsilon, o.pgd_steps, rng);
      }
      const auto trace = net.forward_trace(x.values());
      const auto ce = softmax_cross_entropy(trace.output(), s.label);
      net.backward(trace, ce.gradient, &g[0]);
      return ce.loss;
    });
    adam.step(model.network(), bg.grads[0]);
    return bg.loss;
  });
  return model;
}

double accuracy(const EvaluatedModel& model, std::span<const LabeledSample> samples) {
  require(!samples.empty(), "accuracy: empty sample set");
  std::vector<char> ok(samples.size(), 0);
  kernels::for_each_index(samples.size(), [&](std::size_t i) {
    ok[i] = model.predict_class(samples[i].image) == samples[i].label;
  }, model.concurrent_safe());
  return 100.0 * static_cast<double>(std::count(ok.begin(), ok.end(), 1)) / static_cast<double>(samples.size());
}

ReferenceAutoencoder train_autoencoder(std::span<const LabeledSample> train, const AutoencoderOptions& options) {
  const auto& o = options.train;
  check_train_options(o);
  if (train.empty()) throw ConfigError("train_autoencoder: empty training set");
  if (options.latent_dim < 1) throw ConfigError("train_autoencoder: latent_dim must be >= 1");
  if (!(options.latent_scale > 0)) throw ConfigError("train_autoencoder: latent_scale must be positive");
  const ImageShape shape = train.front().image.shape();
  const std::size_t p = shape.size();
  std::mt19937_64 rng(o.seed);
  nn::Network enc(p, {nn::make_dense(p, options.latent_dim, rng)});
  nn::Network dec(options.latent_dim, {nn::make_dense(options.latent_dim, p, rng), nn::Sigmoid{}});
  nn::Adam adam_e(enc, o.learning_rate), adam_d(dec, o.learning_rate);
  const double inv_p = 1.0 / static_cast<double>(p);

  auto reconstruct_loss = [&](const nn::Network& e, const nn::Network& d, const Image& x,
                              std::vector<nn::Gradients>* g) {
    const auto te = e.forward_trace(x.values());
    const auto td = d.forward_trace(te.output());
    const auto out = td.output();
    std::vector<double> grad(p);
    double loss = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      const double diff = out[i] - x.data()[i];
      loss += diff * diff * inv_p;
      grad[i] = 2.0 * diff * inv_p;
    }
    if (g) {
      const auto gz = d.backward(td, grad, &(*g)[1]);
      e.backward(te, gz, &(*g)[0]);
    }
    return loss;
  };

  for_each_minibatch(train.size(), o, [&](std::span<const std::size_t> idx, int) {
    const nn::Network e = enc, d = dec;
    auto bg = batch_gradients(idx.size(), {&e, &d}, [&](std::size_t i, std::vector<nn::Gradients>& g) {
      return reconstruct_loss(e, d, train[idx[i]].image, &g);
    });
    adam_e.step(enc, bg.grads[0]);
    adam_d.step(dec, bg.grads[1]);
    return bg.loss;
  });

  ReferenceAutoencoder ae(shape, enc, dec, options.latent_scale);
  std::vector<double> mse(train.size());
  kernels::for_each_index(train.size(), [&](std::size_t i) {
    mse[i] = mean_squared_error(ae.decode(ae.encode(train[i].image)), train[i].image);
  });
  ae.reconstruction_mse = std::accumulate(mse.begin(), mse.end(), 0.0) / static_cast<double>(mse.size());
  ae.reconstruction_bound = *std::max_element(mse.begin(), mse.end());
  return ae;
}

std::vector<double> prompt_embedding(const std::string& prompt, std::size_t dim) {
  std::mt19937_64 rng(fnv1a(prompt));
  std::normal_distribution<double> n;
  std::vector<double> e(dim);
  for (double& v : e) v = n(rng);
  return e;
}

std::vector<double> cosine_logits_backward(std::span<const double> embedding,
                                           const std::vector<std::vector<double>>& class_embeddings, double scale,
                                           std::span<const double> grad_logits) {
  double norm2 = 0.0;
  for (double v : embedding) norm2 += v * v;
  std::vector<double> g(embedding.size(), 0.0);
  if (norm2 == 0.0) return g;
  const double norm = std::sqrt(norm2);
  for (std::size_t k = 0; k < class_embeddings.size(); ++k) {
    const auto& c = class_embeddings[k];
    double dot = 0.0;
    for (std::size_t i = 0; i < embedding.size(); ++i) dot += embedding[i] * c[i];
    const double a = grad_logits[k] * scale / norm;
    for (std::size_t i = 0; i < embedding.size(); ++i) g[i] += a * (c[i] - dot * embedding[i] / norm2);
  }
  return g;
}

SurrogateOracle train_surrogate_oracle(std::span<const LabeledSample> train, const LabelSet& labels,
                                       const ReferenceAutoencoder* reconstructions, const OracleOptions& options) {
  const auto& o = options.train;
  check_train_options(o);
  if (train.empty()) throw ConfigError("train_surrogate_oracle: empty training set");
  const ImageShape shape = train.front().image.shape();

  std::vector<LabeledSample> data(train.begin(), train.end());
  if (reconstructions) {
    std::vector<LabeledSample> rec(train.size());
    kernels::for_each_index(train.size(), [&](std::size_t i) {
      rec[i] = {train[i].id + "#rec", reconstructions->decode(reconstructions->encode(train[i].image)),
                train[i].label};
    });
    data.insert(data.end(), rec.begin(), rec.end());
  }

  std::map<std::string, std::vector<double>> prompts;
  std::vector<std::vector<double>> class_emb;
  for (const auto& p : build_prompts(labels)) {
    auto e = prompt_embedding(p, options.embedding_dim);
    prompts[p] = e;
    double n = 0.0;
    for (double v : e) n += v * v;
    n = std::sqrt(n);
    for (double& v : e) v /= n;
    class_emb.push_back(std::move(e));
  }

  std::mt19937_64 rng(o.seed);
  nn::Network enc(shape.size(), {nn::make_dense(shape.size(), options.hidden, rng), nn::Tanh{},
                                 nn::make_dense(options.hidden, options.embedding_dim, rng)});
  nn::Adam adam(enc, o.learning_rate);
  for_each_minibatch(data.size(), o, [&](std::span<const std::size_t> idx, int) {
    const nn::Network e = enc;
    auto bg = batch_gradients(idx.size(), {&e}, [&](std::size_t i, std::vector<nn::Gradients>& g) {
      const auto& s = data[idx[i]];
      const auto trace = e.forward_trace(s.image.values());
      const auto logits = cosine_logits(trace.output(), class_emb, options.logit_scale);
      const auto ce = softmax_cross_entropy(logits, s.label);
      const auto ge = cosine_logits_backward(trace.output(), class_emb, options.logit_scale, ce.gradient);
      e.backward(trace, ge, &g[0]);
      return ce.loss;
    });
    adam.step(enc, bg.grads[0]);
    return bg.loss;
  });
  return SurrogateOracle(labels, shape, std::move(enc), std::move(prompts), options.logit_scale);
}

}  // namespace fmr
