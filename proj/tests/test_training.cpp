#include <doctest.h>

#include "fixtures.hpp"
#include "fmr/error.hpp"
#include "fmr/training.hpp"

using namespace fmr;
using namespace fmr::testing;

TEST_CASE("digits: shape, order, range and determinism") {
  const auto a = make_digits({.per_class = 4, .seed = 7});
  const auto b = make_digits({.per_class = 4, .seed = 7});
  const auto c = make_digits({.per_class = 4, .seed = 8});
  REQUIRE(a.size() == 40);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].label == i / 4);
    CHECK(a[i].image.shape() == ImageShape{16, 16, 1});
    CHECK(a[i].image.in_unit_range());
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].id == b[i].id);
  }
  CHECK(a[0].image != c[0].image);
  const auto rgb = make_digits({.per_class = 1, .channels = 3, .seed = 1});
  CHECK(rgb[0].image.shape().channels == 3);
  CHECK_THROWS_AS(make_digits({.channels = 2}), ConfigError);
}

TEST_CASE("digits: every class has visible ink") {
  const auto all = make_digits({.per_class = 1, .noise = 0.0, .seed = 3});
  for (std::size_t d = 0; d < 10; ++d) {
    double ink = 0.0;
    for (double v : all[d].image.data()) ink += v;
    CHECK(ink > 5.0);
  }
}

TEST_CASE("cosine logits pullback matches finite differences") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  std::vector<std::vector<double>> classes(4, std::vector<double>(6));
  for (auto& c : classes) {
    double norm = 0.0;
    for (double& v : c) {
      v = n(rng);
      norm += v * v;
    }
    for (double& v : c) v /= std::sqrt(norm);
  }
  std::vector<double> e(6), g_logits(4);
  for (double& v : e) v = n(rng);
  for (double& v : g_logits) v = n(rng);
  const auto analytic = cosine_logits_backward(e, classes, 7.0, g_logits);
  auto f = [&](const std::vector<double>& x) {
    const auto l = cosine_logits(x, classes, 7.0);
    double s = 0.0;
    for (std::size_t k = 0; k < l.size(); ++k) s += g_logits[k] * l[k];
    return s;
  };
  CHECK(check_gradient(f, e, analytic, 6, 1).max_rel_error <= 1e-6);
}

TEST_CASE("prompt embeddings are stable per string") {
  CHECK(prompt_embedding("a photo of a cat.", 8) == prompt_embedding("a photo of a cat.", 8));
  CHECK(prompt_embedding("a photo of a cat.", 8) != prompt_embedding("a photo of a dog.", 8));
}

TEST_CASE("classifier training is seeded and learns the digits") {
  const auto train = make_digits({.per_class = 20, .seed = 1});
  const TrainOptions o{.epochs = 6, .batch = 16, .learning_rate = 3e-3, .seed = 9};
  int calls = 0;
  TrainOptions counted = o;
  counted.on_epoch = [&](int, double loss) {
    ++calls;
    CHECK(std::isfinite(loss));
  };
  const auto a = train_classifier("convnet", Architecture::kConvnet, train, 10, counted);
  const auto b = train_classifier("convnet", Architecture::kConvnet, train, 10, o);
  CHECK(calls == 6);
  CHECK(a.network().to_json() == b.network().to_json());
  CHECK(accuracy(a, train) >= 90.0);
  const auto mlp = train_classifier("mlp", Architecture::kMlp, train, 10, o);
  CHECK(accuracy(mlp, train) >= 90.0);
  CHECK_THROWS_AS(architecture_from_string("resnet"), ConfigError);
  CHECK_THROWS_AS(train_classifier("m", Architecture::kMlp, train, 10, {.epochs = 0}), ConfigError);
}

TEST_CASE("pgd stays in the epsilon ball and does not lower the loss much") {
  const auto train = make_digits({.per_class = 5, .seed = 1});
  const auto m = train_classifier("mlp", Architecture::kMlp, train, 10, {.epochs = 3, .seed = 2});
  std::mt19937_64 rng(4);
  for (const auto& s : std::span(train).first(10)) {
    const Image adv = pgd_attack(s.image, m, s.label, 0.03, 5, rng);
    CHECK(adv.in_unit_range());
    for (std::size_t i = 0; i < adv.size(); ++i)
      CHECK(std::abs(adv.data()[i] - s.image.data()[i]) <= 0.03 + 1e-12);
    CHECK(m.loss(adv, s.label) >= m.loss(s.image, s.label) - 1e-9);
  }
  const auto robust = train_classifier("mlp", Architecture::kMlp, train, 10,
                                       {.epochs = 2, .seed = 2, .pgd_epsilon = 0.03, .pgd_steps = 2});
  CHECK(robust.num_classes() == 10);
}

TEST_CASE("autoencoder and surrogate oracle fixtures") {
  const auto labels = digit_labels();
  const auto train = make_digits({.per_class = 20, .seed = 1});
  const auto ae = train_autoencoder(
      train, {.latent_dim = 16, .latent_scale = 0.05, .train = {.epochs = 15, .learning_rate = 3e-3, .seed = 2}});
  CHECK(ae.latent_dim() == 16);
  CHECK(ae.reconstruction_mse > 0.0);
  CHECK(ae.reconstruction_mse <= ae.reconstruction_bound);
  // well below what the best constant image achieves
  Image mean(train[0].image.shape());
  for (const auto& s : train)
    for (std::size_t i = 0; i < mean.size(); ++i) mean.data()[i] += s.image.data()[i] / train.size();
  double constant_mse = 0.0;
  for (const auto& s : train) constant_mse += mean_squared_error(mean, s.image) / train.size();
  CHECK(ae.reconstruction_mse < 0.5 * constant_mse);

  // pullback of a random linear functional of the decoded image
  const auto code = ae.encode(train[3].image);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  std::vector<double> w(train[3].image.size());
  for (double& v : w) v = n(rng);
  auto f = [&](const std::vector<double>& z) {
    // stay away from the clamp kinks: sigmoid output never hits 0 or 1
    const Image img = ae.decode({z, {}});
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * img.data()[i];
    return s;
  };
  CHECK(check_gradient(f, code.values, ae.pullback(code, w), 10, 6, 1e-6).max_rel_error <= 1e-3);

  const auto oracle =
      train_surrogate_oracle(train, labels, &ae, {.hidden = 32, .train = {.epochs = 10, .learning_rate = 3e-3, .seed = 3}});
  int right = 0;
  for (const auto& s : train) right += oracle.classify(s.image).predicted_class == s.label;
  CHECK(right >= 180);
}
