#include <doctest.h>

#include "fixtures.hpp"
#include "fmr/error.hpp"
#include "fmr/generator.hpp"
#include "fmr/protocol.hpp"

using namespace fmr;
using namespace fmr::testing;

namespace {

ReferenceAutoencoder random_autoencoder(ImageShape shape, std::size_t latent, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  nn::Network enc(shape.size(), {nn::make_dense(shape.size(), latent, rng)});
  auto dec_layer = nn::make_dense(latent, shape.size(), rng);
  std::normal_distribution<double> b(0.0, 0.3);
  for (double& v : dec_layer.bias) v = b(rng);
  nn::Network dec(latent, {dec_layer, nn::Sigmoid{}});
  return ReferenceAutoencoder(shape, std::move(enc), std::move(dec), scale);
}

}  // namespace

TEST_CASE("apply_mask: definition examples") {
  LatentCode latent{{9, 9, 9, 9}, {}}, base{{0, 0, 0, 0}, {}};
  CHECK(apply_mask(latent, base, SparseMask({1, 3}, 4)).values == std::vector<double>{0, 9, 0, 9});
  CHECK(apply_mask(latent, base, SparseMask::all(4)) == latent);
  CHECK(apply_mask(latent, base, SparseMask::none(4)) == base);
  CHECK_THROWS_AS(apply_mask(latent, LatentCode{{0, 0}, {}}, SparseMask::all(4)), ContractViolation);
}

TEST_CASE("apply_mask: idempotent (property)") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + trial % 23;
    LatentCode l, b;
    std::vector<std::size_t> sel;
    for (std::size_t i = 0; i < d; ++i) {
      l.values.push_back(n(rng));
      b.values.push_back(n(rng));
      if (coin(rng)) sel.push_back(i);
    }
    const SparseMask m(sel, d);
    const auto once = apply_mask(l, b, m);
    CHECK(apply_mask(once, b, m) == once);
  }
}

TEST_CASE("SparseMask validation") {
  CHECK_THROWS_AS(SparseMask({1, 1}, 3), ContractViolation);
  CHECK_THROWS_AS(SparseMask({3}, 3), ContractViolation);
  const SparseMask m({4, 0, 2}, 5);
  CHECK(m.selected() == std::vector<std::size_t>{0, 2, 4});
  CHECK(m.contains(2));
  CHECK_FALSE(m.contains(3));
}

TEST_CASE("masked_ascent_step: examples") {
  const std::vector<double> latent{0.5, -0.5, 2.0}, grad{1.0, -2.0, 0.5};
  CHECK(masked_ascent_step(latent, grad, 0.01, SparseMask::all(3)) == latent_ascent_step(latent, grad, 0.01));
  CHECK(masked_ascent_step(latent, grad, 0.01, SparseMask::none(3)) == latent);

  const auto out = masked_ascent_step(std::vector<double>{0, 0}, std::vector<double>{3, 4}, 0.01, SparseMask({0}, 2));
  CHECK(out[0] == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(out[1] == 0.0);
}

TEST_CASE("masked_ascent_step: untouched coordinates stay exact (property)") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + trial % 31;
    std::vector<double> l(d), g(d);
    std::vector<std::size_t> sel;
    for (std::size_t i = 0; i < d; ++i) {
      l[i] = n(rng);
      g[i] = n(rng);
      if (coin(rng)) sel.push_back(i);
    }
    const SparseMask m(sel, d);
    const auto out = masked_ascent_step(l, g, 0.05, m);
    double moved = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      if (!m.contains(i)) CHECK(out[i] == l[i]);
      moved += (out[i] - l[i]) * (out[i] - l[i]);
    }
    if (!sel.empty()) CHECK(std::sqrt(moved) == doctest::Approx(0.05).epsilon(1e-9));
  }
}

TEST_CASE("reference autoencoder: determinism, bias latent and clamped output") {
  const ImageShape shape{4, 4, 1};
  const auto ae = random_autoencoder(shape, 6, 0.5, 1);
  Image x(shape);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u;
  for (double& v : x.data()) v = u(rng);
  CHECK(ae.encode(x) == ae.encode(x));

  const auto zero = ae.encode(Image(shape, 0.0));
  const auto& enc = std::get<nn::Dense>(ae.encoder().layers()[0]);
  for (std::size_t i = 0; i < zero.size(); ++i) CHECK(zero.values[i] == enc.bias[i] * 0.5);

  LatentCode far{std::vector<double>(6, 100.0), {}};
  CHECK(ae.decode(far).in_unit_range());
  CHECK(ae.decode(ae.encode(x)).shape() == shape);
  CHECK_THROWS_AS(ae.decode(LatentCode{{1.0}, {}}), ContractViolation);
  CHECK_THROWS_AS(ae.encode(Image({2, 2, 1})), ContractViolation);
}

TEST_CASE("reference autoencoder: pullback matches finite differences") {
  const ImageShape shape{5, 5, 1};
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    const auto ae = random_autoencoder(shape, 8, 0.2, seed);
    std::mt19937_64 rng(seed + 100);
    std::normal_distribution<double> n;
    std::vector<double> weights(shape.size());
    for (double& w : weights) w = n(rng);
    LatentCode z;
    for (int i = 0; i < 8; ++i) z.values.push_back(0.1 * n(rng));
    // scalar downstream loss: <weights, decode(z)>
    auto f = [&](const std::vector<double>& v) {
      const auto img = ae.decode({v, {}});
      double s = 0;
      for (std::size_t i = 0; i < img.size(); ++i) s += weights[i] * img.data()[i];
      return s;
    };
    const auto analytic = ae.pullback(z, weights);
    const auto gc = check_gradient(f, z.values, analytic, 10, seed, 1e-6);
    CHECK(gc.max_rel_error <= 1e-3);
  }
}

TEST_CASE("reference autoencoder: checkpoint round trip") {
  auto ae = random_autoencoder({3, 3, 1}, 4, 0.25, 8);
  ae.reconstruction_mse = 0.01;
  ae.reconstruction_bound = 0.02;
  const auto back = ReferenceAutoencoder::from_json(ae.to_json());
  Image x({3, 3, 1}, 0.3);
  CHECK(back.encode(x) == ae.encode(x));
  CHECK(back.decode(ae.encode(x)) == ae.decode(ae.encode(x)));
  CHECK(back.reconstruction_bound == 0.02);
}

TEST_CASE("quantized generator: decoded values sit on the 8-bit grid, pullback unchanged") {
  auto inner = std::make_shared<PixelGenerator>(ImageShape{2, 2, 1});
  QuantizedGenerator q(inner, 8);
  const LatentCode z{{0.1234, 0.5, 0.99999, -0.2}, {}};
  const Image img = q.decode(z);
  for (double v : img.data()) CHECK(std::round(v * 255.0) == v * 255.0);
  CHECK(img.data()[0] == 31.0 / 255.0);
  CHECK(img.data()[3] == 0.0);
  const std::vector<double> g{1, 2, 3, 4};
  CHECK(q.pullback(z, g) == inner->pullback(z, g));
  CHECK(q.name() == "pixel");
  CHECK(quantize_image(img, 8) == img);
  CHECK_THROWS_AS(QuantizedGenerator(inner, 4), ConfigError);
}
