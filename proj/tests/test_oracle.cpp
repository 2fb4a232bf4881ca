#include <doctest.h>

#include "fixtures.hpp"
#include "fmr/error.hpp"
#include "fmr/oracle.hpp"

using namespace fmr;
using namespace fmr::testing;

namespace {

SurrogateOracle random_surrogate(const LabelSet& labels, ImageShape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  nn::Network enc(shape.size(), {nn::make_dense(shape.size(), 6, rng), nn::Tanh{}, nn::make_dense(6, 4, rng)});
  std::normal_distribution<double> n;
  std::map<std::string, std::vector<double>> prompts;
  for (const auto& p : build_prompts(labels)) {
    std::vector<double> e(4);
    for (double& v : e) v = n(rng);
    prompts[p] = e;
  }
  return SurrogateOracle(labels, shape, std::move(enc), std::move(prompts), 10.0);
}

}  // namespace

TEST_CASE("build_prompts") {
  CHECK(build_prompts(LabelSet({"dog"})) == std::vector<std::string>{"an image of dog"});
  CHECK(build_prompts(LabelSet({"gold fish", "snoek"})) ==
        std::vector<std::string>{"an image of gold fish", "an image of snoek"});
  CHECK_THROWS_AS(build_prompts(LabelSet{}), ConfigError);
}

TEST_CASE("LabelSet rejects empty and duplicate names") {
  CHECK_THROWS_AS(LabelSet({"a", ""}), ConfigError);
  CHECK_THROWS_AS(LabelSet({"a", "a"}), ConfigError);
  CHECK(LabelSet({"a", "b"}).index_of("b") == 1u);
}

TEST_CASE("argmax ties go to the lowest index") {
  CHECK(argmax_lowest(std::vector<double>{0.25, 0.25, 0.25, 0.25}) == 0);
  CHECK(argmax_lowest(std::vector<double>{0.1, 0.7, 0.7}) == 1);
  CHECK(argmax_lowest(std::vector<double>{3.0}) == 0);
}

TEST_CASE("verify follows argmax equality") {
  ThresholdOracle oracle(0.75);
  CHECK(oracle.verify(Image(scalar_shape(), 0.5), 0));
  CHECK_FALSE(oracle.verify(Image(scalar_shape(), 0.5), 1));
  CHECK_FALSE(oracle.verify(Image(scalar_shape(), 0.8), 0));
}

TEST_CASE("surrogate oracle: one-class label set always predicts that class") {
  const ImageShape shape{3, 3, 1};
  const auto oracle = random_surrogate(LabelSet({"only"}), shape, 1);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u;
  for (int i = 0; i < 20; ++i) {
    Image x(shape);
    for (double& v : x.data()) v = u(rng);
    CHECK(oracle.classify(x).predicted_class == 0);
    CHECK(oracle.verify(x, 0));
  }
}

TEST_CASE("surrogate oracle: verify is consistent with classify and deterministic") {
  const ImageShape shape{3, 3, 1};
  const LabelSet labels({"a", "b", "c"});
  const auto oracle = random_surrogate(labels, shape, 2);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u;
  for (int i = 0; i < 50; ++i) {
    Image x(shape);
    for (double& v : x.data()) v = u(rng);
    const auto s = oracle.classify(x);
    CHECK(s.predicted_class == argmax_lowest(s.scores));
    CHECK(s.scores == oracle.classify(x).scores);
    for (std::size_t y = 0; y < labels.size(); ++y) {
      const auto v = oracle.judge(x, y);
      CHECK(v.accepted == (s.predicted_class == y));
      CHECK(oracle.verify(x, y) == (s.predicted_class == y));
    }
  }
}

TEST_CASE("surrogate oracle: missing prompt embedding is an adapter error") {
  std::mt19937_64 rng(1);
  nn::Network enc(4, {nn::make_dense(4, 3, rng)});
  std::map<std::string, std::vector<double>> prompts{{"an image of a", {1, 0, 0}}};
  CHECK_THROWS_AS(SurrogateOracle(LabelSet({"a", "b"}), {2, 2, 1}, enc, prompts, 5.0), AdapterError);
}

TEST_CASE("surrogate oracle: checkpoint round trip") {
  const auto oracle = random_surrogate(LabelSet({"a", "b"}), {2, 2, 1}, 3);
  const auto back = SurrogateOracle::from_json(oracle.to_json());
  Image x({2, 2, 1}, 0.4);
  CHECK(back.classify(x).scores == oracle.classify(x).scores);
  CHECK(back.labels() == oracle.labels());
}
