// Serial reference kernels against their OpenMP twins, plus one end-to-end
// perturbation of a digit under each backend.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "fmr/kernels.hpp"
#include "fmr/protocol.hpp"
#include "fmr/training.hpp"

using namespace fmr;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

template <bool Parallel>
void BM_DenseForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto w = random_vector(n * n, 1), b = random_vector(n, 2), x = random_vector(n, 3);
  std::vector<double> y(n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::dense_forward(w, b, x, y);
    else
      kernels::serial::dense_forward(w, b, x, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

template <bool Parallel>
void BM_DenseBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto w = random_vector(n * n, 1), gy = random_vector(n, 3);
  std::vector<double> gx(n);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::dense_backward_input(w, gy, gx);
    else
      kernels::serial::dense_backward_input(w, gy, gx);
    benchmark::DoNotOptimize(gx.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n));
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  const kernels::ConvDims d{s, s, 8, 16, 3};
  const auto k = random_vector(d.out_c * d.k * d.k * d.in_c, 1), b = random_vector(d.out_c, 2);
  const auto x = random_vector(d.in_h * d.in_w * d.in_c, 3);
  std::vector<double> y(d.out_h() * d.out_w() * d.out_c);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::conv2d_forward(d, k, b, x, y);
    else
      kernels::serial::conv2d_forward(d, k, b, x, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(y.size() * d.k * d.k * d.in_c));
}

template <bool Parallel>
void BM_ConvBackwardInput(benchmark::State& state) {
  const auto s = static_cast<std::size_t>(state.range(0));
  const kernels::ConvDims d{s, s, 8, 16, 3};
  const auto k = random_vector(d.out_c * d.k * d.k * d.in_c, 1);
  const auto gy = random_vector(d.out_h() * d.out_w() * d.out_c, 3);
  std::vector<double> gx(d.in_h * d.in_w * d.in_c);
  for (auto _ : state) {
    if constexpr (Parallel)
      kernels::parallel::conv2d_backward_input(d, k, gy, gx);
    else
      kernels::serial::conv2d_backward_input(d, k, gy, gx);
    benchmark::DoNotOptimize(gx.data());
  }
}

template <kernels::Backend B>
void BM_PerturbDigits(benchmark::State& state) {
  static const auto train = make_digits({.per_class = 20, .seed = 1});
  static const auto model =
      train_classifier("convnet", Architecture::kConvnet, train, 10, {.epochs = 2, .seed = 2});
  static const auto ae = train_autoencoder(train, {.train = {.epochs = 3, .seed = 3}});
  static const auto oracle =
      train_surrogate_oracle(train, digit_labels(), &ae, {.hidden = 32, .train = {.epochs = 3, .seed = 4}});
  const auto test = make_digits({.per_class = 2, .seed = 9});
  const auto previous = kernels::backend();
  kernels::set_backend(B);
  PerturbationConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(perturb_dataset(test, model, ae, oracle, cfg).report);
  kernels::set_backend(previous);
}

}  // namespace

BENCHMARK(BM_DenseForward<false>)->Name("dense_forward/serial")->Arg(64)->Arg(256)->Arg(1024);
BENCHMARK(BM_DenseForward<true>)->Name("dense_forward/parallel")->Arg(64)->Arg(256)->Arg(1024);
BENCHMARK(BM_DenseBackward<false>)->Name("dense_backward/serial")->Arg(256)->Arg(1024);
BENCHMARK(BM_DenseBackward<true>)->Name("dense_backward/parallel")->Arg(256)->Arg(1024);
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/serial")->Arg(16)->Arg(64);
BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/parallel")->Arg(16)->Arg(64);
BENCHMARK(BM_ConvBackwardInput<false>)->Name("conv_backward_input/serial")->Arg(16)->Arg(64);
BENCHMARK(BM_ConvBackwardInput<true>)->Name("conv_backward_input/parallel")->Arg(16)->Arg(64);
BENCHMARK(BM_PerturbDigits<kernels::Backend::kSerial>)->Name("perturb_20_digits/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_PerturbDigits<kernels::Backend::kParallel>)->Name("perturb_20_digits/parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
