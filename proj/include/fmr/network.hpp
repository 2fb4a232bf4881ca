#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fmr/kernels.hpp"

namespace fmr::nn {

struct Dense {
  std::size_t in = 0, out = 0;
  std::vector<double> weight;  // [out x in]
  std::vector<double> bias;    // [out]
};

struct Conv2d {
  kernels::ConvDims dims;
  std::vector<double> weight;  // [out_c][k][k][in_c]
  std::vector<double> bias;    // [out_c]
};

// 2x2 mean pooling with stride 2 over an HxWxC map (odd trailing row/col dropped).
struct AvgPool2 {
  std::size_t in_h = 0, in_w = 0, c = 0;
};

struct Tanh {};
struct Sigmoid {};

using Layer = std::variant<Dense, Conv2d, AvgPool2, Tanh, Sigmoid>;

// Parameter gradients laid out like the layers' parameters.
struct Gradients {
  std::vector<std::vector<double>> weight;
  std::vector<std::vector<double>> bias;

  void add(const Gradients& o);
  void scale(double s);
};

// Activations retained from a forward pass for the backward pass.
struct Trace {
  std::vector<std::vector<double>> activations;  // activations[0] is the input
  std::span<const double> output() const { return activations.back(); }
};

class Network {
 public:
  Network() = default;
  Network(std::size_t input_size, std::vector<Layer> layers);

  std::size_t input_size() const { return input_size_; }
  std::size_t output_size() const;
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  std::size_t parameter_count() const;

  std::vector<double> forward(std::span<const double> x) const;
  Trace forward_trace(std::span<const double> x) const;
  // Returns d(loss)/d(input) given d(loss)/d(output). Accumulates parameter
  // gradients into `grads` when non-null.
  std::vector<double> backward(const Trace& trace, std::span<const double> grad_output,
                               Gradients* grads = nullptr) const;

  Gradients zero_gradients() const;

  nlohmann::json to_json() const;
  static Network from_json(const nlohmann::json& j);

 private:
  std::size_t input_size_ = 0;
  std::vector<Layer> layers_;
};

// Layer constructors with scaled uniform (Glorot) initialization.
Dense make_dense(std::size_t in, std::size_t out, std::mt19937_64& rng);
Conv2d make_conv(std::size_t in_h, std::size_t in_w, std::size_t in_c, std::size_t out_c,
                 std::size_t k, std::mt19937_64& rng);

// Adam over a network's parameters.
class Adam {
 public:
  explicit Adam(const Network& net, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step(Network& net, const Gradients& grads);
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  Gradients m_, v_;
};

}  // namespace fmr::nn
