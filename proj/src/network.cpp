#include "fmr/network.hpp"

#include <cmath>
#include <string>

#include "fmr/error.hpp"

namespace fmr::nn {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::size_t layer_output_size(const Layer& layer, std::size_t in) {
  return std::visit(Overloaded{
                        [](const Dense& d) { return d.out; },
                        [](const Conv2d& c) { return c.dims.out_h() * c.dims.out_w() * c.dims.out_c; },
                        [](const AvgPool2& p) { return (p.in_h / 2) * (p.in_w / 2) * p.c; },
                        [in](const Tanh&) { return in; },
                        [in](const Sigmoid&) { return in; },
                    },
                    layer);
}

std::size_t layer_input_size(const Layer& layer, std::size_t fallback) {
  return std::visit(Overloaded{
                        [](const Dense& d) { return d.in; },
                        [](const Conv2d& c) { return c.dims.in_h * c.dims.in_w * c.dims.in_c; },
                        [](const AvgPool2& p) { return p.in_h * p.in_w * p.c; },
                        [fallback](const Tanh&) { return fallback; },
                        [fallback](const Sigmoid&) { return fallback; },
                    },
                    layer);
}

double sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

std::vector<double> json_vec(const nlohmann::json& j, const char* key, std::size_t expected) {
  auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != expected)
    throw ConfigError(std::string("network checkpoint: '") + key + "' has " +
                      std::to_string(v.size()) + " values, expected " + std::to_string(expected));
  return v;
}

}  // namespace

void Gradients::add(const Gradients& o) {
  for (std::size_t l = 0; l < weight.size(); ++l) {
    for (std::size_t i = 0; i < weight[l].size(); ++i) weight[l][i] += o.weight[l][i];
    for (std::size_t i = 0; i < bias[l].size(); ++i) bias[l][i] += o.bias[l][i];
  }
}

void Gradients::scale(double s) {
  for (auto& w : weight)
    for (double& v : w) v *= s;
  for (auto& b : bias)
    for (double& v : b) v *= s;
}

Network::Network(std::size_t input_size, std::vector<Layer> layers)
    : input_size_(input_size), layers_(std::move(layers)) {
  std::size_t size = input_size_;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::size_t expected = layer_input_size(layers_[l], size);
    if (expected != size)
      throw ConfigError("network layer " + std::to_string(l) + " expects " +
                        std::to_string(expected) + " inputs, receives " + std::to_string(size));
    size = layer_output_size(layers_[l], size);
  }
}

std::size_t Network::output_size() const {
  std::size_t size = input_size_;
  for (const auto& layer : layers_) size = layer_output_size(layer, size);
  return size;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) {
    if (auto* d = std::get_if<Dense>(&layer)) n += d->weight.size() + d->bias.size();
    if (auto* c = std::get_if<Conv2d>(&layer)) n += c->weight.size() + c->bias.size();
  }
  return n;
}

std::vector<double> Network::forward(std::span<const double> x) const {
  return std::move(forward_trace(x).activations.back());
}

Trace Network::forward_trace(std::span<const double> x) const {
  require(x.size() == input_size_, "network input has " + std::to_string(x.size()) +
                                       " values, expected " + std::to_string(input_size_));
  Trace trace;
  trace.activations.reserve(layers_.size() + 1);
  trace.activations.emplace_back(x.begin(), x.end());
  for (const auto& layer : layers_) {
    const auto& in = trace.activations.back();
    std::vector<double> out(layer_output_size(layer, in.size()));
    std::visit(Overloaded{
                   [&](const Dense& d) { kernels::dense_forward(d.weight, d.bias, in, out); },
                   [&](const Conv2d& c) { kernels::conv2d_forward(c.dims, c.weight, c.bias, in, out); },
                   [&](const AvgPool2& p) {
                     const std::size_t oh = p.in_h / 2, ow = p.in_w / 2;
                     for (std::size_t y = 0; y < oh; ++y)
                       for (std::size_t xx = 0; xx < ow; ++xx)
                         for (std::size_t c = 0; c < p.c; ++c) {
                           auto at = [&](std::size_t yy, std::size_t xi) {
                             return in[(yy * p.in_w + xi) * p.c + c];
                           };
                           out[(y * ow + xx) * p.c + c] =
                               0.25 * (at(2 * y, 2 * xx) + at(2 * y, 2 * xx + 1) +
                                       at(2 * y + 1, 2 * xx) + at(2 * y + 1, 2 * xx + 1));
                         }
                   },
                   [&](const Tanh&) {
                     for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::tanh(in[i]);
                   },
                   [&](const Sigmoid&) {
                     for (std::size_t i = 0; i < in.size(); ++i) out[i] = sigmoid(in[i]);
                   },
               },
               layer);
    trace.activations.push_back(std::move(out));
  }
  return trace;
}

std::vector<double> Network::backward(const Trace& trace, std::span<const double> grad_output,
                                      Gradients* grads) const {
  require(trace.activations.size() == layers_.size() + 1, "backward: trace does not match network");
  require(grad_output.size() == trace.activations.back().size(), "backward: gradient size mismatch");
  std::vector<double> g(grad_output.begin(), grad_output.end());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& in = trace.activations[l];
    const auto& out = trace.activations[l + 1];
    std::vector<double> gin(in.size(), 0.0);
    std::visit(Overloaded{
                   [&](const Dense& d) {
                     if (grads) kernels::dense_accumulate_params(g, in, grads->weight[l], grads->bias[l]);
                     kernels::dense_backward_input(d.weight, g, gin);
                   },
                   [&](const Conv2d& c) {
                     if (grads)
                       kernels::conv2d_accumulate_params(c.dims, g, in, grads->weight[l], grads->bias[l]);
                     kernels::conv2d_backward_input(c.dims, c.weight, g, gin);
                   },
                   [&](const AvgPool2& p) {
                     const std::size_t oh = p.in_h / 2, ow = p.in_w / 2;
                     for (std::size_t y = 0; y < oh; ++y)
                       for (std::size_t xx = 0; xx < ow; ++xx)
                         for (std::size_t c = 0; c < p.c; ++c) {
                           const double v = 0.25 * g[(y * ow + xx) * p.c + c];
                           for (std::size_t dy = 0; dy < 2; ++dy)
                             for (std::size_t dx = 0; dx < 2; ++dx)
                               gin[((2 * y + dy) * p.in_w + 2 * xx + dx) * p.c + c] = v;
                         }
                   },
                   [&](const Tanh&) {
                     for (std::size_t i = 0; i < gin.size(); ++i) gin[i] = g[i] * (1.0 - out[i] * out[i]);
                   },
                   [&](const Sigmoid&) {
                     for (std::size_t i = 0; i < gin.size(); ++i) gin[i] = g[i] * out[i] * (1.0 - out[i]);
                   },
               },
               layers_[l]);
    g = std::move(gin);
  }
  return g;
}

Gradients Network::zero_gradients() const {
  Gradients grads;
  for (const auto& layer : layers_) {
    if (auto* d = std::get_if<Dense>(&layer)) {
      grads.weight.emplace_back(d->weight.size(), 0.0);
      grads.bias.emplace_back(d->bias.size(), 0.0);
    } else if (auto* c = std::get_if<Conv2d>(&layer)) {
      grads.weight.emplace_back(c->weight.size(), 0.0);
      grads.bias.emplace_back(c->bias.size(), 0.0);
    } else {
      grads.weight.emplace_back();
      grads.bias.emplace_back();
    }
  }
  return grads;
}

nlohmann::json Network::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : layers_) {
    std::visit(Overloaded{
                   [&](const Dense& d) {
                     layers.push_back({{"type", "dense"}, {"in", d.in}, {"out", d.out},
                                       {"weight", d.weight}, {"bias", d.bias}});
                   },
                   [&](const Conv2d& c) {
                     layers.push_back({{"type", "conv2d"},
                                       {"in_h", c.dims.in_h}, {"in_w", c.dims.in_w},
                                       {"in_c", c.dims.in_c}, {"out_c", c.dims.out_c},
                                       {"k", c.dims.k}, {"weight", c.weight}, {"bias", c.bias}});
                   },
                   [&](const AvgPool2& p) {
                     layers.push_back({{"type", "avgpool2"}, {"in_h", p.in_h}, {"in_w", p.in_w}, {"c", p.c}});
                   },
                   [&](const Tanh&) { layers.push_back({{"type", "tanh"}}); },
                   [&](const Sigmoid&) { layers.push_back({{"type", "sigmoid"}}); },
               },
               layer);
  }
  return {{"input_size", input_size_}, {"layers", layers}};
}

Network Network::from_json(const nlohmann::json& j) {
  try {
    std::vector<Layer> layers;
    for (const auto& l : j.at("layers")) {
      const auto type = l.at("type").get<std::string>();
      if (type == "dense") {
        Dense d;
        d.in = l.at("in").get<std::size_t>();
        d.out = l.at("out").get<std::size_t>();
        d.weight = json_vec(l, "weight", d.in * d.out);
        d.bias = json_vec(l, "bias", d.out);
        layers.emplace_back(std::move(d));
      } else if (type == "conv2d") {
        Conv2d c;
        c.dims = {l.at("in_h").get<std::size_t>(), l.at("in_w").get<std::size_t>(),
                  l.at("in_c").get<std::size_t>(), l.at("out_c").get<std::size_t>(),
                  l.at("k").get<std::size_t>()};
        c.weight = json_vec(l, "weight", c.dims.out_c * c.dims.k * c.dims.k * c.dims.in_c);
        c.bias = json_vec(l, "bias", c.dims.out_c);
        layers.emplace_back(std::move(c));
      } else if (type == "avgpool2") {
        layers.emplace_back(AvgPool2{l.at("in_h").get<std::size_t>(), l.at("in_w").get<std::size_t>(),
                                     l.at("c").get<std::size_t>()});
      } else if (type == "tanh") {
        layers.emplace_back(Tanh{});
      } else if (type == "sigmoid") {
        layers.emplace_back(Sigmoid{});
      } else {
        throw ConfigError("network checkpoint: unknown layer type '" + type + "'");
      }
    }
    return Network(j.at("input_size").get<std::size_t>(), std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("network checkpoint: ") + e.what());
  }
}

Dense make_dense(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  Dense d{in, out, std::vector<double>(in * out), std::vector<double>(out, 0.0)};
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> u(-a, a);
  for (double& w : d.weight) w = u(rng);
  return d;
}

Conv2d make_conv(std::size_t in_h, std::size_t in_w, std::size_t in_c, std::size_t out_c,
                 std::size_t k, std::mt19937_64& rng) {
  Conv2d c;
  c.dims = {in_h, in_w, in_c, out_c, k};
  c.weight.resize(out_c * k * k * in_c);
  c.bias.assign(out_c, 0.0);
  const double fan_in = static_cast<double>(k * k * in_c), fan_out = static_cast<double>(k * k * out_c);
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  for (double& w : c.weight) w = u(rng);
  return c;
}

Adam::Adam(const Network& net, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(net.zero_gradients()), v_(net.zero_gradients()) {}

void Adam::step(Network& net, const Gradients& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                    std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  };
  auto& layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (auto* d = std::get_if<Dense>(&layers[l])) {
      update(d->weight, grads.weight[l], m_.weight[l], v_.weight[l]);
      update(d->bias, grads.bias[l], m_.bias[l], v_.bias[l]);
    } else if (auto* c = std::get_if<Conv2d>(&layers[l])) {
      update(c->weight, grads.weight[l], m_.weight[l], v_.weight[l]);
      update(c->bias, grads.bias[l], m_.bias[l], v_.bias[l]);
    }
  }
}

}  // namespace fmr::nn
