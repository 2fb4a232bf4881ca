#pragma once

// Dense and convolution kernels in two flavours: `serial` is the reference
// implementation, `parallel` distributes independent output slices across
// OpenMP threads. Every parallel kernel keeps the per-output summation order
// of its serial twin, so both produce bit-identical results.

#include <cstddef>
#include <functional>
#include <span>

namespace fmr::kernels {

struct ConvDims {
  std::size_t in_h = 0, in_w = 0, in_c = 0;
  std::size_t out_c = 0;
  std::size_t k = 0;  // square kernel, stride 1, no padding
  std::size_t out_h() const { return in_h - k + 1; }
  std::size_t out_w() const { return in_w - k + 1; }
};

#define FMR_KERNEL_DECLS                                                                           \
  /* y = W x + b, W row-major [out x in] */                                                        \
  void dense_forward(std::span<const double> w, std::span<const double> b,                        \
                     std::span<const double> x, std::span<double> y);                              \
  /* gx = W^T gy */                                                                                \
  void dense_backward_input(std::span<const double> w, std::span<const double> gy,                 \
                            std::span<double> gx);                                                 \
  /* gw += gy x^T, gb += gy */                                                                     \
  void dense_accumulate_params(std::span<const double> gy, std::span<const double> x,              \
                               std::span<double> gw, std::span<double> gb);                        \
  /* kernel layout [out_c][k][k][in_c]; images HxWxC row-major */                                  \
  void conv2d_forward(const ConvDims& d, std::span<const double> kernel,                           \
                      std::span<const double> bias, std::span<const double> x,                     \
                      std::span<double> y);                                                        \
  void conv2d_backward_input(const ConvDims& d, std::span<const double> kernel,                    \
                             std::span<const double> gy, std::span<double> gx);                    \
  void conv2d_accumulate_params(const ConvDims& d, std::span<const double> gy,                     \
                                std::span<const double> x, std::span<double> gkernel,              \
                                std::span<double> gbias);

namespace serial {
FMR_KERNEL_DECLS
}
namespace parallel {
FMR_KERNEL_DECLS
}
#undef FMR_KERNEL_DECLS

enum class Backend { kSerial, kParallel };

// Process-wide kernel selection used by the network layers.
void set_backend(Backend b);
Backend backend();

void dense_forward(std::span<const double> w, std::span<const double> b, std::span<const double> x,
                   std::span<double> y);
void dense_backward_input(std::span<const double> w, std::span<const double> gy, std::span<double> gx);
void dense_accumulate_params(std::span<const double> gy, std::span<const double> x,
                             std::span<double> gw, std::span<double> gb);
void conv2d_forward(const ConvDims& d, std::span<const double> kernel, std::span<const double> bias,
                    std::span<const double> x, std::span<double> y);
void conv2d_backward_input(const ConvDims& d, std::span<const double> kernel,
                           std::span<const double> gy, std::span<double> gx);
void conv2d_accumulate_params(const ConvDims& d, std::span<const double> gy,
                              std::span<const double> x, std::span<double> gkernel,
                              std::span<double> gbias);

// Runs body(i) for i in [0, n). With allow_parallel and the parallel backend
// active, iterations are spread over OpenMP threads; body must then only touch
// state owned by index i.
void for_each_index(std::size_t n, const std::function<void(std::size_t)>& body,
                    bool allow_parallel = true);

int max_threads();

}  // namespace fmr::kernels
