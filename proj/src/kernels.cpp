#include "fmr/kernels.hpp"

#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fmr/error.hpp"

namespace fmr::kernels {
namespace {

using Index = std::ptrdiff_t;

// Slice bodies shared by both flavours. Each computes one independent output
// slice with a fixed summation order.

inline void dense_row(std::span<const double> w, std::span<const double> b,
                      std::span<const double> x, std::span<double> y, std::size_t i) {
  const std::size_t in = x.size();
  const double* row = w.data() + i * in;
  double s = b.empty() ? 0.0 : b[i];
  for (std::size_t j = 0; j < in; ++j) s += row[j] * x[j];
  y[i] = s;
}

inline void dense_col_t(std::span<const double> w, std::span<const double> gy, std::span<double> gx,
                        std::size_t j) {
  const std::size_t in = gx.size();
  double s = 0.0;
  for (std::size_t i = 0; i < gy.size(); ++i) s += w[i * in + j] * gy[i];
  gx[j] = s;
}

inline void dense_param_row(std::span<const double> gy, std::span<const double> x,
                            std::span<double> gw, std::span<double> gb, std::size_t i) {
  const double g = gy[i];
  double* row = gw.data() + i * x.size();
  for (std::size_t j = 0; j < x.size(); ++j) row[j] += g * x[j];
  if (!gb.empty()) gb[i] += g;
}

inline void conv_out_row(const ConvDims& d, std::span<const double> kernel,
                         std::span<const double> bias, std::span<const double> x,
                         std::span<double> y, std::size_t oy) {
  const std::size_t ow = d.out_w();
  for (std::size_t ox = 0; ox < ow; ++ox) {
    for (std::size_t co = 0; co < d.out_c; ++co) {
      double s = bias.empty() ? 0.0 : bias[co];
      const double* kc = kernel.data() + co * d.k * d.k * d.in_c;
      for (std::size_t ky = 0; ky < d.k; ++ky) {
        const double* xr = x.data() + ((oy + ky) * d.in_w + ox) * d.in_c;
        const double* kr = kc + ky * d.k * d.in_c;
        for (std::size_t t = 0; t < d.k * d.in_c; ++t) s += kr[t] * xr[t];
      }
      y[(oy * ow + ox) * d.out_c + co] = s;
    }
  }
}

inline void conv_in_row(const ConvDims& d, std::span<const double> kernel,
                        std::span<const double> gy, std::span<double> gx, std::size_t iy) {
  const std::size_t oh = d.out_h(), ow = d.out_w();
  for (std::size_t ix = 0; ix < d.in_w; ++ix) {
    for (std::size_t ci = 0; ci < d.in_c; ++ci) {
      double s = 0.0;
      for (std::size_t co = 0; co < d.out_c; ++co) {
        for (std::size_t ky = 0; ky < d.k; ++ky) {
          if (iy < ky || iy - ky >= oh) continue;
          const std::size_t oy = iy - ky;
          for (std::size_t kx = 0; kx < d.k; ++kx) {
            if (ix < kx || ix - kx >= ow) continue;
            const std::size_t ox = ix - kx;
            s += gy[(oy * ow + ox) * d.out_c + co] *
                 kernel[((co * d.k + ky) * d.k + kx) * d.in_c + ci];
          }
        }
      }
      gx[(iy * d.in_w + ix) * d.in_c + ci] = s;
    }
  }
}

inline void conv_param_channel(const ConvDims& d, std::span<const double> gy,
                               std::span<const double> x, std::span<double> gkernel,
                               std::span<double> gbias, std::size_t co) {
  const std::size_t oh = d.out_h(), ow = d.out_w();
  double* kc = gkernel.data() + co * d.k * d.k * d.in_c;
  double bsum = 0.0;
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const double g = gy[(oy * ow + ox) * d.out_c + co];
      bsum += g;
      for (std::size_t ky = 0; ky < d.k; ++ky) {
        const double* xr = x.data() + ((oy + ky) * d.in_w + ox) * d.in_c;
        double* kr = kc + ky * d.k * d.in_c;
        for (std::size_t t = 0; t < d.k * d.in_c; ++t) kr[t] += g * xr[t];
      }
    }
  }
  if (!gbias.empty()) gbias[co] += bsum;
}

void check_dense(std::span<const double> w, std::size_t out, std::size_t in) {
  require(w.size() == out * in, "dense kernel: weight size mismatch");
}

void check_conv(const ConvDims& d, std::size_t kernel_size) {
  require(d.k >= 1 && d.in_h >= d.k && d.in_w >= d.k, "conv kernel: invalid dimensions");
  require(kernel_size == d.out_c * d.k * d.k * d.in_c, "conv kernel: weight size mismatch");
}

std::atomic<Backend> g_backend{Backend::kParallel};

}  // namespace

namespace serial {

void dense_forward(std::span<const double> w, std::span<const double> b, std::span<const double> x,
                   std::span<double> y) {
  check_dense(w, y.size(), x.size());
  for (std::size_t i = 0; i < y.size(); ++i) dense_row(w, b, x, y, i);
}

void dense_backward_input(std::span<const double> w, std::span<const double> gy, std::span<double> gx) {
  check_dense(w, gy.size(), gx.size());
  for (std::size_t j = 0; j < gx.size(); ++j) dense_col_t(w, gy, gx, j);
}

void dense_accumulate_params(std::span<const double> gy, std::span<const double> x,
                             std::span<double> gw, std::span<double> gb) {
  check_dense(gw, gy.size(), x.size());
  for (std::size_t i = 0; i < gy.size(); ++i) dense_param_row(gy, x, gw, gb, i);
}

void conv2d_forward(const ConvDims& d, std::span<const double> kernel, std::span<const double> bias,
                    std::span<const double> x, std::span<double> y) {
  check_conv(d, kernel.size());
  for (std::size_t oy = 0; oy < d.out_h(); ++oy) conv_out_row(d, kernel, bias, x, y, oy);
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> kernel,
                           std::span<const double> gy, std::span<double> gx) {
  check_conv(d, kernel.size());
  for (std::size_t iy = 0; iy < d.in_h; ++iy) conv_in_row(d, kernel, gy, gx, iy);
}

void conv2d_accumulate_params(const ConvDims& d, std::span<const double> gy,
                              std::span<const double> x, std::span<double> gkernel,
                              std::span<double> gbias) {
  check_conv(d, gkernel.size());
  for (std::size_t co = 0; co < d.out_c; ++co) conv_param_channel(d, gy, x, gkernel, gbias, co);
}

}  // namespace serial

namespace parallel {

void dense_forward(std::span<const double> w, std::span<const double> b, std::span<const double> x,
                   std::span<double> y) {
  check_dense(w, y.size(), x.size());
  const Index n = static_cast<Index>(y.size());
#pragma omp parallel for schedule(static) if (n * static_cast<Index>(x.size()) > 4096)
  for (Index i = 0; i < n; ++i) dense_row(w, b, x, y, static_cast<std::size_t>(i));
}

void dense_backward_input(std::span<const double> w, std::span<const double> gy, std::span<double> gx) {
  check_dense(w, gy.size(), gx.size());
  const Index n = static_cast<Index>(gx.size());
#pragma omp parallel for schedule(static) if (n * static_cast<Index>(gy.size()) > 4096)
  for (Index j = 0; j < n; ++j) dense_col_t(w, gy, gx, static_cast<std::size_t>(j));
}

void dense_accumulate_params(std::span<const double> gy, std::span<const double> x,
                             std::span<double> gw, std::span<double> gb) {
  check_dense(gw, gy.size(), x.size());
  const Index n = static_cast<Index>(gy.size());
#pragma omp parallel for schedule(static) if (n * static_cast<Index>(x.size()) > 4096)
  for (Index i = 0; i < n; ++i) dense_param_row(gy, x, gw, gb, static_cast<std::size_t>(i));
}

void conv2d_forward(const ConvDims& d, std::span<const double> kernel, std::span<const double> bias,
                    std::span<const double> x, std::span<double> y) {
  check_conv(d, kernel.size());
  const Index n = static_cast<Index>(d.out_h());
#pragma omp parallel for schedule(static) if (d.out_h() * d.out_w() * d.out_c * d.k * d.k * d.in_c > 4096)
  for (Index oy = 0; oy < n; ++oy) conv_out_row(d, kernel, bias, x, y, static_cast<std::size_t>(oy));
}

void conv2d_backward_input(const ConvDims& d, std::span<const double> kernel,
                           std::span<const double> gy, std::span<double> gx) {
  check_conv(d, kernel.size());
  const Index n = static_cast<Index>(d.in_h);
#pragma omp parallel for schedule(static) if (d.out_h() * d.out_w() * d.out_c * d.k * d.k * d.in_c > 4096)
  for (Index iy = 0; iy < n; ++iy) conv_in_row(d, kernel, gy, gx, static_cast<std::size_t>(iy));
}

void conv2d_accumulate_params(const ConvDims& d, std::span<const double> gy,
                              std::span<const double> x, std::span<double> gkernel,
                              std::span<double> gbias) {
  check_conv(d, gkernel.size());
  const Index n = static_cast<Index>(d.out_c);
#pragma omp parallel for schedule(static) if (d.out_h() * d.out_w() * d.out_c * d.k * d.k * d.in_c > 4096)
  for (Index co = 0; co < n; ++co)
    conv_param_channel(d, gy, x, gkernel, gbias, static_cast<std::size_t>(co));
}

}  // namespace parallel

void set_backend(Backend b) { g_backend.store(b); }
Backend backend() { return g_backend.load(); }

#define FMR_DISPATCH(name, ...) \
  (backend() == Backend::kSerial ? serial::name(__VA_ARGS__) : parallel::name(__VA_ARGS__))

void dense_forward(std::span<const double> w, std::span<const double> b, std::span<const double> x,
                   std::span<double> y) {
  FMR_DISPATCH(dense_forward, w, b, x, y);
}
void dense_backward_input(std::span<const double> w, std::span<const double> gy, std::span<double> gx) {
  FMR_DISPATCH(dense_backward_input, w, gy, gx);
}
void dense_accumulate_params(std::span<const double> gy, std::span<const double> x,
                             std::span<double> gw, std::span<double> gb) {
  FMR_DISPATCH(dense_accumulate_params, gy, x, gw, gb);
}
void conv2d_forward(const ConvDims& d, std::span<const double> kernel, std::span<const double> bias,
                    std::span<const double> x, std::span<double> y) {
  FMR_DISPATCH(conv2d_forward, d, kernel, bias, x, y);
}
void conv2d_backward_input(const ConvDims& d, std::span<const double> kernel,
                           std::span<const double> gy, std::span<double> gx) {
  FMR_DISPATCH(conv2d_backward_input, d, kernel, gy, gx);
}
void conv2d_accumulate_params(const ConvDims& d, std::span<const double> gy,
                              std::span<const double> x, std::span<double> gkernel,
                              std::span<double> gbias) {
  FMR_DISPATCH(conv2d_accumulate_params, d, gy, x, gkernel, gbias);
}
#undef FMR_DISPATCH

void for_each_index(std::size_t n, const std::function<void(std::size_t)>& body, bool allow_parallel) {
  if (!allow_parallel || backend() == Backend::kSerial || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  // Exceptions cannot cross an OpenMP region; keep the one from the lowest index.
  std::exception_ptr first;
  std::size_t first_index = n;
  std::mutex mu;
  const Index count = static_cast<Index>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (Index i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard lock(mu);
      if (static_cast<std::size_t>(i) < first_index) {
        first_index = static_cast<std::size_t>(i);
        first = std::current_exception();
      }
    }
  }
  if (first) std::rethrow_exception(first);
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace fmr::kernels
