#include <doctest.h>

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmr/kernels.hpp"

using namespace fmr::kernels;

namespace {

std::vector<double> randn(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST_CASE("dense kernels: serial matches the textbook formula") {
  std::mt19937_64 rng(1);
  const std::size_t in = 7, out = 5;
  const auto w = randn(in * out, rng), b = randn(out, rng), x = randn(in, rng), gy = randn(out, rng);
  std::vector<double> y(out), gx(in);
  serial::dense_forward(w, b, x, y);
  serial::dense_backward_input(w, gy, gx);
  for (std::size_t i = 0; i < out; ++i) {
    double s = b[i];
    for (std::size_t j = 0; j < in; ++j) s += w[i * in + j] * x[j];
    CHECK(y[i] == doctest::Approx(s).epsilon(1e-12));
  }
  for (std::size_t j = 0; j < in; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < out; ++i) s += w[i * in + j] * gy[i];
    CHECK(gx[j] == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("conv kernels: serial matches a direct sum") {
  std::mt19937_64 rng(2);
  ConvDims d{6, 5, 2, 3, 3};
  const auto k = randn(d.out_c * 9 * d.in_c, rng), b = randn(d.out_c, rng);
  const auto x = randn(d.in_h * d.in_w * d.in_c, rng);
  std::vector<double> y(d.out_h() * d.out_w() * d.out_c);
  serial::conv2d_forward(d, k, b, x, y);
  for (std::size_t oy = 0; oy < d.out_h(); ++oy)
    for (std::size_t ox = 0; ox < d.out_w(); ++ox)
      for (std::size_t co = 0; co < d.out_c; ++co) {
        double s = b[co];
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx)
            for (std::size_t ci = 0; ci < d.in_c; ++ci)
              s += k[((co * 3 + ky) * 3 + kx) * d.in_c + ci] * x[((oy + ky) * d.in_w + ox + kx) * d.in_c + ci];
        CHECK(y[(oy * d.out_w() + ox) * d.out_c + co] == doctest::Approx(s).epsilon(1e-12));
      }

  // backward_input is the adjoint of forward (without bias): <gy, K x> = <K^T gy, x>
  const auto gy = randn(y.size(), rng);
  std::vector<double> y0(y.size()), gx(x.size());
  serial::conv2d_forward(d, k, {}, x, y0);
  serial::conv2d_backward_input(d, k, gy, gx);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y0.size(); ++i) lhs += gy[i] * y0[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += gx[i] * x[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
}

TEST_CASE("parallel kernels are bit-identical to the serial reference (property)") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t in = 1 + rng() % 300, out = 1 + rng() % 120;
    const auto w = randn(in * out, rng), b = randn(out, rng), x = randn(in, rng), gy = randn(out, rng);
    std::vector<double> ys(out), yp(out), gxs(in), gxp(in);
    serial::dense_forward(w, b, x, ys);
    parallel::dense_forward(w, b, x, yp);
    CHECK(ys == yp);
    serial::dense_backward_input(w, gy, gxs);
    parallel::dense_backward_input(w, gy, gxp);
    CHECK(gxs == gxp);
    std::vector<double> gws(in * out, 0.5), gwp(in * out, 0.5), gbs(out, 0.1), gbp(out, 0.1);
    serial::dense_accumulate_params(gy, x, gws, gbs);
    parallel::dense_accumulate_params(gy, x, gwp, gbp);
    CHECK(gws == gwp);
    CHECK(gbs == gbp);

    ConvDims d{4 + rng() % 12, 4 + rng() % 12, 1 + rng() % 3, 1 + rng() % 5, 1 + rng() % 4};
    const auto k = randn(d.out_c * d.k * d.k * d.in_c, rng), cb = randn(d.out_c, rng);
    const auto cx = randn(d.in_h * d.in_w * d.in_c, rng);
    const std::size_t osz = d.out_h() * d.out_w() * d.out_c;
    std::vector<double> cys(osz), cyp(osz);
    serial::conv2d_forward(d, k, cb, cx, cys);
    parallel::conv2d_forward(d, k, cb, cx, cyp);
    CHECK(cys == cyp);
    const auto cgy = randn(osz, rng);
    std::vector<double> cgxs(cx.size()), cgxp(cx.size());
    serial::conv2d_backward_input(d, k, cgy, cgxs);
    parallel::conv2d_backward_input(d, k, cgy, cgxp);
    CHECK(cgxs == cgxp);
    std::vector<double> gks(k.size(), 0.0), gkp(k.size(), 0.0), gcbs(d.out_c, 0.0), gcbp(d.out_c, 0.0);
    serial::conv2d_accumulate_params(d, cgy, cx, gks, gcbs);
    parallel::conv2d_accumulate_params(d, cgy, cx, gkp, gcbp);
    CHECK(gks == gkp);
    CHECK(gcbs == gcbp);
  }
}

TEST_CASE("for_each_index visits every index once and rethrows the lowest failure") {
  for (auto be : {Backend::kSerial, Backend::kParallel}) {
    set_backend(be);
    std::vector<int> hits(257, 0);
    for_each_index(hits.size(), [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) CHECK(h == 1);
    try {
      for_each_index(50, [](std::size_t i) {
        if (i == 17 || i == 40) throw std::runtime_error(std::to_string(i));
      });
      FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()) == "17");
    }
  }
  set_backend(Backend::kParallel);
}
