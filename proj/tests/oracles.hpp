// Test-only reference implementations, kept independent of the library's
// kernels: plain nested loops, no shared helpers.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "dkn/tensor.hpp"

namespace oracle {

// Six nested loops straight from the cross-correlation definition.
template <typename S>
dkn::TensorT<S> naive_conv2d(const dkn::TensorT<S>& in, const dkn::TensorT<S>& w,
                             const dkn::TensorT<S>& bias, int stride, int pad) {
  std::int64_t out_h = (in.h() + 2 * pad - w.h()) / stride + 1;
  std::int64_t out_w = (in.w() + 2 * pad - w.w()) / stride + 1;
  dkn::TensorT<S> out(in.n(), w.n(), out_h, out_w);
  for (std::int64_t n = 0; n < in.n(); ++n)
    for (std::int64_t oc = 0; oc < w.n(); ++oc)
      for (std::int64_t oy = 0; oy < out_h; ++oy)
        for (std::int64_t ox = 0; ox < out_w; ++ox) {
          double acc = bias.size() > 0 ? static_cast<double>(bias[oc]) : 0.0;
          for (std::int64_t ic = 0; ic < in.c(); ++ic)
            for (std::int64_t ky = 0; ky < w.h(); ++ky)
              for (std::int64_t kx = 0; kx < w.w(); ++kx) {
                std::int64_t iy = oy * stride + ky - pad;
                std::int64_t ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= in.h() || ix < 0 || ix >= in.w()) continue;
                acc += static_cast<double>(in.at(n, ic, iy, ix)) *
                       static_cast<double>(w.at(oc, ic, ky, kx));
              }
          out.at(n, oc, oy, ox) = static_cast<S>(acc);
        }
  return out;
}

// Literal expansion of the bilinear sampler: sum g(sx,tx)*g(sy,ty)*f_t over
// every pixel of the plane, with g(a,b) = max(0, 1-|a-b|).
template <typename S>
double bilinear_direct(const dkn::TensorT<S>& img, std::int64_t n, std::int64_t c, double sy,
                       double sx) {
  double acc = 0.0;
  for (std::int64_t ty = 0; ty < img.h(); ++ty) {
    for (std::int64_t tx = 0; tx < img.w(); ++tx) {
      double gy = std::max(0.0, 1.0 - std::abs(sy - static_cast<double>(ty)));
      double gx = std::max(0.0, 1.0 - std::abs(sx - static_cast<double>(tx)));
      if (gy == 0.0 || gx == 0.0) continue;
      acc += gy * gx * static_cast<double>(img.at(n, c, ty, tx));
    }
  }
  return acc;
}

// Brute-force tap sum of the deformable weighted average, positions clamped
// to the image rectangle.
template <typename S>
dkn::TensorT<S> naive_deformable(const dkn::TensorT<S>& target, const dkn::TensorT<S>& kernels,
                                 const dkn::TensorT<S>& offsets, int k, bool residual,
                                 std::int64_t origin_y = 0, std::int64_t origin_x = 0) {
  dkn::TensorT<S> out(target.n(), target.c(), kernels.h(), kernels.w());
  for (std::int64_t n = 0; n < target.n(); ++n)
    for (std::int64_t c = 0; c < target.c(); ++c)
      for (std::int64_t y = 0; y < kernels.h(); ++y)
        for (std::int64_t x = 0; x < kernels.w(); ++x) {
          std::int64_t py = origin_y + y;
          std::int64_t px = origin_x + x;
          double acc = residual ? static_cast<double>(target.at(n, c, py, px)) : 0.0;
          for (int t = 0; t < k * k; ++t) {
            double sx = static_cast<double>(px + t % k - k / 2) +
                        static_cast<double>(offsets.at(n, 2 * t, y, x));
            double sy = static_cast<double>(py + t / k - k / 2) +
                        static_cast<double>(offsets.at(n, 2 * t + 1, y, x));
            sx = std::clamp(sx, 0.0, static_cast<double>(target.w() - 1));
            sy = std::clamp(sy, 0.0, static_cast<double>(target.h() - 1));
            acc += static_cast<double>(kernels.at(n, t, y, x)) *
                   bilinear_direct(target, n, c, sy, sx);
          }
          out.at(n, c, y, x) = static_cast<S>(acc);
        }
  return out;
}

// Deterministic uniform values (independent of the library's generators).
struct TestRng {
  std::mt19937_64 gen;
  explicit TestRng(std::uint64_t seed) : gen(seed) {}
  double uniform() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::int64_t index(std::int64_t n) {
    return static_cast<std::int64_t>(gen() % static_cast<std::uint64_t>(n));
  }
};

template <typename S>
dkn::TensorT<S> random_tensor(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w,
                              TestRng& rng, double lo = -1.0, double hi = 1.0) {
  dkn::TensorT<S> t(n, c, h, w);
  for (std::int64_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<S>(rng.uniform(lo, hi));
  }
  return t;
}

}  // namespace oracle
