#pragma once

#include "dkn/autograd.hpp"
#include "dkn/tensor.hpp"

namespace dkn::filtering {

// Sampling geometry: a k x k tap lattice centered on each output pixel, with
// learned per-tap displacements confined to a (2R+1) x (2R+1) window.
struct GridSpec {
  int kernel_size = 3;
  int window_radius = 7;

  GridSpec() = default;
  explicit GridSpec(int k, int radius = 7);

  int taps() const { return kernel_size * kernel_size; }
  // Integer lattice offsets of tap t, row-major, symmetric about 0.
  int base_dy(int t) const { return t / kernel_size - kernel_size / 2; }
  int base_dx(int t) const { return t % kernel_size - kernel_size / 2; }
};

// Kernel-field invariant validation inside deformable_weighted_average.
// Defaults to on in debug builds and off in release builds.
void set_contract_checks(bool enabled);
bool contract_checks_enabled();

// Samples each image channel at fractional positions (positions tensor is
// N x 2 x Ho x Wo; channel 0 holds x, channel 1 holds y). Positions are
// clamped to the image rectangle; the clamp passes zero gradient while
// active. At exact integer coordinates the kink takes the left-cell
// subgradient.
template <typename S>
ValueT<S> bilinear_sample(ValueT<S> image, ValueT<S> positions);

// Clamps every sampling position q + offset so that its displacement from
// the output pixel stays inside [-R, R]^2. Idempotent; zero gradient where
// the clamp is active. Offset channel layout: per tap t, channel 2t is the
// x displacement and channel 2t+1 the y displacement.
template <typename S>
ValueT<S> restrict_offsets(ValueT<S> raw, const GridSpec& grid);

// f_hat(p) = [f(p) +] sum_t K_t(p) * f(p + base_t + offset_t(p)), sampled
// bilinearly. kernels is N x k^2 x Hf x Wf, offsets N x 2k^2 x Hf x Wf, and
// field pixel (y, x) maps to target pixel (origin_y + y, origin_x + x).
template <typename S>
ValueT<S> deformable_weighted_average(ValueT<S> target, ValueT<S> kernels, ValueT<S> offsets,
                                      const GridSpec& grid, bool residual,
                                      std::int64_t origin_y = 0, std::int64_t origin_x = 0);

// Separable Catmull-Rom resampling (a = -0.5), edge-clamped, weights
// normalized per output coordinate. Data preparation only; not part of the
// computation graph.
template <typename S>
TensorT<S> bicubic_resize(const TensorT<S>& image, std::int64_t out_h, std::int64_t out_w);

}  // namespace dkn::filtering
