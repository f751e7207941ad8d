#pragma once

#include "dkn/autograd.hpp"
#include "dkn/tensor.hpp"

namespace dkn::ops {

// ---------------------------------------------------------------------------
// Raw tensor kernels (no graph participation).
// ---------------------------------------------------------------------------

// out(n, c*r*r + dy*r + dx, y, x) = in(n, c, y*r + dy, x*r + dx)
template <typename S>
TensorT<S> pixel_unshuffle(const TensorT<S>& x, int r);

// Exact inverse of pixel_unshuffle.
template <typename S>
TensorT<S> pixel_shuffle(const TensorT<S>& x, int r);

template <typename S>
TensorT<S> pad_replicate(const TensorT<S>& x, int pad);

template <typename S>
TensorT<S> crop(const TensorT<S>& x, std::int64_t top, std::int64_t left, std::int64_t h,
                std::int64_t w);

// ---------------------------------------------------------------------------
// Differentiable graph ops. Gradients accumulate into input nodes; every
// output element is reduced in a fixed order, so results do not depend on
// the thread count.
// ---------------------------------------------------------------------------

// Cross-correlation, zero padding. weight is outC x inC x kh x kw, bias is
// 1 x outC x 1 x 1. Output geometry must be exact: (H + 2*pad - kh) must be
// divisible by stride and the result positive.
template <typename S>
ValueT<S> conv2d(ValueT<S> input, ValueT<S> weight, ValueT<S> bias, int stride, int pad,
                 const char* name = "conv2d");

template <typename S>
ValueT<S> conv2d(ValueT<S> input, ValueT<S> weight, int stride, int pad,
                 const char* name = "conv2d");

template <typename S>
ValueT<S> relu(ValueT<S> x);

template <typename S>
ValueT<S> sigmoid(ValueT<S> x);

// Running statistics owned by a batch-norm layer. Updated (exponential
// moving average, biased variance) only in training mode.
template <typename S>
struct BatchNormStats {
  TensorT<S> mean;
  TensorT<S> var;

  void init(std::int64_t channels) {
    mean = TensorT<S>(1, channels, 1, 1);
    var = TensorT<S>::full(1, channels, 1, 1, S(1));
  }
};

// Training mode normalizes per channel over (N, H, W) with batch statistics
// (at batch size 1 this is per-sample spatial normalization) and updates the
// running stats; eval mode applies the running stats.
template <typename S>
ValueT<S> batch_norm(ValueT<S> x, ValueT<S> scale, ValueT<S> shift, BatchNormStats<S>& stats,
                     bool training, S epsilon = S(1e-5), S momentum = S(0.1),
                     const char* name = "batch_norm");

template <typename S>
ValueT<S> mul(ValueT<S> a, ValueT<S> b);

template <typename S>
ValueT<S> add(ValueT<S> a, ValueT<S> b);

// Scalar sum of all elements.
template <typename S>
ValueT<S> sum(ValueT<S> x);

// Sum of absolute differences (the training loss). Subgradient 0 at ties.
template <typename S>
ValueT<S> l1_loss(ValueT<S> pred, ValueT<S> gt);

// x - mean(x over channel axis), per (n, h, w). Output channels sum to 0.
template <typename S>
ValueT<S> subtract_channel_mean(ValueT<S> x);

// x / sum(|x| over channel axis), per (n, h, w). For positive inputs the
// output channels sum to 1.
template <typename S>
ValueT<S> l1_normalize_channels(ValueT<S> x);

template <typename S>
ValueT<S> pixel_unshuffle(ValueT<S> x, int r);

template <typename S>
ValueT<S> pixel_shuffle(ValueT<S> x, int r);

template <typename S>
ValueT<S> crop(ValueT<S> x, std::int64_t top, std::int64_t left, std::int64_t h, std::int64_t w);

}  // namespace dkn::ops
