#pragma once

#include "dkn/model.hpp"
#include "dkn/tensor.hpp"

namespace dkn::infer {

// Border treatment when growing images so every pixel owns a full receptive
// field. Replicate is the production choice; zero exists to demonstrate that
// interior pixels do not depend on it.
enum class PadMode { Replicate, Zero };

template <typename S>
struct UpsampleRequestT {
  TensorT<S> lr_depth;     // 1 x 1 x h x w
  TensorT<S> hr_guidance;  // 1 x C x (r*h) x (r*w); may be empty for unguided models
  model::ModelT<S>* model = nullptr;
};

// Lossless spatial-to-channel rearrangement with stride r and its inverse.
template <typename S>
TensorT<S> pixel_unshuffle(const TensorT<S>& x, int r);

template <typename S>
TensorT<S> pixel_shuffle(const TensorT<S>& x, int r);

template <typename S>
struct StitchedFields {
  TensorT<S> kernels;  // N x k^2 x H x W
  TensorT<S> offsets;  // N x 2k^2 x H x W
};

// Runs the stride-4 DKN network on the 16 shifted copies of the padded
// inputs and interleaves the per-shift outputs: shift (dy, dx) provides the
// output pixels congruent to (dy, dx) mod 4. Exactly 16 network forward
// passes; equivalent to evaluating every pixel's receptive-field patch.
template <typename S>
StitchedFields<S> shift_and_stitch(model::ModelT<S>& m, const TensorT<S>& guidance,
                                   const TensorT<S>& target_upsampled,
                                   PadMode pad_mode = PadMode::Replicate);

// Full-resolution FDKN fields (single forward pass). Pads non-divisible
// inputs to a multiple of 4 (replicate) and crops the fields back.
template <typename S>
StitchedFields<S> fdkn_fields(model::ModelT<S>& m, const TensorT<S>& guidance,
                              const TensorT<S>& target_upsampled);

// Bicubic pre-upsampling, kernel/offset field prediction (shift-and-stitch
// for DKN, single pass for FDKN), then the deformable weighted average.
template <typename S>
TensorT<S> upsample(const UpsampleRequestT<S>& request);

using UpsampleRequest = UpsampleRequestT<float>;

}  // namespace dkn::infer
