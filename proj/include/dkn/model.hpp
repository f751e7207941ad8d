#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dkn/autograd.hpp"
#include "dkn/filtering.hpp"
#include "dkn/ops.hpp"

namespace dkn::model {

enum class Variant { Dkn, Fdkn };

struct ModelConfig {
  Variant variant = Variant::Dkn;
  int kernel_size = 3;
  bool guided = true;
  bool residual = true;
  int scale = 4;  // upsampling factor r
  int guidance_channels = 3;

  // Two stride-2 layers (DKN) / 16 stacked sub-images (FDKN).
  static constexpr int resample_stride = 4;
  // Spatial extent feeding one output pixel of the DKN feature stack.
  static constexpr int receptive_field = 51;

  void validate() const;
  filtering::GridSpec grid() const { return filtering::GridSpec(kernel_size); }
  std::string describe() const;
};

template <typename S>
struct Conv2dLayerT {
  ParameterT<S> weight;
  ParameterT<S> bias;
  bool has_bias = true;
  int stride = 1;
  int pad = 0;
  std::string name;

  ValueT<S> forward(GraphT<S>& g, ValueT<S> x) {
    ValueT<S> w = g.param(weight);
    if (has_bias) return ops::conv2d(x, w, g.param(bias), stride, pad, name.c_str());
    return ops::conv2d(x, w, stride, pad, name.c_str());
  }
};

template <typename S>
struct BatchNormLayerT {
  ParameterT<S> scale;
  ParameterT<S> shift;
  ops::BatchNormStats<S> stats;
  std::string name;

  ValueT<S> forward(GraphT<S>& g, ValueT<S> x, bool training) {
    return ops::batch_norm(x, g.param(scale), g.param(shift), stats, training, S(1e-5), S(0.1),
                           name.c_str());
  }
};

// Seven-layer feature extractor plus the two 1x1 regression heads. The two
// stride-2 layers reduce resolution by 4; a 51x51 patch maps to one feature
// vector of 128 channels.
template <typename S>
struct DknStreamT {
  Conv2dLayerT<S> conv1;  // 7x7
  BatchNormLayerT<S> bn1;
  Conv2dLayerT<S> down1;  // 2x2, stride 2
  Conv2dLayerT<S> conv2;  // 5x5
  BatchNormLayerT<S> bn2;
  Conv2dLayerT<S> down2;  // 2x2, stride 2
  Conv2dLayerT<S> conv3;  // 5x5
  BatchNormLayerT<S> bn3;
  Conv2dLayerT<S> conv4;  // 3x3
  Conv2dLayerT<S> conv5;  // 3x3
  Conv2dLayerT<S> weight_head;  // 1x1 -> k^2
  Conv2dLayerT<S> offset_head;  // 1x1 -> 2k^2

  ValueT<S> features(GraphT<S>& g, ValueT<S> x, bool training);
};

// Six 3x3 resolution-preserving layers on pixel-unshuffled input; heads emit
// per-sub-pixel weights (16k^2) and offsets (32k^2).
template <typename S>
struct FdknStreamT {
  Conv2dLayerT<S> conv[6];
  BatchNormLayerT<S> bn[3];
  Conv2dLayerT<S> weight_head;
  Conv2dLayerT<S> offset_head;

  ValueT<S> features(GraphT<S>& g, ValueT<S> x, bool training);
};

template <typename S>
struct DknModelT {
  DknStreamT<S> depth;
  DknStreamT<S> guide;  // unused for unguided models
};

template <typename S>
struct FdknModelT {
  FdknStreamT<S> depth;
  FdknStreamT<S> guide;
};

// A built model: configuration, parameters and running statistics, with a
// stable enumeration order for optimization and serialization.
template <typename S>
class ModelT {
 public:
  ModelT() = default;

  const ModelConfig& config() const { return config_; }
  bool is_dkn() const { return config_.variant == Variant::Dkn; }
  DknModelT<S>& dkn();
  FdknModelT<S>& fdkn();
  const DknModelT<S>& dkn() const;
  const FdknModelT<S>& fdkn() const;

  std::vector<ParameterT<S>*> parameters();
  std::vector<std::pair<std::string, TensorT<S>*>> buffers();  // BN running stats
  std::int64_t parameter_count();
  void zero_grads();

  // Network invocations made by full-image inference (shift-and-stitch
  // accounting).
  std::int64_t forward_count = 0;

  template <typename U>
  friend class ModelT;

  template <typename U>
  ModelT<U> cast() const;

 private:
  template <typename U>
  friend ModelT<U> build_model(const ModelConfig&, std::uint64_t);

  ModelConfig config_;
  std::unique_ptr<DknModelT<S>> dkn_;
  std::unique_ptr<FdknModelT<S>> fdkn_;
};

// Freshly initialized model; deterministic for a fixed seed. Conv weights
// are uniform in +-1/sqrt(fan_in), biases zero, batch-norm scale/shift 1/0,
// and the offset heads start at zero so sampling begins on the regular grid.
template <typename S>
ModelT<S> build_model(const ModelConfig& config, std::uint64_t seed);

template <typename S>
struct FeaturePairT {
  ValueT<S> guide;  // invalid for unguided models
  ValueT<S> depth;
};

// DKN feature extraction on receptive-field patches (51x51 only).
template <typename S>
FeaturePairT<S> extract_features(GraphT<S>& g, ModelT<S>& m, ValueT<S> guidance_patch,
                                 ValueT<S> target_patch, bool training = false);

// Per-stream 1x1 conv + sigmoid, stream combination by elementwise product,
// then mean subtraction (residual) or L1 normalization (non-residual).
template <typename S>
ValueT<S> regress_weights(GraphT<S>& g, ModelT<S>& m, FeaturePairT<S> features);

// Per-stream 1x1 conv, stream combination by elementwise product, then the
// window restriction.
template <typename S>
ValueT<S> regress_offsets(GraphT<S>& g, ModelT<S>& m, FeaturePairT<S> features);

template <typename S>
struct RegressedFieldsT {
  ValueT<S> kernels;
  ValueT<S> offsets;
};

// One DKN network invocation on (possibly shifted/padded) full images:
// produces kernel/offset fields at 1/4 the input resolution. Increments the
// model forward counter.
template <typename S>
RegressedFieldsT<S> dkn_forward_fields(GraphT<S>& g, ModelT<S>& m, ValueT<S> guidance,
                                       ValueT<S> target, bool training = false);

// Filtered value at the center of each patch: feature extraction, weight and
// offset regression, then the deformable weighted average (with residual add
// per config). Batched patches give a N x 1 x 1 x 1 result.
template <typename S>
ValueT<S> forward_patch(GraphT<S>& g, ModelT<S>& m, ValueT<S> guidance_patch,
                        ValueT<S> target_patch, bool training = false);

// FDKN full-image pass: pixel-unshuffled streams, heads for all 16 sub-pixel
// positions at once, pixel-shuffled back to full-resolution fields.
template <typename S>
RegressedFieldsT<S> forward_full_fdkn(GraphT<S>& g, ModelT<S>& m, ValueT<S> guidance,
                                      ValueT<S> target, bool training = false);

using Model = ModelT<float>;

extern template class ModelT<float>;
extern template class ModelT<double>;

}  // namespace dkn::model
