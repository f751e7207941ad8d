#include "dkn/model.hpp"

#include <cmath>
#include <random>

namespace dkn::model {

namespace {

// Portable uniform doubles from raw mt19937_64 bits, so initialization is
// reproducible across standard libraries.
struct InitRng {
  std::mt19937_64 gen;
  explicit InitRng(std::uint64_t seed) : gen(seed) {}
  double uniform() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }
  double uniform_signed(double bound) { return (2.0 * uniform() - 1.0) * bound; }
};

template <typename S>
Conv2dLayerT<S> make_conv(const std::string& name, std::int64_t out_c, std::int64_t in_c,
                          int kh, int kw, int stride, int pad, bool bias, InitRng& rng,
                          bool zero_init = false) {
  Conv2dLayerT<S> layer;
  layer.name = name;
  layer.stride = stride;
  layer.pad = pad;
  layer.has_bias = bias;
  TensorT<S> w(out_c, in_c, kh, kw);
  if (!zero_init) {
    double bound = 1.0 / std::sqrt(static_cast<double>(in_c * kh * kw));
    for (std::int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<S>(rng.uniform_signed(bound));
  }
  layer.weight.init(name + ".weight", std::move(w));
  if (bias) layer.bias.init(name + ".bias", TensorT<S>(1, out_c, 1, 1));
  return layer;
}

template <typename S>
BatchNormLayerT<S> make_bn(const std::string& name, std::int64_t channels) {
  BatchNormLayerT<S> layer;
  layer.name = name;
  layer.scale.init(name + ".scale", TensorT<S>::full(1, channels, 1, 1, S(1)));
  layer.shift.init(name + ".shift", TensorT<S>(1, channels, 1, 1));
  layer.stats.init(channels);
  return layer;
}

template <typename S>
DknStreamT<S> make_dkn_stream(const std::string& prefix, int in_c, int k, InitRng& rng) {
  DknStreamT<S> s;
  s.conv1 = make_conv<S>(prefix + ".conv1", 32, in_c, 7, 7, 1, 0, false, rng);
  s.bn1 = make_bn<S>(prefix + ".bn1", 32);
  s.down1 = make_conv<S>(prefix + ".down1", 32, 32, 2, 2, 2, 0, true, rng);
  s.conv2 = make_conv<S>(prefix + ".conv2", 64, 32, 5, 5, 1, 0, false, rng);
  s.bn2 = make_bn<S>(prefix + ".bn2", 64);
  s.down2 = make_conv<S>(prefix + ".down2", 64, 64, 2, 2, 2, 0, true, rng);
  s.conv3 = make_conv<S>(prefix + ".conv3", 128, 64, 5, 5, 1, 0, false, rng);
  s.bn3 = make_bn<S>(prefix + ".bn3", 128);
  s.conv4 = make_conv<S>(prefix + ".conv4", 128, 128, 3, 3, 1, 0, true, rng);
  s.conv5 = make_conv<S>(prefix + ".conv5", 128, 128, 3, 3, 1, 0, true, rng);
  s.weight_head = make_conv<S>(prefix + ".weight_head", k * k, 128, 1, 1, 1, 0, true, rng);
  s.offset_head =
      make_conv<S>(prefix + ".offset_head", 2 * k * k, 128, 1, 1, 1, 0, true, rng, true);
  return s;
}

// Per-layer widths of the FDKN feature extractor. Calibration constant:
// chosen so the guided two-stream model lands near the 0.6M parameter
// budget while still producing 128-channel features.
constexpr int kFdknWidths[6] = {32, 48, 64, 64, 96, 128};

template <typename S>
FdknStreamT<S> make_fdkn_stream(const std::string& prefix, int in_c, int k, InitRng& rng) {
  FdknStreamT<S> s;
  int prev = in_c;
  for (int i = 0; i < 6; ++i) {
    bool has_bn = i < 3;
    s.conv[i] = make_conv<S>(prefix + ".conv" + std::to_string(i + 1), kFdknWidths[i], prev, 3, 3,
                             1, 1, !has_bn, rng);
    if (has_bn) s.bn[i] = make_bn<S>(prefix + ".bn" + std::to_string(i + 1), kFdknWidths[i]);
    prev = kFdknWidths[i];
  }
  constexpr int kSub = ModelConfig::resample_stride * ModelConfig::resample_stride;
  s.weight_head = make_conv<S>(prefix + ".weight_head", kSub * k * k, prev, 1, 1, 1, 0, true, rng);
  s.offset_head =
      make_conv<S>(prefix + ".offset_head", 2 * kSub * k * k, prev, 1, 1, 1, 0, true, rng, true);
  return s;
}

// Largest leading region whose conv output geometry is exact; mirrors the
// usual convention of dropping trailing rows/columns at strided layers.
template <typename S>
ValueT<S> crop_to_stride(ValueT<S> x, int k, int stride) {
  std::int64_t h = x.tensor().h();
  std::int64_t w = x.tensor().w();
  if (h < k || w < k) return x;
  std::int64_t h2 = k + (h - k) / stride * stride;
  std::int64_t w2 = k + (w - k) / stride * stride;
  if (h2 == h && w2 == w) return x;
  return ops::crop(x, 0, 0, h2, w2);
}

template <typename S>
void collect_conv(std::vector<ParameterT<S>*>& out, Conv2dLayerT<S>& l) {
  out.push_back(&l.weight);
  if (l.has_bias) out.push_back(&l.bias);
}

template <typename S>
void collect_bn(std::vector<ParameterT<S>*>& out, BatchNormLayerT<S>& l) {
  out.push_back(&l.scale);
  out.push_back(&l.shift);
}

template <typename S>
void collect_stream(std::vector<ParameterT<S>*>& out, DknStreamT<S>& s) {
  collect_conv(out, s.conv1);
  collect_bn(out, s.bn1);
  collect_conv(out, s.down1);
  collect_conv(out, s.conv2);
  collect_bn(out, s.bn2);
  collect_conv(out, s.down2);
  collect_conv(out, s.conv3);
  collect_bn(out, s.bn3);
  collect_conv(out, s.conv4);
  collect_conv(out, s.conv5);
  collect_conv(out, s.weight_head);
  collect_conv(out, s.offset_head);
}

template <typename S>
void collect_stream(std::vector<ParameterT<S>*>& out, FdknStreamT<S>& s) {
  for (int i = 0; i < 6; ++i) {
    collect_conv(out, s.conv[i]);
    if (i < 3) collect_bn(out, s.bn[i]);
  }
  collect_conv(out, s.weight_head);
  collect_conv(out, s.offset_head);
}

template <typename S>
void collect_buffers(std::vector<std::pair<std::string, TensorT<S>*>>& out, DknStreamT<S>& s) {
  for (BatchNormLayerT<S>* bn : {&s.bn1, &s.bn2, &s.bn3}) {
    out.emplace_back(bn->name + ".running_mean", &bn->stats.mean);
    out.emplace_back(bn->name + ".running_var", &bn->stats.var);
  }
}

template <typename S>
void collect_buffers(std::vector<std::pair<std::string, TensorT<S>*>>& out, FdknStreamT<S>& s) {
  for (int i = 0; i < 3; ++i) {
    out.emplace_back(s.bn[i].name + ".running_mean", &s.bn[i].stats.mean);
    out.emplace_back(s.bn[i].name + ".running_var", &s.bn[i].stats.var);
  }
}

}  // namespace

void ModelConfig::validate() const {
  DKN_CHECK(kernel_size == 3 || kernel_size == 5 || kernel_size == 7, ConfigError,
            "ModelConfig: unsupported kernel size ", kernel_size);
  DKN_CHECK(scale == 4 || scale == 8 || scale == 16, ConfigError,
            "ModelConfig: unsupported scale factor ", scale);
  DKN_CHECK(guidance_channels >= 1, ConfigError, "ModelConfig: guidance channels must be >= 1");
}

std::string ModelConfig::describe() const {
  return detail::cat(variant == Variant::Dkn ? "dkn" : "fdkn", guided ? "" : " unguided",
                     residual ? "" : " no-residual", " k=", kernel_size, " x", scale);
}

template <typename S>
DknModelT<S>& ModelT<S>::dkn() {
  DKN_CHECK(dkn_ != nullptr, ContractError, "model is not a DKN");
  return *dkn_;
}

template <typename S>
FdknModelT<S>& ModelT<S>::fdkn() {
  DKN_CHECK(fdkn_ != nullptr, ContractError, "model is not an FDKN");
  return *fdkn_;
}

template <typename S>
const DknModelT<S>& ModelT<S>::dkn() const {
  DKN_CHECK(dkn_ != nullptr, ContractError, "model is not a DKN");
  return *dkn_;
}

template <typename S>
const FdknModelT<S>& ModelT<S>::fdkn() const {
  DKN_CHECK(fdkn_ != nullptr, ContractError, "model is not an FDKN");
  return *fdkn_;
}

template <typename S>
std::vector<ParameterT<S>*> ModelT<S>::parameters() {
  std::vector<ParameterT<S>*> out;
  if (dkn_ != nullptr) {
    collect_stream(out, dkn_->depth);
    if (config_.guided) collect_stream(out, dkn_->guide);
  } else if (fdkn_ != nullptr) {
    collect_stream(out, fdkn_->depth);
    if (config_.guided) collect_stream(out, fdkn_->guide);
  }
  return out;
}

template <typename S>
std::vector<std::pair<std::string, TensorT<S>*>> ModelT<S>::buffers() {
  std::vector<std::pair<std::string, TensorT<S>*>> out;
  if (dkn_ != nullptr) {
    collect_buffers(out, dkn_->depth);
    if (config_.guided) collect_buffers(out, dkn_->guide);
  } else if (fdkn_ != nullptr) {
    collect_buffers(out, fdkn_->depth);
    if (config_.guided) collect_buffers(out, fdkn_->guide);
  }
  return out;
}

template <typename S>
std::int64_t ModelT<S>::parameter_count() {
  std::int64_t total = 0;
  for (ParameterT<S>* p : parameters()) total += p->value.size();
  return total;
}

template <typename S>
void ModelT<S>::zero_grads() {
  for (ParameterT<S>* p : parameters()) p->zero_grad();
}

template <typename S>
template <typename U>
ModelT<U> ModelT<S>::cast() const {
  ModelT<S>& self = const_cast<ModelT<S>&>(*this);
  ModelT<U> out = build_model<U>(config_, 0);
  auto src_params = self.parameters();
  auto dst_params = out.parameters();
  for (std::size_t i = 0; i < src_params.size(); ++i) {
    dst_params[i]->value = src_params[i]->value.template cast<U>();
  }
  auto src_buf = self.buffers();
  auto dst_buf = out.buffers();
  for (std::size_t i = 0; i < src_buf.size(); ++i) {
    *dst_buf[i].second = src_buf[i].second->template cast<U>();
  }
  return out;
}

template <typename S>
ModelT<S> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  InitRng rng(seed);
  ModelT<S> m;
  m.config_ = config;
  int k = config.kernel_size;
  if (config.variant == Variant::Dkn) {
    m.dkn_ = std::make_unique<DknModelT<S>>();
    m.dkn_->depth = make_dkn_stream<S>("depth", 1, k, rng);
    if (config.guided) {
      m.dkn_->guide = make_dkn_stream<S>("guide", config.guidance_channels, k, rng);
    }
  } else {
    constexpr int r = ModelConfig::resample_stride;
    m.fdkn_ = std::make_unique<FdknModelT<S>>();
    m.fdkn_->depth = make_fdkn_stream<S>("depth", r * r, k, rng);
    if (config.guided) {
      m.fdkn_->guide = make_fdkn_stream<S>("guide", r * r * config.guidance_channels, k, rng);
    }
  }
  return m;
}

template <typename S>
ValueT<S> DknStreamT<S>::features(GraphT<S>& g, ValueT<S> x, bool training) {
  x = ops::relu(bn1.forward(g, conv1.forward(g, x), training));
  x = ops::relu(down1.forward(g, crop_to_stride(x, 2, 2)));
  x = ops::relu(bn2.forward(g, conv2.forward(g, x), training));
  x = ops::relu(down2.forward(g, crop_to_stride(x, 2, 2)));
  x = ops::relu(bn3.forward(g, conv3.forward(g, x), training));
  x = ops::relu(conv4.forward(g, x));
  x = ops::relu(conv5.forward(g, x));
  return x;
}

template <typename S>
ValueT<S> FdknStreamT<S>::features(GraphT<S>& g, ValueT<S> x, bool training) {
  for (int i = 0; i < 6; ++i) {
    x = conv[i].forward(g, x);
    if (i < 3) x = bn[i].forward(g, x, training);
    x = ops::relu(x);
  }
  return x;
}

template <typename S>
FeaturePairT<S> extract_features(GraphT<S>& g, ModelT<S>& m, ValueT<S> guidance_patch,
                                 ValueT<S> target_patch, bool training) {
  DKN_CHECK(m.is_dkn(), ContractError, "extract_features: patch-based extraction is a DKN path");
  constexpr int rf = ModelConfig::receptive_field;
  const TensorT<S>& f = target_patch.tensor();
  DKN_CHECK(f.h() == rf && f.w() == rf, DimensionError,
            "extract_features: input (receptive field) expects ", rf, "x", rf,
            " target patches, got ", f.shape_str());
  FeaturePairT<S> out;
  out.depth = m.dkn().depth.features(g, target_patch, training);
  if (m.config().guided) {
    DKN_CHECK(guidance_patch.valid(), DimensionError,
              "extract_features: guided model requires a guidance patch");
    const TensorT<S>& gp = guidance_patch.tensor();
    DKN_CHECK(gp.h() == rf && gp.w() == rf, DimensionError,
              "extract_features: input (receptive field) expects ", rf, "x", rf,
              " guidance patches, got ", gp.shape_str());
    DKN_CHECK(gp.n() == f.n(), DimensionError, "extract_features: batch mismatch ",
              gp.shape_str(), " vs ", f.shape_str());
    out.guide = m.dkn().guide.features(g, guidance_patch, training);
  }
  return out;
}

template <typename S>
ValueT<S> regress_weights(GraphT<S>& g, ModelT<S>& m, FeaturePairT<S> features) {
  ValueT<S> w;
  if (m.is_dkn()) {
    w = ops::sigmoid(m.dkn().depth.weight_head.forward(g, features.depth));
    if (m.config().guided) {
      ValueT<S> wg = ops::sigmoid(m.dkn().guide.weight_head.forward(g, features.guide));
      w = ops::mul(w, wg);
    }
  } else {
    w = ops::sigmoid(m.fdkn().depth.weight_head.forward(g, features.depth));
    if (m.config().guided) {
      ValueT<S> wg = ops::sigmoid(m.fdkn().guide.weight_head.forward(g, features.guide));
      w = ops::mul(w, wg);
    }
  }
  if (!m.is_dkn()) w = ops::pixel_shuffle(w, ModelConfig::resample_stride);
  return m.config().residual ? ops::subtract_channel_mean(w) : ops::l1_normalize_channels(w);
}

template <typename S>
ValueT<S> regress_offsets(GraphT<S>& g, ModelT<S>& m, FeaturePairT<S> features) {
  ValueT<S> o;
  if (m.is_dkn()) {
    o = m.dkn().depth.offset_head.forward(g, features.depth);
    if (m.config().guided) {
      o = ops::mul(o, m.dkn().guide.offset_head.forward(g, features.guide));
    }
  } else {
    o = m.fdkn().depth.offset_head.forward(g, features.depth);
    if (m.config().guided) {
      o = ops::mul(o, m.fdkn().guide.offset_head.forward(g, features.guide));
    }
    o = ops::pixel_shuffle(o, ModelConfig::resample_stride);
  }
  return filtering::restrict_offsets(o, m.config().grid());
}

template <typename S>
RegressedFieldsT<S> dkn_forward_fields(GraphT<S>& g, ModelT<S>& m, ValueT<S> guidance,
                                       ValueT<S> target, bool training) {
  DKN_CHECK(m.is_dkn(), ContractError, "dkn_forward_fields: model is not a DKN");
  m.forward_count++;
  FeaturePairT<S> fp;
  fp.depth = m.dkn().depth.features(g, target, training);
  if (m.config().guided) {
    DKN_CHECK(guidance.valid(), DimensionError, "dkn_forward_fields: guidance required");
    const TensorT<S>& gt = guidance.tensor();
    const TensorT<S>& ft = target.tensor();
    DKN_CHECK(gt.h() == ft.h() && gt.w() == ft.w() && gt.n() == ft.n(), DimensionError,
              "dkn_forward_fields: guidance ", gt.shape_str(), " vs target ", ft.shape_str());
    fp.guide = m.dkn().guide.features(g, guidance, training);
  }
  RegressedFieldsT<S> out;
  out.kernels = regress_weights(g, m, fp);
  out.offsets = regress_offsets(g, m, fp);
  return out;
}

template <typename S>
ValueT<S> forward_patch(GraphT<S>& g, ModelT<S>& m, ValueT<S> guidance_patch,
                        ValueT<S> target_patch, bool training) {
  FeaturePairT<S> fp = extract_features(g, m, guidance_patch, target_patch, training);
  ValueT<S> kernels = regress_weights(g, m, fp);
  ValueT<S> offsets = regress_offsets(g, m, fp);
  constexpr int center = ModelConfig::receptive_field / 2;
  return filtering::deformable_weighted_average(target_patch, kernels, offsets, m.config().grid(),
                                                m.config().residual, center, center);
}

template <typename S>
RegressedFieldsT<S> forward_full_fdkn(GraphT<S>& g, ModelT<S>& m, ValueT<S> guidance,
                                      ValueT<S> target, bool training) {
  DKN_CHECK(!m.is_dkn(), ContractError, "forward_full_fdkn: model is not an FDKN");
  constexpr int r = ModelConfig::resample_stride;
  const TensorT<S>& f = target.tensor();
  DKN_CHECK(f.h() % r == 0 && f.w() % r == 0, ConfigError,
            "forward_full_fdkn: input ", f.shape_str(), " requires padding to a multiple of ", r);
  m.forward_count++;
  FeaturePairT<S> fp;
  fp.depth = m.fdkn().depth.features(g, ops::pixel_unshuffle(target, r), training);
  if (m.config().guided) {
    DKN_CHECK(guidance.valid(), DimensionError, "forward_full_fdkn: guidance required");
    const TensorT<S>& gt = guidance.tensor();
    DKN_CHECK(gt.h() == f.h() && gt.w() == f.w() && gt.n() == f.n(), DimensionError,
              "forward_full_fdkn: guidance ", gt.shape_str(), " vs target ", f.shape_str());
    fp.guide = m.fdkn().guide.features(g, ops::pixel_unshuffle(guidance, r), training);
  }
  RegressedFieldsT<S> out;
  out.kernels = regress_weights(g, m, fp);
  out.offsets = regress_offsets(g, m, fp);
  return out;
}

template class ModelT<float>;
template class ModelT<double>;
template ModelT<float> ModelT<float>::cast<float>() const;
template ModelT<double> ModelT<float>::cast<double>() const;
template ModelT<float> ModelT<double>::cast<float>() const;
template ModelT<double> ModelT<double>::cast<double>() const;

#define DKN_INSTANTIATE_MODEL(S)                                                              \
  template struct DknStreamT<S>;                                                              \
  template struct FdknStreamT<S>;                                                             \
  template ModelT<S> build_model<S>(const ModelConfig&, std::uint64_t);                       \
  template FeaturePairT<S> extract_features<S>(GraphT<S>&, ModelT<S>&, ValueT<S>, ValueT<S>,  \
                                               bool);                                        \
  template ValueT<S> regress_weights<S>(GraphT<S>&, ModelT<S>&, FeaturePairT<S>);             \
  template ValueT<S> regress_offsets<S>(GraphT<S>&, ModelT<S>&, FeaturePairT<S>);             \
  template RegressedFieldsT<S> dkn_forward_fields<S>(GraphT<S>&, ModelT<S>&, ValueT<S>,       \
                                                     ValueT<S>, bool);                        \
  template ValueT<S> forward_patch<S>(GraphT<S>&, ModelT<S>&, ValueT<S>, ValueT<S>, bool);    \
  template RegressedFieldsT<S> forward_full_fdkn<S>(GraphT<S>&, ModelT<S>&, ValueT<S>,        \
                                                    ValueT<S>, bool);

DKN_INSTANTIATE_MODEL(float)
DKN_INSTANTIATE_MODEL(double)

#undef DKN_INSTANTIATE_MODEL

}  // namespace dkn::model
