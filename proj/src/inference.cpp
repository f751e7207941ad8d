#include "dkn/inference.hpp"

#include "dkn/filtering.hpp"
#include "dkn/ops.hpp"

namespace dkn::infer {

namespace {

template <typename S>
TensorT<S> pad_with_mode(const TensorT<S>& x, int pad, PadMode mode) {
  if (mode == PadMode::Replicate) return ops::pad_replicate(x, pad);
  TensorT<S> out(x.n(), x.c(), x.h() + 2 * pad, x.w() + 2 * pad);
  for (std::int64_t n = 0; n < x.n(); ++n) {
    for (std::int64_t c = 0; c < x.c(); ++c) {
      for (std::int64_t y = 0; y < x.h(); ++y) {
        const S* irow = x.row(n, c, y);
        S* orow = out.row(n, c, y + pad) + pad;
        std::copy(irow, irow + x.w(), orow);
      }
    }
  }
  return out;
}

// Interleave a stride-4 field into the full-resolution output at pixels
// congruent to (dy, dx) mod 4. Passes may produce a trailing output whose
// window hangs past the last pixel; those are dropped.
template <typename S>
void scatter_shift(const TensorT<S>& field, int dy, int dx, TensorT<S>& out) {
  constexpr int r = model::ModelConfig::resample_stride;
  for (std::int64_t n = 0; n < field.n(); ++n) {
    for (std::int64_t ch = 0; ch < field.c(); ++ch) {
      for (std::int64_t j = 0; j < field.h(); ++j) {
        std::int64_t py = dy + r * j;
        if (py >= out.h()) break;
        const S* irow = field.row(n, ch, j);
        S* orow = out.row(n, ch, py);
        for (std::int64_t i = 0; i < field.w(); ++i) {
          std::int64_t px = dx + r * i;
          if (px >= out.w()) break;
          orow[px] = irow[i];
        }
      }
    }
  }
}

}  // namespace

template <typename S>
TensorT<S> pixel_unshuffle(const TensorT<S>& x, int r) {
  return ops::pixel_unshuffle(x, r);
}

template <typename S>
TensorT<S> pixel_shuffle(const TensorT<S>& x, int r) {
  return ops::pixel_shuffle(x, r);
}

template <typename S>
StitchedFields<S> shift_and_stitch(model::ModelT<S>& m, const TensorT<S>& guidance,
                                   const TensorT<S>& target_upsampled, PadMode pad_mode) {
  DKN_CHECK(m.is_dkn(), ContractError, "shift_and_stitch: model is not a DKN");
  const model::ModelConfig& cfg = m.config();
  constexpr int r = model::ModelConfig::resample_stride;
  constexpr int pad = model::ModelConfig::receptive_field / 2;
  const TensorT<S>& f = target_upsampled;
  if (cfg.guided) {
    DKN_CHECK(guidance.n() == f.n() && guidance.h() == f.h() && guidance.w() == f.w(),
              DimensionError, "shift_and_stitch: guidance ", guidance.shape_str(),
              " does not match target ", f.shape_str());
  }

  TensorT<S> padded_f = pad_with_mode(f, pad, pad_mode);
  TensorT<S> padded_g = cfg.guided ? pad_with_mode(guidance, pad, pad_mode) : TensorT<S>();

  int taps = cfg.grid().taps();
  StitchedFields<S> out;
  out.kernels = TensorT<S>(f.n(), taps, f.h(), f.w());
  out.offsets = TensorT<S>(f.n(), 2 * taps, f.h(), f.w());

  for (int dy = 0; dy < r; ++dy) {
    for (int dx = 0; dx < r; ++dx) {
      std::int64_t ph = padded_f.h() - dy;
      std::int64_t pw = padded_f.w() - dx;
      GraphT<S> g;
      ValueT<S> fv = g.leaf(ops::crop(padded_f, dy, dx, ph, pw));
      ValueT<S> gv;
      if (cfg.guided) gv = g.leaf(ops::crop(padded_g, dy, dx, ph, pw));
      model::RegressedFieldsT<S> fields = model::dkn_forward_fields(g, m, gv, fv, false);
      scatter_shift(fields.kernels.tensor(), dy, dx, out.kernels);
      scatter_shift(fields.offsets.tensor(), dy, dx, out.offsets);
    }
  }
  return out;
}

template <typename S>
StitchedFields<S> fdkn_fields(model::ModelT<S>& m, const TensorT<S>& guidance,
                              const TensorT<S>& target_upsampled) {
  DKN_CHECK(!m.is_dkn(), ContractError, "fdkn_fields: model is not an FDKN");
  constexpr int r = model::ModelConfig::resample_stride;
  const TensorT<S>& f = target_upsampled;
  std::int64_t pad_h = (r - f.h() % r) % r;
  std::int64_t pad_w = (r - f.w() % r) % r;

  TensorT<S> ft = f;
  TensorT<S> gt = guidance;
  if (pad_h != 0 || pad_w != 0) {
    // Pad on the bottom/right to the next multiple of 4, crop fields after.
    auto grow = [&](const TensorT<S>& t) {
      TensorT<S> out(t.n(), t.c(), t.h() + pad_h, t.w() + pad_w);
      for (std::int64_t n = 0; n < t.n(); ++n) {
        for (std::int64_t c = 0; c < t.c(); ++c) {
          for (std::int64_t y = 0; y < out.h(); ++y) {
            std::int64_t sy = std::min(y, t.h() - 1);
            const S* irow = t.row(n, c, sy);
            S* orow = out.row(n, c, y);
            for (std::int64_t x = 0; x < out.w(); ++x) {
              orow[x] = irow[std::min(x, t.w() - 1)];
            }
          }
        }
      }
      return out;
    };
    ft = grow(ft);
    if (m.config().guided) gt = grow(gt);
  }

  GraphT<S> g;
  ValueT<S> fv = g.leaf(ft);
  ValueT<S> gv;
  if (m.config().guided) gv = g.leaf(gt);
  model::RegressedFieldsT<S> fields = model::forward_full_fdkn(g, m, gv, fv, false);
  StitchedFields<S> out;
  out.kernels = ops::crop(fields.kernels.tensor(), 0, 0, f.h(), f.w());
  out.offsets = ops::crop(fields.offsets.tensor(), 0, 0, f.h(), f.w());
  return out;
}

template <typename S>
TensorT<S> upsample(const UpsampleRequestT<S>& request) {
  DKN_CHECK(request.model != nullptr, ContractError, "upsample: no model");
  model::ModelT<S>& m = *request.model;
  const model::ModelConfig& cfg = m.config();
  const TensorT<S>& lr = request.lr_depth;
  DKN_CHECK(lr.n() == 1 && lr.c() == 1 && lr.h() >= 1 && lr.w() >= 1, DimensionError,
            "upsample: lr_depth must be 1x1xhxw, got ", lr.shape_str());
  std::int64_t H = lr.h() * cfg.scale;
  std::int64_t W = lr.w() * cfg.scale;
  if (cfg.guided) {
    const TensorT<S>& hg = request.hr_guidance;
    DKN_CHECK(!hg.empty(), DimensionError,
              "upsample: guidance required for a guided model (expected 1x",
              cfg.guidance_channels, "x", H, "x", W, ")");
    DKN_CHECK(hg.n() == 1 && hg.c() == cfg.guidance_channels && hg.h() == H && hg.w() == W,
              DimensionError, "upsample: guidance shape ", hg.shape_str(), ", expected 1x",
              cfg.guidance_channels, "x", H, "x", W);
  }

  TensorT<S> f_hr = filtering::bicubic_resize(lr, H, W);
  StitchedFields<S> fields = m.is_dkn() ? shift_and_stitch(m, request.hr_guidance, f_hr)
                                        : fdkn_fields(m, request.hr_guidance, f_hr);

  GraphT<S> g;
  ValueT<S> out = filtering::deformable_weighted_average(
      g.leaf(f_hr), g.leaf(fields.kernels), g.leaf(fields.offsets), cfg.grid(), cfg.residual);
  DKN_CHECK(out.tensor().all_finite(), ContractError, "upsample: non-finite output");
  return out.tensor();
}

#define DKN_INSTANTIATE_INFER(S)                                                            \
  template TensorT<S> pixel_unshuffle<S>(const TensorT<S>&, int);                           \
  template TensorT<S> pixel_shuffle<S>(const TensorT<S>&, int);                             \
  template StitchedFields<S> shift_and_stitch<S>(model::ModelT<S>&, const TensorT<S>&,      \
                                                 const TensorT<S>&, PadMode);               \
  template StitchedFields<S> fdkn_fields<S>(model::ModelT<S>&, const TensorT<S>&,           \
                                            const TensorT<S>&);                             \
  template TensorT<S> upsample<S>(const UpsampleRequestT<S>&);

DKN_INSTANTIATE_INFER(float)
DKN_INSTANTIATE_INFER(double)

#undef DKN_INSTANTIATE_INFER

}  // namespace dkn::infer
