#include "dkn/ops.hpp"

#include <algorithm>
#include <cmath>

#include "dkn/threading.hpp"

namespace dkn::ops {

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  return (a % b != 0 && (a < 0) != (b < 0)) ? q - 1 : q;
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return -floor_div(-a, b); }

struct ConvGeom {
  std::int64_t n, in_c, in_h, in_w;
  std::int64_t out_c, out_h, out_w;
  std::int64_t kh, kw;
  std::int64_t stride, pad;
};

template <typename S>
ConvGeom conv_geometry(const TensorT<S>& input, const TensorT<S>& weight, const TensorT<S>* bias,
                       int stride, int pad, const char* name) {
  DKN_CHECK(stride >= 1, ConfigError, name, ": stride must be >= 1, got ", stride);
  DKN_CHECK(pad >= 0, ConfigError, name, ": padding must be >= 0, got ", pad);
  DKN_CHECK(input.c() == weight.c(), DimensionError, name, ": input has ", input.c(),
            " channels but weight expects ", weight.c());
  if (bias != nullptr) {
    DKN_CHECK(bias->c() == weight.n() && bias->size() == weight.n(), DimensionError, name,
              ": bias has ", bias->size(), " elements for ", weight.n(), " output channels");
  }
  ConvGeom g;
  g.n = input.n();
  g.in_c = input.c();
  g.in_h = input.h();
  g.in_w = input.w();
  g.out_c = weight.n();
  g.kh = weight.h();
  g.kw = weight.w();
  g.stride = stride;
  g.pad = pad;
  std::int64_t span_h = g.in_h + 2 * pad - g.kh;
  std::int64_t span_w = g.in_w + 2 * pad - g.kw;
  DKN_CHECK(span_h >= 0 && span_w >= 0, ConfigError, name, ": kernel ", g.kh, "x", g.kw,
            " larger than padded input ", g.in_h + 2 * pad, "x", g.in_w + 2 * pad);
  DKN_CHECK(span_h % stride == 0 && span_w % stride == 0, ConfigError, name,
            ": non-integer output size for input ", input.shape_str(), ", kernel ", g.kh, "x",
            g.kw, ", stride ", stride, ", padding ", pad);
  g.out_h = span_h / stride + 1;
  g.out_w = span_w / stride + 1;
  return g;
}

// Wide-output path: fixed (ic, ky, kx), accumulate along the output row for
// a block of 4 output channels at a time. The per-element accumulation order
// is (ic, ky, kx) regardless of blocking.
template <typename S>
void conv2d_forward_wide(const TensorT<S>& input, const TensorT<S>& weight, const TensorT<S>* bias,
                         const ConvGeom& g, TensorT<S>& out) {
  constexpr std::int64_t kBlock = 4;
  std::int64_t blocks = (g.out_c + kBlock - 1) / kBlock;
  threading::parallel_for(g.n * blocks * g.out_h, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t job = begin; job < end; ++job) {
      std::int64_t oy = job % g.out_h;
      std::int64_t block = (job / g.out_h) % blocks;
      std::int64_t n = job / (g.out_h * blocks);
      std::int64_t oc0 = block * kBlock;
      std::int64_t bs = std::min(kBlock, g.out_c - oc0);
      S* rows[kBlock];
      for (std::int64_t j = 0; j < bs; ++j) {
        rows[j] = out.row(n, oc0 + j, oy);
        S b = bias != nullptr ? (*bias)[oc0 + j] : S(0);
        for (std::int64_t ox = 0; ox < g.out_w; ++ox) rows[j][ox] = b;
      }
      for (std::int64_t ic = 0; ic < g.in_c; ++ic) {
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
          std::int64_t iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.in_h) continue;
          const S* irow = input.row(n, ic, iy);
          const S* wrows[kBlock];
          for (std::int64_t j = 0; j < bs; ++j) wrows[j] = weight.row(oc0 + j, ic, ky);
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            std::int64_t shift = kx - g.pad;
            std::int64_t ox0 = std::max<std::int64_t>(0, ceil_div(-shift, g.stride));
            std::int64_t ox1 = std::min(g.out_w - 1, floor_div(g.in_w - 1 - shift, g.stride));
            if (g.stride == 1) {
              const S* src = irow + shift;
              if (bs == kBlock) {
                S w0 = wrows[0][kx], w1 = wrows[1][kx], w2 = wrows[2][kx], w3 = wrows[3][kx];
                S* r0 = rows[0];
                S* r1 = rows[1];
                S* r2 = rows[2];
                S* r3 = rows[3];
                for (std::int64_t ox = ox0; ox <= ox1; ++ox) {
                  S v = src[ox];
                  r0[ox] += v * w0;
                  r1[ox] += v * w1;
                  r2[ox] += v * w2;
                  r3[ox] += v * w3;
                }
              } else {
                for (std::int64_t j = 0; j < bs; ++j) {
                  S wv = wrows[j][kx];
                  S* r = rows[j];
                  for (std::int64_t ox = ox0; ox <= ox1; ++ox) r[ox] += src[ox] * wv;
                }
              }
            } else {
              for (std::int64_t j = 0; j < bs; ++j) {
                S wv = wrows[j][kx];
                S* r = rows[j];
                for (std::int64_t ox = ox0; ox <= ox1; ++ox) {
                  r[ox] += irow[ox * g.stride + shift] * wv;
                }
              }
            }
          }
        }
      }
    }
  });
}

// Narrow-output path: per output pixel, accumulate across all output
// channels at once from a transposed weight copy. Per-element accumulation
// order is the same (ic, ky, kx) sequence as the wide path, so both produce
// bit-identical results.
template <typename S>
void conv2d_forward_narrow(const TensorT<S>& input, const TensorT<S>& weight,
                           const TensorT<S>* bias, const ConvGeom& g, TensorT<S>& out) {
  std::vector<S> wt(static_cast<std::size_t>(weight.size()));
  std::int64_t kvol = g.in_c * g.kh * g.kw;
  for (std::int64_t oc = 0; oc < g.out_c; ++oc) {
    const S* src = weight.plane(oc, 0);
    for (std::int64_t j = 0; j < kvol; ++j) {
      wt[static_cast<std::size_t>(j * g.out_c + oc)] = src[j];
    }
  }
  threading::parallel_for(g.n * g.out_h, [&](std::int64_t begin, std::int64_t end) {
    std::vector<S> acc(static_cast<std::size_t>(g.out_c));
    for (std::int64_t job = begin; job < end; ++job) {
      std::int64_t oy = job % g.out_h;
      std::int64_t n = job / g.out_h;
      for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
        if (bias != nullptr) {
          for (std::int64_t oc = 0; oc < g.out_c; ++oc) acc[oc] = (*bias)[oc];
        } else {
          std::fill(acc.begin(), acc.end(), S(0));
        }
        for (std::int64_t ic = 0; ic < g.in_c; ++ic) {
          for (std::int64_t ky = 0; ky < g.kh; ++ky) {
            std::int64_t iy = oy * g.stride + ky - g.pad;
            if (iy < 0 || iy >= g.in_h) continue;
            const S* irow = input.row(n, ic, iy);
            const S* wbase = wt.data() + ((ic * g.kh + ky) * g.kw) * g.out_c;
            for (std::int64_t kx = 0; kx < g.kw; ++kx) {
              std::int64_t ix = ox * g.stride + kx - g.pad;
              if (ix < 0 || ix >= g.in_w) continue;
              S v = irow[ix];
              const S* wrow = wbase + kx * g.out_c;
              for (std::int64_t oc = 0; oc < g.out_c; ++oc) acc[oc] += v * wrow[oc];
            }
          }
        }
        for (std::int64_t oc = 0; oc < g.out_c; ++oc) out.at(n, oc, oy, ox) = acc[oc];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// im2col + blocked GEMM path for the heavy shapes. Every output element
// still accumulates bias first and then k = (ic, ky, kx) in ascending order,
// so results are deterministic for a fixed shape regardless of threading.
// ---------------------------------------------------------------------------

template <typename S>
void im2col(const TensorT<S>& input, const ConvGeom& g, std::int64_t n, S* col) {
  std::int64_t p_total = g.out_h * g.out_w;
  threading::parallel_for(g.in_c * g.kh * g.kw, 8, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t k = begin; k < end; ++k) {
      std::int64_t kx = k % g.kw;
      std::int64_t ky = (k / g.kw) % g.kh;
      std::int64_t ic = k / (g.kw * g.kh);
      S* dst = col + k * p_total;
      for (std::int64_t oy = 0; oy < g.out_h; ++oy, dst += g.out_w) {
        std::int64_t iy = oy * g.stride + ky - g.pad;
        if (iy < 0 || iy >= g.in_h) {
          std::fill(dst, dst + g.out_w, S(0));
          continue;
        }
        const S* irow = input.row(n, ic, iy);
        std::int64_t shift = kx - g.pad;
        std::int64_t ox0 = std::max<std::int64_t>(0, ceil_div(-shift, g.stride));
        std::int64_t ox1 = std::min(g.out_w - 1, floor_div(g.in_w - 1 - shift, g.stride));
        for (std::int64_t ox = 0; ox < ox0; ++ox) dst[ox] = S(0);
        if (g.stride == 1) {
          const S* src = irow + shift + ox0;
          std::copy(src, src + (ox1 - ox0 + 1), dst + ox0);
        } else {
          for (std::int64_t ox = ox0; ox <= ox1; ++ox) dst[ox] = irow[ox * g.stride + shift];
        }
        for (std::int64_t ox = ox1 + 1; ox < g.out_w; ++ox) dst[ox] = S(0);
      }
    }
  });
}

constexpr std::int64_t kGemmOcTile = 4;
constexpr std::int64_t kGemmPTile = 32;

template <typename S>
void conv2d_forward_gemm(const TensorT<S>& input, const TensorT<S>& weight, const TensorT<S>* bias,
                         const ConvGeom& g, TensorT<S>& out, std::vector<S>& col) {
  std::int64_t K = g.in_c * g.kh * g.kw;
  std::int64_t P = g.out_h * g.out_w;
  col.resize(static_cast<std::size_t>(K * P));
  std::int64_t oc_blocks = (g.out_c + kGemmOcTile - 1) / kGemmOcTile;
  std::int64_t p_blocks = (P + kGemmPTile - 1) / kGemmPTile;
  for (std::int64_t n = 0; n < g.n; ++n) {
    im2col(input, g, n, col.data());
    threading::parallel_for(oc_blocks * p_blocks, 2, [&](std::int64_t begin, std::int64_t end) {
      S acc[kGemmOcTile][kGemmPTile];
      for (std::int64_t tile = begin; tile < end; ++tile) {
        std::int64_t pb = tile % p_blocks;
        std::int64_t ob = tile / p_blocks;
        std::int64_t oc0 = ob * kGemmOcTile;
        std::int64_t p0 = pb * kGemmPTile;
        std::int64_t ocs = std::min(kGemmOcTile, g.out_c - oc0);
        std::int64_t pw = std::min(kGemmPTile, P - p0);
        for (std::int64_t j = 0; j < ocs; ++j) {
          S b = bias != nullptr ? (*bias)[oc0 + j] : S(0);
          for (std::int64_t p = 0; p < pw; ++p) acc[j][p] = b;
        }
        if (ocs == kGemmOcTile && pw == kGemmPTile) {
          const S* w0 = weight.plane(oc0 + 0, 0);
          const S* w1 = weight.plane(oc0 + 1, 0);
          const S* w2 = weight.plane(oc0 + 2, 0);
          const S* w3 = weight.plane(oc0 + 3, 0);
          const S* c = col.data() + p0;
          for (std::int64_t k = 0; k < K; ++k, c += P) {
            S a0 = w0[k], a1 = w1[k], a2 = w2[k], a3 = w3[k];
            for (std::int64_t p = 0; p < kGemmPTile; ++p) {
              S v = c[p];
              acc[0][p] += a0 * v;
              acc[1][p] += a1 * v;
              acc[2][p] += a2 * v;
              acc[3][p] += a3 * v;
            }
          }
        } else {
          const S* c = col.data() + p0;
          for (std::int64_t k = 0; k < K; ++k, c += P) {
            for (std::int64_t j = 0; j < ocs; ++j) {
              S a = weight.plane(oc0 + j, 0)[k];
              for (std::int64_t p = 0; p < pw; ++p) acc[j][p] += a * c[p];
            }
          }
        }
        for (std::int64_t j = 0; j < ocs; ++j) {
          S* dst = out.plane(n, oc0 + j) + p0;
          for (std::int64_t p = 0; p < pw; ++p) dst[p] = acc[j][p];
        }
      }
    });
  }
}

template <typename S>
bool use_gemm(const ConvGeom& g) {
  return g.out_h * g.out_w >= 8 && g.in_c * g.kh * g.kw >= 32 && g.out_c >= 8;
}

template <typename S>
void conv2d_forward_kernel(const TensorT<S>& input, const TensorT<S>& weight, const TensorT<S>* bias,
                           const ConvGeom& g, TensorT<S>& out) {
  if (use_gemm<S>(g)) {
    std::vector<S> col;
    conv2d_forward_gemm(input, weight, bias, g, out, col);
  } else if (g.out_w >= 16 || g.out_c < 8) {
    // Wide rows vectorize along the row; narrow ones along output channels.
    conv2d_forward_wide(input, weight, bias, g, out);
  } else {
    conv2d_forward_narrow(input, weight, bias, g, out);
  }
}

// Full-window case (output 1x1, window covers the input exactly): the
// gradients are an outer product; run contiguous row updates instead of the
// scatter loops.
template <typename S>
bool conv_is_full_window(const ConvGeom& g) {
  return g.out_h == 1 && g.out_w == 1 && g.stride == 1 && g.pad == 0;
}

// Deterministic dot product: 16 independent partial chains (SIMD-friendly)
// combined in a fixed tree, then a sequential tail.
template <typename S>
S dot_fixed(const S* a, const S* b, std::int64_t n) {
  constexpr std::int64_t W = 16;
  S part[W] = {};
  std::int64_t i = 0;
  for (; i + W <= n; i += W) {
    for (std::int64_t j = 0; j < W; ++j) part[j] += a[i + j] * b[i + j];
  }
  for (std::int64_t stride = W / 2; stride > 0; stride /= 2) {
    for (std::int64_t j = 0; j < stride; ++j) part[j] += part[j + stride];
  }
  S acc = part[0];
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// gin_col = W^T * gout, then column-to-image accumulation (per input
// channel, fixed order).
template <typename S>
void conv2d_backward_input_gemm(const TensorT<S>& gout, const TensorT<S>& weight,
                                const ConvGeom& g, TensorT<S>& gin) {
  std::int64_t K = g.in_c * g.kh * g.kw;
  std::int64_t P = g.out_h * g.out_w;
  std::vector<S> col(static_cast<std::size_t>(K * P));
  std::int64_t k_blocks = (K + kGemmOcTile - 1) / kGemmOcTile;
  std::int64_t p_blocks = (P + kGemmPTile - 1) / kGemmPTile;
  for (std::int64_t n = 0; n < g.n; ++n) {
    threading::parallel_for(k_blocks * p_blocks, 2, [&](std::int64_t begin, std::int64_t end) {
      S acc[kGemmOcTile][kGemmPTile];
      for (std::int64_t tile = begin; tile < end; ++tile) {
        std::int64_t pb = tile % p_blocks;
        std::int64_t kb = tile / p_blocks;
        std::int64_t k0 = kb * kGemmOcTile;
        std::int64_t p0 = pb * kGemmPTile;
        std::int64_t ks = std::min(kGemmOcTile, K - k0);
        std::int64_t pw = std::min(kGemmPTile, P - p0);
        for (std::int64_t j = 0; j < ks; ++j) {
          for (std::int64_t p = 0; p < pw; ++p) acc[j][p] = S(0);
        }
        if (ks == kGemmOcTile && pw == kGemmPTile) {
          for (std::int64_t oc = 0; oc < g.out_c; ++oc) {
            const S* w = weight.plane(oc, 0) + k0;
            const S* grow = gout.plane(n, oc) + p0;
            S a0 = w[0], a1 = w[1], a2 = w[2], a3 = w[3];
            for (std::int64_t p = 0; p < kGemmPTile; ++p) {
              S v = grow[p];
              acc[0][p] += a0 * v;
              acc[1][p] += a1 * v;
              acc[2][p] += a2 * v;
              acc[3][p] += a3 * v;
            }
          }
        } else {
          for (std::int64_t oc = 0; oc < g.out_c; ++oc) {
            const S* w = weight.plane(oc, 0) + k0;
            const S* grow = gout.plane(n, oc) + p0;
            for (std::int64_t j = 0; j < ks; ++j) {
              S a = w[j];
              for (std::int64_t p = 0; p < pw; ++p) acc[j][p] += a * grow[p];
            }
          }
        }
        for (std::int64_t j = 0; j < ks; ++j) {
          S* dst = col.data() + (k0 + j) * P + p0;
          for (std::int64_t p = 0; p < pw; ++p) dst[p] = acc[j][p];
        }
      }
    });
    threading::parallel_for(g.in_c, [&](std::int64_t begin, std::int64_t end) {
      for (std::int64_t ic = begin; ic < end; ++ic) {
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            const S* src = col.data() + ((ic * g.kh + ky) * g.kw + kx) * P;
            std::int64_t shift = kx - g.pad;
            std::int64_t ox0 = std::max<std::int64_t>(0, ceil_div(-shift, g.stride));
            std::int64_t ox1 = std::min(g.out_w - 1, floor_div(g.in_w - 1 - shift, g.stride));
            for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
              std::int64_t iy = oy * g.stride + ky - g.pad;
              if (iy < 0 || iy >= g.in_h) continue;
              const S* srow = src + oy * g.out_w;
              S* grow = gin.row(n, ic, iy);
              if (g.stride == 1) {
                S* dst = grow + shift + ox0;
                for (std::int64_t ox = ox0; ox <= ox1; ++ox) dst[ox - ox0] += srow[ox];
              } else {
                for (std::int64_t ox = ox0; ox <= ox1; ++ox) {
                  grow[ox * g.stride + shift] += srow[ox];
                }
              }
            }
          }
        }
      }
    });
  }
}

// gW += gout * col^T, one deterministic dot per (oc, k) element.
template <typename S>
void conv2d_backward_weight_gemm(const TensorT<S>& gout, const TensorT<S>& input,
                                 const ConvGeom& g, TensorT<S>& gweight) {
  std::int64_t K = g.in_c * g.kh * g.kw;
  std::int64_t P = g.out_h * g.out_w;
  std::vector<S> col(static_cast<std::size_t>(K * P));
  for (std::int64_t n = 0; n < g.n; ++n) {
    im2col(input, g, n, col.data());
    threading::parallel_for(g.out_c, [&](std::int64_t begin, std::int64_t end) {
      for (std::int64_t oc = begin; oc < end; ++oc) {
        const S* grow = gout.plane(n, oc);
        S* dst = gweight.plane(oc, 0);
        for (std::int64_t k = 0; k < K; ++k) {
          dst[k] += dot_fixed(grow, col.data() + k * P, P);
        }
      }
    });
  }
}

template <typename S>
void conv2d_backward_input(const TensorT<S>& gout, const TensorT<S>& weight, const ConvGeom& g,
                           TensorT<S>& gin) {
  if (use_gemm<S>(g)) {
    conv2d_backward_input_gemm(gout, weight, g, gin);
    return;
  }
  if (conv_is_full_window<S>(g)) {
    std::int64_t kvol = g.in_c * g.kh * g.kw;
    threading::parallel_for(g.n, [&](std::int64_t begin, std::int64_t end) {
      for (std::int64_t n = begin; n < end; ++n) {
        S* dst = gin.plane(n, 0);
        for (std::int64_t oc = 0; oc < g.out_c; ++oc) {
          S go = gout.at(n, oc, 0, 0);
          const S* wrow = weight.plane(oc, 0);
          for (std::int64_t j = 0; j < kvol; ++j) dst[j] += go * wrow[j];
        }
      }
    });
    return;
  }
  threading::parallel_for(g.n * g.in_c, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t job = begin; job < end; ++job) {
      std::int64_t ic = job % g.in_c;
      std::int64_t n = job / g.in_c;
      for (std::int64_t oc = 0; oc < g.out_c; ++oc) {
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
          for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
            std::int64_t iy = oy * g.stride + ky - g.pad;
            if (iy < 0 || iy >= g.in_h) continue;
            const S* grow = gout.row(n, oc, oy);
            S* girow = gin.row(n, ic, iy);
            const S* wrow = weight.row(oc, ic, ky);
            for (std::int64_t kx = 0; kx < g.kw; ++kx) {
              S wv = wrow[kx];
              std::int64_t shift = kx - g.pad;
              std::int64_t ox0 = std::max<std::int64_t>(0, ceil_div(-shift, g.stride));
              std::int64_t ox1 = std::min(g.out_w - 1, floor_div(g.in_w - 1 - shift, g.stride));
              if (g.stride == 1) {
                S* dst = girow + shift + ox0;
                for (std::int64_t ox = ox0; ox <= ox1; ++ox) dst[ox - ox0] += grow[ox] * wv;
              } else {
                for (std::int64_t ox = ox0; ox <= ox1; ++ox) {
                  girow[ox * g.stride + shift] += grow[ox] * wv;
                }
              }
            }
          }
        }
      }
    }
  });
}

template <typename S>
void conv2d_backward_weight(const TensorT<S>& gout, const TensorT<S>& input, const ConvGeom& g,
                            TensorT<S>& gweight) {
  if (use_gemm<S>(g)) {
    conv2d_backward_weight_gemm(gout, input, g, gweight);
    return;
  }
  if (conv_is_full_window<S>(g)) {
    std::int64_t kvol = g.in_c * g.kh * g.kw;
    threading::parallel_for(g.out_c, [&](std::int64_t begin, std::int64_t end) {
      for (std::int64_t oc = begin; oc < end; ++oc) {
        S* dst = gweight.plane(oc, 0);
        for (std::int64_t n = 0; n < g.n; ++n) {
          S go = gout.at(n, oc, 0, 0);
          const S* irow = input.plane(n, 0);
          for (std::int64_t j = 0; j < kvol; ++j) dst[j] += go * irow[j];
        }
      }
    });
    return;
  }
  threading::parallel_for(g.out_c * g.in_c, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t job = begin; job < end; ++job) {
      std::int64_t ic = job % g.in_c;
      std::int64_t oc = job / g.in_c;
      for (std::int64_t ky = 0; ky < g.kh; ++ky) {
        for (std::int64_t kx = 0; kx < g.kw; ++kx) {
          std::int64_t shift = kx - g.pad;
          std::int64_t ox0 = std::max<std::int64_t>(0, ceil_div(-shift, g.stride));
          std::int64_t ox1 = std::min(g.out_w - 1, floor_div(g.in_w - 1 - shift, g.stride));
          S acc = S(0);
          for (std::int64_t n = 0; n < g.n; ++n) {
            for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
              std::int64_t iy = oy * g.stride + ky - g.pad;
              if (iy < 0 || iy >= g.in_h) continue;
              const S* grow = gout.row(n, oc, oy);
              const S* irow = input.row(n, ic, iy);
              if (g.stride == 1) {
                const S* src = irow + shift + ox0;
                for (std::int64_t ox = ox0; ox <= ox1; ++ox) acc += grow[ox] * src[ox - ox0];
              } else {
                for (std::int64_t ox = ox0; ox <= ox1; ++ox) {
                  acc += grow[ox] * irow[ox * g.stride + shift];
                }
              }
            }
          }
          gweight.at(oc, ic, ky, kx) += acc;
        }
      }
    }
  });
}

template <typename S>
void conv2d_backward_bias(const TensorT<S>& gout, const ConvGeom& g, TensorT<S>& gbias) {
  threading::parallel_for(g.out_c, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t oc = begin; oc < end; ++oc) {
      S acc = S(0);
      for (std::int64_t n = 0; n < g.n; ++n) {
        const S* plane = gout.plane(n, oc);
        std::int64_t cnt = g.out_h * g.out_w;
        for (std::int64_t i = 0; i < cnt; ++i) acc += plane[i];
      }
      gbias[oc] += acc;
    }
  });
}

template <typename S>
ValueT<S> conv2d_impl(ValueT<S> input, ValueT<S> weight, ValueT<S>* bias, int stride, int pad,
                      const char* name) {
  GraphT<S>& g = *input.graph();
  const TensorT<S>* bias_t = bias != nullptr ? &bias->tensor() : nullptr;
  ConvGeom geom = conv_geometry(input.tensor(), weight.tensor(), bias_t, stride, pad, name);
  TensorT<S> out(geom.n, geom.out_c, geom.out_h, geom.out_w);
  conv2d_forward_kernel(input.tensor(), weight.tensor(), bias_t, geom, out);

  NodeT<S>* in_node = input.node();
  NodeT<S>* w_node = weight.node();
  NodeT<S>* b_node = bias != nullptr ? bias->node() : nullptr;
  bool needs_grad = in_node->requires_grad || w_node->requires_grad ||
                    (b_node != nullptr && b_node->requires_grad);
  return g.make(std::move(out), needs_grad, name,
                [in_node, w_node, b_node, geom](GraphT<S>& graph, NodeT<S>& self) {
                  if (in_node->requires_grad) {
                    conv2d_backward_input(self.grad, w_node->value(), geom, graph.grad_of(in_node));
                  }
                  if (w_node->requires_grad) {
                    conv2d_backward_weight(self.grad, in_node->value(), geom, graph.grad_of(w_node));
                  }
                  if (b_node != nullptr && b_node->requires_grad) {
                    conv2d_backward_bias(self.grad, geom, graph.grad_of(b_node));
                  }
                });
}

}  // namespace

template <typename S>
TensorT<S> pixel_unshuffle(const TensorT<S>& x, int r) {
  DKN_CHECK(r >= 1, ConfigError, "pixel_unshuffle: stride must be >= 1, got ", r);
  DKN_CHECK(x.h() % r == 0 && x.w() % r == 0, DimensionError,
            "pixel_unshuffle: spatial dims of ", x.shape_str(), " not divisible by ", r);
  TensorT<S> out(x.n(), x.c() * r * r, x.h() / r, x.w() / r);
  threading::parallel_for(out.n() * out.c(), [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t job = begin; job < end; ++job) {
      std::int64_t co = job % out.c();
      std::int64_t n = job / out.c();
      std::int64_t ci = co / (r * r);
      std::int64_t dy = (co / r) % r;
      std::int64_t dx = co % r;
      for (std::int64_t y = 0; y < out.h(); ++y) {
        const S* irow = x.row(n, ci, y * r + dy);
        S* orow = out.row(n, co, y);
        for (std::int64_t xx = 0; xx < out.w(); ++xx) orow[xx] = irow[xx * r + dx];
      }
    }
  });
  return out;
}

template <typename S>
TensorT<S> pixel_shuffle(const TensorT<S>& x, int r) {
  DKN_CHECK(r >= 1, ConfigError, "pixel_shuffle: stride must be >= 1, got ", r);
  DKN_CHECK(x.c() % (static_cast<std::int64_t>(r) * r) == 0, DimensionError,
            "pixel_shuffle: channel count of ", x.shape_str(), " not divisible by ", r * r);
  TensorT<S> out(x.n(), x.c() / (r * r), x.h() * r, x.w() * r);
  threading::parallel_for(x.n() * x.c(), [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t job = begin; job < end; ++job) {
      std::int64_t ci = job % x.c();
      std::int64_t n = job / x.c();
      std::int64_t co = ci / (r * r);
      std::int64_t dy = (ci / r) % r;
      std::int64_t dx = ci % r;
      for (std::int64_t y = 0; y < x.h(); ++y) {
        const S* irow = x.row(n, ci, y);
        S* orow = out.row(n, co, y * r + dy);
        for (std::int64_t xx = 0; xx < x.w(); ++xx) orow[xx * r + dx] = irow[xx];
      }
    }
  });
  return out;
}

template <typename S>
TensorT<S> pad_replicate(const TensorT<S>& x, int pad) {
  DKN_CHECK(pad >= 0, ConfigError, "pad_replicate: negative padding ", pad);
  DKN_CHECK(x.h() >= 1 && x.w() >= 1, DimensionError, "pad_replicate: empty input ",
            x.shape_str());
  if (pad == 0) return x;
  TensorT<S> out(x.n(), x.c(), x.h() + 2 * pad, x.w() + 2 * pad);
  threading::parallel_for(x.n() * x.c(), [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t job = begin; job < end; ++job) {
      std::int64_t c = job % x.c();
      std::int64_t n = job / x.c();
      for (std::int64_t y = 0; y < out.h(); ++y) {
        std::int64_t sy = std::clamp<std::int64_t>(y - pad, 0, x.h() - 1);
        const S* irow = x.row(n, c, sy);
        S* orow = out.row(n, c, y);
        for (std::int64_t xx = 0; xx < out.w(); ++xx) {
          std::int64_t sx = std::clamp<std::int64_t>(xx - pad, 0, x.w() - 1);
          orow[xx] = irow[sx];
        }
      }
    }
  });
  return out;
}

template <typename S>
TensorT<S> crop(const TensorT<S>& x, std::int64_t top, std::int64_t left, std::int64_t h,
                std::int64_t w) {
  DKN_CHECK(top >= 0 && left >= 0 && h >= 1 && w >= 1 && top + h <= x.h() && left + w <= x.w(),
            DimensionError, "crop: region ", top, ",", left, " ", h, "x", w,
            " out of bounds for ", x.shape_str());
  TensorT<S> out(x.n(), x.c(), h, w);
  for (std::int64_t n = 0; n < x.n(); ++n) {
    for (std::int64_t c = 0; c < x.c(); ++c) {
      for (std::int64_t y = 0; y < h; ++y) {
        const S* irow = x.row(n, c, top + y) + left;
        S* orow = out.row(n, c, y);
        std::copy(irow, irow + w, orow);
      }
    }
  }
  return out;
}

template <typename S>
ValueT<S> conv2d(ValueT<S> input, ValueT<S> weight, ValueT<S> bias, int stride, int pad,
                 const char* name) {
  return conv2d_impl(input, weight, &bias, stride, pad, name);
}

template <typename S>
ValueT<S> conv2d(ValueT<S> input, ValueT<S> weight, int stride, int pad, const char* name) {
  return conv2d_impl(input, weight, static_cast<ValueT<S>*>(nullptr), stride, pad, name);
}

template <typename S>
ValueT<S> relu(ValueT<S> x) {
  GraphT<S>& g = *x.graph();
  const TensorT<S>& in = x.tensor();
  TensorT<S> out(in.n(), in.c(), in.h(), in.w());
  for (std::int64_t i = 0; i < in.size(); ++i) out[i] = in[i] > S(0) ? in[i] : S(0);
  NodeT<S>* in_node = x.node();
  return g.make(std::move(out), in_node->requires_grad, "relu",
                [in_node](GraphT<S>& graph, NodeT<S>& self) {
                  TensorT<S>& gin = graph.grad_of(in_node);
                  const TensorT<S>& v = in_node->value();
                  for (std::int64_t i = 0; i < v.size(); ++i) {
                    if (v[i] > S(0)) gin[i] += self.grad[i];
                  }
                });
}

template <typename S>
ValueT<S> sigmoid(ValueT<S> x) {
  GraphT<S>& g = *x.graph();
  const TensorT<S>& in = x.tensor();
  TensorT<S> out(in.n(), in.c(), in.h(), in.w());
  for (std::int64_t i = 0; i < in.size(); ++i) out[i] = S(1) / (S(1) + std::exp(-in[i]));
  NodeT<S>* in_node = x.node();
  return g.make(std::move(out), in_node->requires_grad, "sigmoid",
                [in_node](GraphT<S>& graph, NodeT<S>& self) {
                  TensorT<S>& gin = graph.grad_of(in_node);
                  const TensorT<S>& y = self.value();
                  for (std::int64_t i = 0; i < y.size(); ++i) {
                    gin[i] += self.grad[i] * y[i] * (S(1) - y[i]);
                  }
                });
}

template <typename S>
ValueT<S> batch_norm(ValueT<S> x, ValueT<S> scale, ValueT<S> shift, BatchNormStats<S>& stats,
                     bool training, S epsilon, S momentum, const char* name) {
  GraphT<S>& g = *x.graph();
  const TensorT<S>& in = x.tensor();
  std::int64_t C = in.c();
  DKN_CHECK(scale.tensor().size() == C && shift.tensor().size() == C, DimensionError, name,
            ": scale/shift of size ", scale.tensor().size(), "/", shift.tensor().size(),
            " for ", C, " channels");
  DKN_CHECK(in.h() * in.w() > 0, ConfigError, name, ": zero spatial extent in ", in.shape_str());
  DKN_CHECK(stats.mean.size() == C && stats.var.size() == C, DimensionError, name,
            ": running stats not initialized for ", C, " channels");

  std::int64_t m = in.n() * in.h() * in.w();
  TensorT<S> mean(1, C, 1, 1);
  TensorT<S> invstd(1, C, 1, 1);
  TensorT<S> out(in.n(), in.c(), in.h(), in.w());
  const TensorT<S>& sc = scale.tensor();
  const TensorT<S>& sh = shift.tensor();

  threading::parallel_for(C, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t c = begin; c < end; ++c) {
      S mu, var;
      if (training) {
        S s0 = S(0);
        for (std::int64_t n = 0; n < in.n(); ++n) {
          const S* p = in.plane(n, c);
          for (std::int64_t i = 0; i < in.h() * in.w(); ++i) s0 += p[i];
        }
        mu = s0 / S(m);
        S s1 = S(0);
        for (std::int64_t n = 0; n < in.n(); ++n) {
          const S* p = in.plane(n, c);
          for (std::int64_t i = 0; i < in.h() * in.w(); ++i) {
            S d = p[i] - mu;
            s1 += d * d;
          }
        }
        var = s1 / S(m);
      } else {
        mu = stats.mean[c];
        var = stats.var[c];
      }
      S is = S(1) / std::sqrt(var + epsilon);
      mean[c] = mu;
      invstd[c] = is;
      S a = sc[c] * is;
      S b = sh[c] - mu * a;
      for (std::int64_t n = 0; n < in.n(); ++n) {
        const S* p = in.plane(n, c);
        S* q = out.plane(n, c);
        for (std::int64_t i = 0; i < in.h() * in.w(); ++i) q[i] = p[i] * a + b;
      }
      if (training) {
        stats.mean[c] = (S(1) - momentum) * stats.mean[c] + momentum * mu;
        stats.var[c] = (S(1) - momentum) * stats.var[c] + momentum * var;
      }
    }
  });

  NodeT<S>* in_node = x.node();
  NodeT<S>* sc_node = scale.node();
  NodeT<S>* sh_node = shift.node();
  bool needs_grad =
      in_node->requires_grad || sc_node->requires_grad || sh_node->requires_grad;
  return g.make(
      std::move(out), needs_grad, name,
      [in_node, sc_node, sh_node, mean, invstd, training, m](GraphT<S>& graph, NodeT<S>& self) {
        const TensorT<S>& in = in_node->value();
        const TensorT<S>& sc = sc_node->value();
        std::int64_t C = in.c();
        std::int64_t hw = in.h() * in.w();
        TensorT<S>* gin = in_node->requires_grad ? &graph.grad_of(in_node) : nullptr;
        TensorT<S>* gsc = sc_node->requires_grad ? &graph.grad_of(sc_node) : nullptr;
        TensorT<S>* gsh = sh_node->requires_grad ? &graph.grad_of(sh_node) : nullptr;
        threading::parallel_for(C, [&](std::int64_t begin, std::int64_t end) {
          for (std::int64_t c = begin; c < end; ++c) {
            S mu = mean[c];
            S is = invstd[c];
            S sum_g = S(0);
            S sum_gx = S(0);  // sum of grad * xhat
            for (std::int64_t n = 0; n < in.n(); ++n) {
              const S* gp = self.grad.plane(n, c);
              const S* xp = in.plane(n, c);
              for (std::int64_t i = 0; i < hw; ++i) {
                sum_g += gp[i];
                sum_gx += gp[i] * (xp[i] - mu) * is;
              }
            }
            if (gsc != nullptr) (*gsc)[c] += sum_gx;
            if (gsh != nullptr) (*gsh)[c] += sum_g;
            if (gin != nullptr) {
              S a = sc[c] * is;
              if (training) {
                S k1 = sum_g / S(m);
                S k2 = sum_gx / S(m);
                for (std::int64_t n = 0; n < in.n(); ++n) {
                  const S* gp = self.grad.plane(n, c);
                  const S* xp = in.plane(n, c);
                  S* dst = gin->plane(n, c);
                  for (std::int64_t i = 0; i < hw; ++i) {
                    S xhat = (xp[i] - mu) * is;
                    dst[i] += a * (gp[i] - k1 - xhat * k2);
                  }
                }
              } else {
                for (std::int64_t n = 0; n < in.n(); ++n) {
                  const S* gp = self.grad.plane(n, c);
                  S* dst = gin->plane(n, c);
                  for (std::int64_t i = 0; i < hw; ++i) dst[i] += a * gp[i];
                }
              }
            }
          }
        });
      });
}

template <typename S>
ValueT<S> mul(ValueT<S> a, ValueT<S> b) {
  GraphT<S>& g = *a.graph();
  const TensorT<S>& av = a.tensor();
  const TensorT<S>& bv = b.tensor();
  DKN_CHECK(av.same_shape(bv), DimensionError, "mul: shape mismatch ", av.shape_str(), " vs ",
            bv.shape_str());
  TensorT<S> out(av.n(), av.c(), av.h(), av.w());
  for (std::int64_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  NodeT<S>* an = a.node();
  NodeT<S>* bn = b.node();
  return g.make(std::move(out), an->requires_grad || bn->requires_grad, "mul",
                [an, bn](GraphT<S>& graph, NodeT<S>& self) {
                  if (an->requires_grad) {
                    TensorT<S>& ga = graph.grad_of(an);
                    for (std::int64_t i = 0; i < ga.size(); ++i) {
                      ga[i] += self.grad[i] * bn->value()[i];
                    }
                  }
                  if (bn->requires_grad) {
                    TensorT<S>& gb = graph.grad_of(bn);
                    for (std::int64_t i = 0; i < gb.size(); ++i) {
                      gb[i] += self.grad[i] * an->value()[i];
                    }
                  }
                });
}

template <typename S>
ValueT<S> add(ValueT<S> a, ValueT<S> b) {
  GraphT<S>& g = *a.graph();
  const TensorT<S>& av = a.tensor();
  const TensorT<S>& bv = b.tensor();
  DKN_CHECK(av.same_shape(bv), DimensionError, "add: shape mismatch ", av.shape_str(), " vs ",
            bv.shape_str());
  TensorT<S> out(av.n(), av.c(), av.h(), av.w());
  for (std::int64_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  NodeT<S>* an = a.node();
  NodeT<S>* bn = b.node();
  return g.make(std::move(out), an->requires_grad || bn->requires_grad, "add",
                [an, bn](GraphT<S>& graph, NodeT<S>& self) {
                  for (NodeT<S>* n : {an, bn}) {
                    if (!n->requires_grad) continue;
                    TensorT<S>& gn = graph.grad_of(n);
                    for (std::int64_t i = 0; i < gn.size(); ++i) gn[i] += self.grad[i];
                  }
                });
}

template <typename S>
ValueT<S> sum(ValueT<S> x) {
  GraphT<S>& g = *x.graph();
  const TensorT<S>& in = x.tensor();
  S acc = S(0);
  for (std::int64_t i = 0; i < in.size(); ++i) acc += in[i];
  NodeT<S>* in_node = x.node();
  return g.make(TensorT<S>::scalar(acc), in_node->requires_grad, "sum",
                [in_node](GraphT<S>& graph, NodeT<S>& self) {
                  TensorT<S>& gin = graph.grad_of(in_node);
                  S go = self.grad[0];
                  for (std::int64_t i = 0; i < gin.size(); ++i) gin[i] += go;
                });
}

template <typename S>
ValueT<S> l1_loss(ValueT<S> pred, ValueT<S> gt) {
  GraphT<S>& g = *pred.graph();
  const TensorT<S>& pv = pred.tensor();
  const TensorT<S>& gv = gt.tensor();
  DKN_CHECK(pv.same_shape(gv), DimensionError, "l1_loss: shape mismatch ", pv.shape_str(),
            " vs ", gv.shape_str());
  S acc = S(0);
  for (std::int64_t i = 0; i < pv.size(); ++i) acc += std::abs(pv[i] - gv[i]);
  NodeT<S>* pn = pred.node();
  NodeT<S>* gn = gt.node();
  return g.make(TensorT<S>::scalar(acc), pn->requires_grad || gn->requires_grad, "l1_loss",
                [pn, gn](GraphT<S>& graph, NodeT<S>& self) {
                  S go = self.grad[0];
                  for (NodeT<S>* n : {pn, gn}) {
                    if (!n->requires_grad) continue;
                    S sgn = (n == pn) ? go : -go;
                    TensorT<S>& gd = graph.grad_of(n);
                    for (std::int64_t i = 0; i < gd.size(); ++i) {
                      S d = pn->value()[i] - gn->value()[i];
                      if (d > S(0)) gd[i] += sgn;
                      else if (d < S(0)) gd[i] -= sgn;
                    }
                  }
                });
}

template <typename S>
ValueT<S> subtract_channel_mean(ValueT<S> x) {
  GraphT<S>& g = *x.graph();
  const TensorT<S>& in = x.tensor();
  std::int64_t C = in.c();
  std::int64_t hw = in.h() * in.w();
  TensorT<S> out(in.n(), C, in.h(), in.w());
  for (std::int64_t n = 0; n < in.n(); ++n) {
    for (std::int64_t i = 0; i < hw; ++i) {
      S s = S(0);
      for (std::int64_t c = 0; c < C; ++c) s += in.plane(n, c)[i];
      S mean = s / S(C);
      for (std::int64_t c = 0; c < C; ++c) out.plane(n, c)[i] = in.plane(n, c)[i] - mean;
    }
  }
  NodeT<S>* in_node = x.node();
  return g.make(std::move(out), in_node->requires_grad, "subtract_channel_mean",
                [in_node, C, hw](GraphT<S>& graph, NodeT<S>& self) {
                  TensorT<S>& gin = graph.grad_of(in_node);
                  const TensorT<S>& go = self.grad;
                  for (std::int64_t n = 0; n < go.n(); ++n) {
                    for (std::int64_t i = 0; i < hw; ++i) {
                      S s = S(0);
                      for (std::int64_t c = 0; c < C; ++c) s += go.plane(n, c)[i];
                      S mean = s / S(C);
                      for (std::int64_t c = 0; c < C; ++c) {
                        gin.plane(n, c)[i] += go.plane(n, c)[i] - mean;
                      }
                    }
                  }
                });
}

template <typename S>
ValueT<S> l1_normalize_channels(ValueT<S> x) {
  constexpr S kDenomEps = S(1e-12);
  GraphT<S>& g = *x.graph();
  const TensorT<S>& in = x.tensor();
  std::int64_t C = in.c();
  std::int64_t hw = in.h() * in.w();
  TensorT<S> out(in.n(), C, in.h(), in.w());
  TensorT<S> denom(in.n(), 1, in.h(), in.w());
  for (std::int64_t n = 0; n < in.n(); ++n) {
    for (std::int64_t i = 0; i < hw; ++i) {
      S s = S(0);
      for (std::int64_t c = 0; c < C; ++c) s += std::abs(in.plane(n, c)[i]);
      S d = s + kDenomEps;
      denom.plane(n, 0)[i] = d;
      for (std::int64_t c = 0; c < C; ++c) out.plane(n, c)[i] = in.plane(n, c)[i] / d;
    }
  }
  NodeT<S>* in_node = x.node();
  return g.make(std::move(out), in_node->requires_grad, "l1_normalize_channels",
                [in_node, denom, C, hw](GraphT<S>& graph, NodeT<S>& self) {
                  TensorT<S>& gin = graph.grad_of(in_node);
                  const TensorT<S>& go = self.grad;
                  const TensorT<S>& y = self.value();
                  const TensorT<S>& v = in_node->value();
                  for (std::int64_t n = 0; n < go.n(); ++n) {
                    for (std::int64_t i = 0; i < hw; ++i) {
                      S t = S(0);
                      for (std::int64_t c = 0; c < C; ++c) {
                        t += go.plane(n, c)[i] * y.plane(n, c)[i];
                      }
                      S d = denom.plane(n, 0)[i];
                      for (std::int64_t c = 0; c < C; ++c) {
                        S xv = v.plane(n, c)[i];
                        S sgn = xv > S(0) ? S(1) : (xv < S(0) ? S(-1) : S(0));
                        gin.plane(n, c)[i] += (go.plane(n, c)[i] - t * sgn) / d;
                      }
                    }
                  }
                });
}

template <typename S>
ValueT<S> pixel_unshuffle(ValueT<S> x, int r) {
  GraphT<S>& g = *x.graph();
  TensorT<S> out = pixel_unshuffle(x.tensor(), r);
  NodeT<S>* in_node = x.node();
  return g.make(std::move(out), in_node->requires_grad, "pixel_unshuffle",
                [in_node, r](GraphT<S>& graph, NodeT<S>& self) {
                  TensorT<S> scattered = pixel_shuffle(self.grad, r);
                  TensorT<S>& gin = graph.grad_of(in_node);
                  for (std::int64_t i = 0; i < gin.size(); ++i) gin[i] += scattered[i];
                });
}

template <typename S>
ValueT<S> pixel_shuffle(ValueT<S> x, int r) {
  GraphT<S>& g = *x.graph();
  TensorT<S> out = pixel_shuffle(x.tensor(), r);
  NodeT<S>* in_node = x.node();
  return g.make(std::move(out), in_node->requires_grad, "pixel_shuffle",
                [in_node, r](GraphT<S>& graph, NodeT<S>& self) {
                  TensorT<S> gathered = pixel_unshuffle(self.grad, r);
                  TensorT<S>& gin = graph.grad_of(in_node);
                  for (std::int64_t i = 0; i < gin.size(); ++i) gin[i] += gathered[i];
                });
}

template <typename S>
ValueT<S> crop(ValueT<S> x, std::int64_t top, std::int64_t left, std::int64_t h, std::int64_t w) {
  GraphT<S>& g = *x.graph();
  TensorT<S> out = crop(x.tensor(), top, left, h, w);
  NodeT<S>* in_node = x.node();
  return g.make(std::move(out), in_node->requires_grad, "crop",
                [in_node, top, left, h, w](GraphT<S>& graph, NodeT<S>& self) {
                  TensorT<S>& gin = graph.grad_of(in_node);
                  for (std::int64_t n = 0; n < self.grad.n(); ++n) {
                    for (std::int64_t c = 0; c < self.grad.c(); ++c) {
                      for (std::int64_t y = 0; y < h; ++y) {
                        const S* grow = self.grad.row(n, c, y);
                        S* dst = gin.row(n, c, top + y) + left;
                        for (std::int64_t xx = 0; xx < w; ++xx) dst[xx] += grow[xx];
                      }
                    }
                  }
                });
}

#define DKN_INSTANTIATE_OPS(S)                                                                  \
  template TensorT<S> pixel_unshuffle<S>(const TensorT<S>&, int);                               \
  template TensorT<S> pixel_shuffle<S>(const TensorT<S>&, int);                                 \
  template TensorT<S> pad_replicate<S>(const TensorT<S>&, int);                                 \
  template TensorT<S> crop<S>(const TensorT<S>&, std::int64_t, std::int64_t, std::int64_t,     \
                              std::int64_t);                                                    \
  template ValueT<S> conv2d<S>(ValueT<S>, ValueT<S>, ValueT<S>, int, int, const char*);        \
  template ValueT<S> conv2d<S>(ValueT<S>, ValueT<S>, int, int, const char*);                   \
  template ValueT<S> relu<S>(ValueT<S>);                                                       \
  template ValueT<S> sigmoid<S>(ValueT<S>);                                                    \
  template ValueT<S> batch_norm<S>(ValueT<S>, ValueT<S>, ValueT<S>, BatchNormStats<S>&, bool,  \
                                   S, S, const char*);                                         \
  template ValueT<S> mul<S>(ValueT<S>, ValueT<S>);                                             \
  template ValueT<S> add<S>(ValueT<S>, ValueT<S>);                                             \
  template ValueT<S> sum<S>(ValueT<S>);                                                        \
  template ValueT<S> l1_loss<S>(ValueT<S>, ValueT<S>);                                         \
  template ValueT<S> subtract_channel_mean<S>(ValueT<S>);                                      \
  template ValueT<S> l1_normalize_channels<S>(ValueT<S>);                                      \
  template ValueT<S> pixel_unshuffle<S>(ValueT<S>, int);                                       \
  template ValueT<S> pixel_shuffle<S>(ValueT<S>, int);                                         \
  template ValueT<S> crop<S>(ValueT<S>, std::int64_t, std::int64_t, std::int64_t, std::int64_t);

DKN_INSTANTIATE_OPS(float)
DKN_INSTANTIATE_OPS(double)

#undef DKN_INSTANTIATE_OPS

}  // namespace dkn::ops
