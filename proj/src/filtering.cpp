#include "dkn/filtering.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "dkn/threading.hpp"

namespace dkn::filtering {

namespace {

std::atomic<bool> g_contract_checks{
#ifdef NDEBUG
    false
#else
    true
#endif
};

// One-dimensional bilinear footprint at coordinate s in [0, limit-1].
// x0 = ceil(s) - 1 puts exact integers in the left cell, so the kink at
// integer coordinates takes the left-continuous subgradient.
template <typename S>
struct Axis {
  std::int64_t i0, i1;  // gather indices, clamped to the image
  S w0, w1;             // weights (w0 + w1 = 1)
  S dgate;              // 0 when the position clamp is active
};

template <typename S>
Axis<S> axis_taps(S s, std::int64_t limit) {
  Axis<S> a;
  a.dgate = (s >= S(0) && s <= S(limit - 1)) ? S(1) : S(0);
  s = std::clamp(s, S(0), S(limit - 1));
  std::int64_t lo = static_cast<std::int64_t>(std::ceil(s)) - 1;
  a.w1 = s - S(lo);
  a.w0 = S(1) - a.w1;
  a.i0 = std::max<std::int64_t>(lo, 0);
  a.i1 = std::min<std::int64_t>(lo + 1, limit - 1);
  return a;
}

template <typename S>
S sample_plane(const S* plane, std::int64_t w, const Axis<S>& ax, const Axis<S>& ay) {
  const S* r0 = plane + ay.i0 * w;
  const S* r1 = plane + ay.i1 * w;
  return ay.w0 * (ax.w0 * r0[ax.i0] + ax.w1 * r0[ax.i1]) +
         ay.w1 * (ax.w0 * r1[ax.i0] + ax.w1 * r1[ax.i1]);
}

template <typename S>
S sample_ddx(const S* plane, std::int64_t w, const Axis<S>& ax, const Axis<S>& ay) {
  const S* r0 = plane + ay.i0 * w;
  const S* r1 = plane + ay.i1 * w;
  return (ay.w0 * (r0[ax.i1] - r0[ax.i0]) + ay.w1 * (r1[ax.i1] - r1[ax.i0])) * ax.dgate;
}

template <typename S>
S sample_ddy(const S* plane, std::int64_t w, const Axis<S>& ax, const Axis<S>& ay) {
  const S* r0 = plane + ay.i0 * w;
  const S* r1 = plane + ay.i1 * w;
  return (ax.w0 * (r1[ax.i0] - r0[ax.i0]) + ax.w1 * (r1[ax.i1] - r0[ax.i1])) * ay.dgate;
}

template <typename S>
void scatter_plane(S* plane, std::int64_t w, const Axis<S>& ax, const Axis<S>& ay, S g) {
  S* r0 = plane + ay.i0 * w;
  S* r1 = plane + ay.i1 * w;
  r0[ax.i0] += g * ay.w0 * ax.w0;
  r0[ax.i1] += g * ay.w0 * ax.w1;
  r1[ax.i0] += g * ay.w1 * ax.w0;
  r1[ax.i1] += g * ay.w1 * ax.w1;
}

template <typename S>
void validate_kernel_field(const TensorT<S>& kernels, bool residual) {
  const S tol = S(1e-5) * S(kernels.c());
  std::int64_t hw = kernels.h() * kernels.w();
  for (std::int64_t n = 0; n < kernels.n(); ++n) {
    for (std::int64_t i = 0; i < hw; ++i) {
      S s = S(0);
      bool nonneg = true;
      bool in_unit = true;
      for (std::int64_t c = 0; c < kernels.c(); ++c) {
        S v = kernels.plane(n, c)[i];
        s += v;
        if (v < -tol) nonneg = false;
        if (v <= S(-1) || v >= S(1)) in_unit = false;
      }
      if (residual) {
        DKN_CHECK(std::abs(s) < S(1e-4) && in_unit, ContractError,
                  "deformable_weighted_average: residual kernel field violates sum-to-0 "
                  "constraint at pixel ",
                  i, " (sum=", s, ")");
      } else {
        DKN_CHECK(std::abs(s - S(1)) < S(1e-4) && nonneg, ContractError,
                  "deformable_weighted_average: kernel field violates sum-to-1 constraint "
                  "at pixel ",
                  i, " (sum=", s, ")");
      }
    }
  }
}

}  // namespace

GridSpec::GridSpec(int k, int radius) : kernel_size(k), window_radius(radius) {
  DKN_CHECK(k == 3 || k == 5 || k == 7, ConfigError, "GridSpec: kernel size must be 3, 5 or 7, got ",
            k);
  DKN_CHECK(radius >= k / 2, ConfigError, "GridSpec: window radius ", radius,
            " cannot hold a ", k, "x", k, " lattice");
}

void set_contract_checks(bool enabled) { g_contract_checks.store(enabled); }
bool contract_checks_enabled() { return g_contract_checks.load(); }

template <typename S>
ValueT<S> bilinear_sample(ValueT<S> image, ValueT<S> positions) {
  GraphT<S>& g = *image.graph();
  const TensorT<S>& img = image.tensor();
  const TensorT<S>& pos = positions.tensor();
  DKN_CHECK(pos.c() == 2, DimensionError, "bilinear_sample: positions must have 2 channels, got ",
            pos.shape_str());
  DKN_CHECK(pos.n() == img.n(), DimensionError, "bilinear_sample: batch mismatch ",
            img.shape_str(), " vs ", pos.shape_str());
  DKN_CHECK(pos.all_finite(), ContractError, "bilinear_sample: non-finite position");

  std::int64_t ho = pos.h(), wo = pos.w();
  TensorT<S> out(img.n(), img.c(), ho, wo);
  threading::parallel_for(img.n() * img.c() * ho, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t job = begin; job < end; ++job) {
      std::int64_t y = job % ho;
      std::int64_t c = (job / ho) % img.c();
      std::int64_t n = job / (ho * img.c());
      const S* px = pos.row(n, 0, y);
      const S* py = pos.row(n, 1, y);
      const S* plane = img.plane(n, c);
      S* orow = out.row(n, c, y);
      for (std::int64_t x = 0; x < wo; ++x) {
        Axis<S> ax = axis_taps(px[x], img.w());
        Axis<S> ay = axis_taps(py[x], img.h());
        orow[x] = sample_plane(plane, img.w(), ax, ay);
      }
    }
  });

  NodeT<S>* img_node = image.node();
  NodeT<S>* pos_node = positions.node();
  bool needs_grad = img_node->requires_grad || pos_node->requires_grad;
  return g.make(std::move(out), needs_grad, "bilinear_sample",
                [img_node, pos_node, ho, wo](GraphT<S>& graph, NodeT<S>& self) {
                  const TensorT<S>& img = img_node->value();
                  const TensorT<S>& pos = pos_node->value();
                  if (pos_node->requires_grad) {
                    TensorT<S>& gpos = graph.grad_of(pos_node);
                    threading::parallel_for(pos.n() * ho, [&](std::int64_t b, std::int64_t e) {
                      for (std::int64_t job = b; job < e; ++job) {
                        std::int64_t y = job % ho;
                        std::int64_t n = job / ho;
                        const S* px = pos.row(n, 0, y);
                        const S* py = pos.row(n, 1, y);
                        S* gx = gpos.row(n, 0, y);
                        S* gy = gpos.row(n, 1, y);
                        for (std::int64_t x = 0; x < wo; ++x) {
                          Axis<S> ax = axis_taps(px[x], img.w());
                          Axis<S> ay = axis_taps(py[x], img.h());
                          S ax_acc = S(0), ay_acc = S(0);
                          for (std::int64_t c = 0; c < img.c(); ++c) {
                            S go = self.grad.at(n, c, y, x);
                            const S* plane = img.plane(n, c);
                            ax_acc += go * sample_ddx(plane, img.w(), ax, ay);
                            ay_acc += go * sample_ddy(plane, img.w(), ax, ay);
                          }
                          gx[x] += ax_acc;
                          gy[x] += ay_acc;
                        }
                      }
                    });
                  }
                  if (img_node->requires_grad) {
                    TensorT<S>& gimg = graph.grad_of(img_node);
                    threading::parallel_for(img.n() * img.c(), [&](std::int64_t b, std::int64_t e) {
                      for (std::int64_t job = b; job < e; ++job) {
                        std::int64_t c = job % img.c();
                        std::int64_t n = job / img.c();
                        S* plane = gimg.plane(n, c);
                        for (std::int64_t y = 0; y < ho; ++y) {
                          const S* px = pos.row(n, 0, y);
                          const S* py = pos.row(n, 1, y);
                          for (std::int64_t x = 0; x < wo; ++x) {
                            Axis<S> ax = axis_taps(px[x], img.w());
                            Axis<S> ay = axis_taps(py[x], img.h());
                            scatter_plane(plane, img.w(), ax, ay, self.grad.at(n, c, y, x));
                          }
                        }
                      }
                    });
                  }
                });
}

template <typename S>
ValueT<S> restrict_offsets(ValueT<S> raw, const GridSpec& grid) {
  GraphT<S>& g = *raw.graph();
  const TensorT<S>& in = raw.tensor();
  int taps = grid.taps();
  DKN_CHECK(in.c() == 2 * taps, DimensionError, "restrict_offsets: expected ", 2 * taps,
            " channels for k=", grid.kernel_size, ", got ", in.shape_str());
  S radius = S(grid.window_radius);
  TensorT<S> out(in.n(), in.c(), in.h(), in.w());
  std::int64_t hw = in.h() * in.w();
  for (std::int64_t n = 0; n < in.n(); ++n) {
    for (int t = 0; t < taps; ++t) {
      S bx = S(grid.base_dx(t));
      S by = S(grid.base_dy(t));
      const S* ix = in.plane(n, 2 * t);
      const S* iy = in.plane(n, 2 * t + 1);
      S* ox = out.plane(n, 2 * t);
      S* oy = out.plane(n, 2 * t + 1);
      for (std::int64_t i = 0; i < hw; ++i) {
        // In-window offsets pass through verbatim.
        S dx = bx + ix[i];
        ox[i] = (dx >= -radius && dx <= radius) ? ix[i] : std::clamp(dx, -radius, radius) - bx;
        S dy = by + iy[i];
        oy[i] = (dy >= -radius && dy <= radius) ? iy[i] : std::clamp(dy, -radius, radius) - by;
      }
    }
  }
  NodeT<S>* in_node = raw.node();
  return g.make(std::move(out), in_node->requires_grad, "restrict_offsets",
                [in_node, grid, radius, taps, hw](GraphT<S>& graph, NodeT<S>& self) {
                  TensorT<S>& gin = graph.grad_of(in_node);
                  const TensorT<S>& v = in_node->value();
                  for (std::int64_t n = 0; n < v.n(); ++n) {
                    for (int t = 0; t < taps; ++t) {
                      S bx = S(grid.base_dx(t));
                      S by = S(grid.base_dy(t));
                      for (int axis = 0; axis < 2; ++axis) {
                        S base = axis == 0 ? bx : by;
                        const S* src = v.plane(n, 2 * t + axis);
                        const S* gsrc = self.grad.plane(n, 2 * t + axis);
                        S* dst = gin.plane(n, 2 * t + axis);
                        for (std::int64_t i = 0; i < hw; ++i) {
                          S d = base + src[i];
                          if (d >= -radius && d <= radius) dst[i] += gsrc[i];
                        }
                      }
                    }
                  }
                });
}

template <typename S>
ValueT<S> deformable_weighted_average(ValueT<S> target, ValueT<S> kernels, ValueT<S> offsets,
                                      const GridSpec& grid, bool residual, std::int64_t origin_y,
                                      std::int64_t origin_x) {
  GraphT<S>& g = *target.graph();
  const TensorT<S>& f = target.tensor();
  const TensorT<S>& ker = kernels.tensor();
  const TensorT<S>& off = offsets.tensor();
  int taps = grid.taps();
  DKN_CHECK(ker.c() == taps, DimensionError, "deformable_weighted_average: kernel field has ",
            ker.c(), " channels, expected ", taps);
  DKN_CHECK(off.c() == 2 * taps, DimensionError, "deformable_weighted_average: offset field has ",
            off.c(), " channels, expected ", 2 * taps);
  DKN_CHECK(ker.n() == f.n() && off.n() == f.n(), DimensionError,
            "deformable_weighted_average: batch mismatch");
  DKN_CHECK(ker.h() == off.h() && ker.w() == off.w(), DimensionError,
            "deformable_weighted_average: kernel field ", ker.shape_str(),
            " vs offset field ", off.shape_str());
  DKN_CHECK(origin_y >= 0 && origin_x >= 0 && origin_y + ker.h() <= f.h() &&
                origin_x + ker.w() <= f.w(),
            DimensionError, "deformable_weighted_average: field ", ker.h(), "x", ker.w(),
            " at origin (", origin_y, ",", origin_x, ") exceeds target ", f.shape_str());
  if (contract_checks_enabled()) validate_kernel_field(ker, residual);

  std::int64_t hf = ker.h(), wf = ker.w();
  TensorT<S> out(f.n(), f.c(), hf, wf);
  threading::parallel_for(f.n() * f.c() * hf, [&](std::int64_t begin, std::int64_t end) {
    for (std::int64_t job = begin; job < end; ++job) {
      std::int64_t y = job % hf;
      std::int64_t c = (job / hf) % f.c();
      std::int64_t n = job / (hf * f.c());
      const S* plane = f.plane(n, c);
      S* orow = out.row(n, c, y);
      std::int64_t py = origin_y + y;
      for (std::int64_t x = 0; x < wf; ++x) {
        std::int64_t px = origin_x + x;
        S acc = residual ? plane[py * f.w() + px] : S(0);
        for (int t = 0; t < taps; ++t) {
          S kv = ker.at(n, t, y, x);
          S sx = S(px + grid.base_dx(t)) + off.at(n, 2 * t, y, x);
          S sy = S(py + grid.base_dy(t)) + off.at(n, 2 * t + 1, y, x);
          Axis<S> ax = axis_taps(sx, f.w());
          Axis<S> ay = axis_taps(sy, f.h());
          acc += kv * sample_plane(plane, f.w(), ax, ay);
        }
        orow[x] = acc;
      }
    }
  });

  NodeT<S>* f_node = target.node();
  NodeT<S>* k_node = kernels.node();
  NodeT<S>* o_node = offsets.node();
  bool needs_grad = f_node->requires_grad || k_node->requires_grad || o_node->requires_grad;
  GridSpec gr = grid;
  return g.make(
      std::move(out), needs_grad, "deformable_weighted_average",
      [f_node, k_node, o_node, gr, residual, origin_y, origin_x, taps, hf,
       wf](GraphT<S>& graph, NodeT<S>& self) {
        const TensorT<S>& f = f_node->value();
        const TensorT<S>& ker = k_node->value();
        const TensorT<S>& off = o_node->value();
        // Kernel/offset gradients: rows of the field are disjoint jobs.
        if (k_node->requires_grad || o_node->requires_grad) {
          TensorT<S>* gk = k_node->requires_grad ? &graph.grad_of(k_node) : nullptr;
          TensorT<S>* go = o_node->requires_grad ? &graph.grad_of(o_node) : nullptr;
          threading::parallel_for(f.n() * hf, [&](std::int64_t begin, std::int64_t end) {
            for (std::int64_t job = begin; job < end; ++job) {
              std::int64_t y = job % hf;
              std::int64_t n = job / hf;
              std::int64_t py = origin_y + y;
              for (std::int64_t x = 0; x < wf; ++x) {
                std::int64_t px = origin_x + x;
                for (int t = 0; t < taps; ++t) {
                  S sx = S(px + gr.base_dx(t)) + off.at(n, 2 * t, y, x);
                  S sy = S(py + gr.base_dy(t)) + off.at(n, 2 * t + 1, y, x);
                  Axis<S> ax = axis_taps(sx, f.w());
                  Axis<S> ay = axis_taps(sy, f.h());
                  S val_acc = S(0), dx_acc = S(0), dy_acc = S(0);
                  for (std::int64_t c = 0; c < f.c(); ++c) {
                    S gout = self.grad.at(n, c, y, x);
                    const S* plane = f.plane(n, c);
                    val_acc += gout * sample_plane(plane, f.w(), ax, ay);
                    if (go != nullptr) {
                      dx_acc += gout * sample_ddx(plane, f.w(), ax, ay);
                      dy_acc += gout * sample_ddy(plane, f.w(), ax, ay);
                    }
                  }
                  if (gk != nullptr) gk->at(n, t, y, x) += val_acc;
                  if (go != nullptr) {
                    S kv = ker.at(n, t, y, x);
                    go->at(n, 2 * t, y, x) += kv * dx_acc;
                    go->at(n, 2 * t + 1, y, x) += kv * dy_acc;
                  }
                }
              }
            }
          });
        }
        // Target gradient: bilinear footprints of neighboring output pixels
        // overlap, so each (n, c) plane is scattered by a single job.
        if (f_node->requires_grad) {
          TensorT<S>& gf = graph.grad_of(f_node);
          threading::parallel_for(f.n() * f.c(), [&](std::int64_t begin, std::int64_t end) {
            for (std::int64_t job = begin; job < end; ++job) {
              std::int64_t c = job % f.c();
              std::int64_t n = job / f.c();
              S* plane = gf.plane(n, c);
              for (std::int64_t y = 0; y < hf; ++y) {
                std::int64_t py = origin_y + y;
                for (std::int64_t x = 0; x < wf; ++x) {
                  std::int64_t px = origin_x + x;
                  S gout = self.grad.at(n, c, y, x);
                  if (residual) plane[py * f.w() + px] += gout;
                  for (int t = 0; t < taps; ++t) {
                    S sx = S(px + gr.base_dx(t)) + off.at(n, 2 * t, y, x);
                    S sy = S(py + gr.base_dy(t)) + off.at(n, 2 * t + 1, y, x);
                    Axis<S> ax = axis_taps(sx, f.w());
                    Axis<S> ay = axis_taps(sy, f.h());
                    scatter_plane(plane, f.w(), ax, ay, gout * ker.at(n, t, y, x));
                  }
                }
              }
            }
          });
        }
      });
}

namespace {

template <typename S>
S cubic_weight(S t) {
  t = std::abs(t);
  if (t <= S(1)) return (S(1.5) * t - S(2.5)) * t * t + S(1);
  if (t < S(2)) return ((S(-0.5) * t + S(2.5)) * t - S(4)) * t + S(2);
  return S(0);
}

struct ResampleTap {
  std::int64_t idx[4];
  double w[4];
};

std::vector<ResampleTap> make_taps(std::int64_t in_size, std::int64_t out_size) {
  std::vector<ResampleTap> taps(static_cast<std::size_t>(out_size));
  double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
  for (std::int64_t o = 0; o < out_size; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    std::int64_t base = static_cast<std::int64_t>(std::floor(src));
    double frac = src - static_cast<double>(base);
    ResampleTap& tap = taps[static_cast<std::size_t>(o)];
    double wsum = 0.0;
    for (int j = 0; j < 4; ++j) {
      std::int64_t i = base - 1 + j;
      tap.idx[j] = std::clamp<std::int64_t>(i, 0, in_size - 1);
      tap.w[j] = cubic_weight(frac + 1.0 - static_cast<double>(j));
      wsum += tap.w[j];
    }
    for (int j = 0; j < 4; ++j) tap.w[j] /= wsum;
  }
  return taps;
}

}  // namespace

template <typename S>
TensorT<S> bicubic_resize(const TensorT<S>& image, std::int64_t out_h, std::int64_t out_w) {
  DKN_CHECK(out_h >= 1 && out_w >= 1, ConfigError, "bicubic_resize: output dims must be positive, got ",
            out_h, "x", out_w);
  DKN_CHECK(image.h() >= 1 && image.w() >= 1, DimensionError, "bicubic_resize: empty input ",
            image.shape_str());
  std::vector<ResampleTap> tx = make_taps(image.w(), out_w);
  std::vector<ResampleTap> ty = make_taps(image.h(), out_h);

  // Horizontal pass, then vertical.
  TensorT<S> mid(image.n(), image.c(), image.h(), out_w);
  threading::parallel_for(image.n() * image.c() * image.h(),
                          [&](std::int64_t begin, std::int64_t end) {
                            for (std::int64_t job = begin; job < end; ++job) {
                              std::int64_t y = job % image.h();
                              std::int64_t c = (job / image.h()) % image.c();
                              std::int64_t n = job / (image.h() * image.c());
                              const S* irow = image.row(n, c, y);
                              S* orow = mid.row(n, c, y);
                              for (std::int64_t x = 0; x < out_w; ++x) {
                                const ResampleTap& t = tx[static_cast<std::size_t>(x)];
                                double acc = 0.0;
                                for (int j = 0; j < 4; ++j) {
                                  acc += t.w[j] * static_cast<double>(irow[t.idx[j]]);
                                }
                                orow[x] = static_cast<S>(acc);
                              }
                            }
                          });

  TensorT<S> out(image.n(), image.c(), out_h, out_w);
  threading::parallel_for(image.n() * image.c() * out_h,
                          [&](std::int64_t begin, std::int64_t end) {
                            for (std::int64_t job = begin; job < end; ++job) {
                              std::int64_t y = job % out_h;
                              std::int64_t c = (job / out_h) % image.c();
                              std::int64_t n = job / (out_h * image.c());
                              const ResampleTap& t = ty[static_cast<std::size_t>(y)];
                              const S* rows[4];
                              for (int j = 0; j < 4; ++j) rows[j] = mid.row(n, c, t.idx[j]);
                              S* orow = out.row(n, c, y);
                              for (std::int64_t x = 0; x < out_w; ++x) {
                                double acc = 0.0;
                                for (int j = 0; j < 4; ++j) {
                                  acc += t.w[j] * static_cast<double>(rows[j][x]);
                                }
                                orow[x] = static_cast<S>(acc);
                              }
                            }
                          });
  return out;
}

#define DKN_INSTANTIATE_FILTERING(S)                                                       \
  template ValueT<S> bilinear_sample<S>(ValueT<S>, ValueT<S>);                             \
  template ValueT<S> restrict_offsets<S>(ValueT<S>, const GridSpec&);                      \
  template ValueT<S> deformable_weighted_average<S>(ValueT<S>, ValueT<S>, ValueT<S>,       \
                                                    const GridSpec&, bool, std::int64_t,   \
                                                    std::int64_t);                         \
  template TensorT<S> bicubic_resize<S>(const TensorT<S>&, std::int64_t, std::int64_t);

DKN_INSTANTIATE_FILTERING(float)
DKN_INSTANTIATE_FILTERING(double)

#undef DKN_INSTANTIATE_FILTERING

}  // namespace dkn::filtering
