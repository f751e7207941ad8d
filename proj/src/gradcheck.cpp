#include "dkn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dkn/filtering.hpp"
#include "dkn/model.hpp"
#include "dkn/ops.hpp"

namespace dkn::gradcheck {

namespace {

struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  double uniform() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double uniform_signed(double bound) { return (2.0 * uniform() - 1.0) * bound; }
  std::int64_t index(std::int64_t n) { return static_cast<std::int64_t>(gen() % static_cast<std::uint64_t>(n)); }
};

Tensor64 random_tensor(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w, Rng& rng,
                       double lo = -1.0, double hi = 1.0) {
  Tensor64 t(n, c, h, w);
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

std::vector<std::int64_t> sample_coords(std::int64_t size, int count, Rng& rng) {
  if (count <= 0 || count >= size) return {};
  std::vector<std::int64_t> coords(static_cast<std::size_t>(count));
  for (auto& c : coords) c = rng.index(size);
  return coords;
}

// Builds a scalar loss from a single differentiable input, computes the
// analytic gradient through the tape and verifies it by central differences.
template <typename MakeLoss>
FdReport check_input(const std::string& name, const Tensor64& x0, double step, double tol,
                     MakeLoss&& make_loss) {
  auto fn = [&](const Tensor64& x) {
    GraphT<double> g;
    return make_loss(g, g.leaf(x, false)).tensor()[0];
  };
  GraphT<double> g;
  ValueT<double> xv = g.leaf(x0, true);
  g.backward(make_loss(g, xv));
  Tensor64 analytic = xv.node()->has_grad()
                          ? xv.node()->grad
                          : Tensor64(x0.n(), x0.c(), x0.h(), x0.w());
  return finite_difference_check(name, fn, x0, analytic, step, tol);
}

// Fixed random projection so the loss weights every output element
// differently; a plain sum would hide transposition mistakes.
ValueT<double> project(GraphT<double>& g, ValueT<double> v, Rng& rng) {
  const TensorT<double>& t = v.tensor();
  Tensor64 proj = random_tensor(t.n(), t.c(), t.h(), t.w(), rng, 0.1, 1.0);
  return ops::sum(ops::mul(v, g.leaf(proj)));
}

// ---------------------------------------------------------------------------
// Central differences are only meaningful away from the activation kinks:
// a probe of step h shifts every downstream pre-relu value, and any value
// within reach of 0 turns the loss non-smooth inside the probe interval.
// For the end-to-end check we therefore nudge the per-channel shift/bias
// preceding each relu so no pre-activation lies within `margin` of zero for
// the fixed check inputs. Adding d to a batch-norm shift or conv bias adds
// exactly d to that layer's outputs, so the forward pass is patched in
// place, layer by layer.
// ---------------------------------------------------------------------------

double clearing_offset(const std::vector<double>& values, double margin) {
  for (int step = 0; step <= 200; ++step) {
    for (double sign : {1.0, -1.0}) {
      double delta = sign * margin * 2.0 * static_cast<double>(step);
      bool clear = true;
      for (double v : values) {
        if (std::abs(v + delta) < margin) {
          clear = false;
          break;
        }
      }
      if (clear) return delta;
      if (step == 0) break;  // delta 0 has one sign
    }
  }
  return 0.0;  // no clear offset found; leave the parameter alone
}

// Shifts `owner` (a per-channel 1xCx1x1 parameter) so that `pre` has no
// value within margin of 0, and applies the same shift to `pre`.
void clear_band(Tensor64& owner, Tensor64& pre, double margin) {
  std::int64_t hw = pre.h() * pre.w();
  for (std::int64_t c = 0; c < pre.c(); ++c) {
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(pre.n() * hw));
    for (std::int64_t n = 0; n < pre.n(); ++n) {
      const double* p = pre.plane(n, c);
      for (std::int64_t i = 0; i < hw; ++i) values.push_back(p[i]);
    }
    double delta = clearing_offset(values, margin);
    if (delta == 0.0) continue;
    owner[c] += delta;
    for (std::int64_t n = 0; n < pre.n(); ++n) {
      double* p = pre.plane(n, c);
      for (std::int64_t i = 0; i < hw; ++i) p[i] += delta;
    }
  }
}

Tensor64 relu_tensor(const Tensor64& x) {
  Tensor64 out(x.n(), x.c(), x.h(), x.w());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor64 crop_even(const Tensor64& x) {
  std::int64_t h2 = 2 + (x.h() - 2) / 2 * 2;
  std::int64_t w2 = 2 + (x.w() - 2) / 2 * 2;
  if (h2 == x.h() && w2 == x.w()) return x;
  return ops::crop(x, 0, 0, h2, w2);
}

void clear_stream_kinks(model::DknStreamT<double>& st, const Tensor64& input, double margin) {
  auto conv = [&](model::Conv2dLayerT<double>& layer, const Tensor64& x) {
    GraphT<double> g;
    return layer.forward(g, g.leaf(x)).tensor();
  };
  auto bn = [&](model::BatchNormLayerT<double>& layer, const Tensor64& x) {
    GraphT<double> g;
    return layer.forward(g, g.leaf(x), true).tensor();
  };
  Tensor64 pre = bn(st.bn1, conv(st.conv1, input));
  clear_band(st.bn1.shift.value, pre, margin);
  pre = conv(st.down1, crop_even(relu_tensor(pre)));
  clear_band(st.down1.bias.value, pre, margin);
  pre = bn(st.bn2, conv(st.conv2, relu_tensor(pre)));
  clear_band(st.bn2.shift.value, pre, margin);
  pre = conv(st.down2, crop_even(relu_tensor(pre)));
  clear_band(st.down2.bias.value, pre, margin);
  pre = bn(st.bn3, conv(st.conv3, relu_tensor(pre)));
  clear_band(st.bn3.shift.value, pre, margin);
  pre = conv(st.conv4, relu_tensor(pre));
  clear_band(st.conv4.bias.value, pre, margin);
  pre = conv(st.conv5, relu_tensor(pre));
  clear_band(st.conv5.bias.value, pre, margin);
}

}  // namespace

FdReport finite_difference_check(const std::string& name,
                                 const std::function<double(const Tensor64&)>& fn,
                                 const Tensor64& x, const Tensor64& analytic, double step,
                                 double tolerance, std::vector<std::int64_t> coords,
                                 double floor) {
  DKN_CHECK(analytic.same_shape(x), DimensionError,
            "finite_difference_check: analytic gradient shape ", analytic.shape_str(),
            " does not match input ", x.shape_str());
  FdReport report;
  report.name = name;
  report.tolerance = tolerance;
  if (coords.empty()) {
    coords.resize(static_cast<std::size_t>(x.size()));
    for (std::int64_t i = 0; i < x.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
  }
  Tensor64 probe = x;
  for (std::int64_t i : coords) {
    double saved = probe[i];
    probe[i] = saved + step;
    double hi = fn(probe);
    probe[i] = saved - step;
    double lo = fn(probe);
    probe[i] = saved;
    double fd = (hi - lo) / (2.0 * step);
    double a = analytic[i];
    double abs_err = std::abs(a - fd);
    double rel = abs_err / std::max(std::max(std::abs(a), std::abs(fd)), floor);
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    report.max_rel_error = std::max(report.max_rel_error, rel);
    report.checked++;
  }
  report.pass = report.max_rel_error <= tolerance;
  return report;
}

bool all_passed(const std::vector<FdReport>& reports) {
  for (const auto& r : reports) {
    if (!r.pass) return false;
  }
  return true;
}

std::vector<FdReport> run_gradient_check_suite(std::uint64_t seed, int coords_per_param) {
  std::vector<FdReport> reports;
  const double step = 1e-5;
  const double op_tol = 1e-4;
  Rng rng(seed);

  // conv2d: input, weight and bias gradients, plus a strided case.
  {
    Tensor64 input = random_tensor(1, 2, 6, 6, rng);
    Tensor64 weight = random_tensor(3, 2, 3, 3, rng);
    Tensor64 bias = random_tensor(1, 3, 1, 1, rng);
    auto conv_loss = [&](GraphT<double>& g, ValueT<double> in, ValueT<double> w,
                         ValueT<double> b) {
      Rng r(seed + 1);
      return project(g, ops::conv2d(in, w, b, 1, 0), r);
    };
    reports.push_back(check_input("conv2d/input", input, step, op_tol,
                                  [&](GraphT<double>& g, ValueT<double> x) {
                                    return conv_loss(g, x, g.leaf(weight), g.leaf(bias));
                                  }));
    reports.push_back(check_input("conv2d/weight", weight, step, op_tol,
                                  [&](GraphT<double>& g, ValueT<double> x) {
                                    return conv_loss(g, g.leaf(input), x, g.leaf(bias));
                                  }));
    reports.push_back(check_input("conv2d/bias", bias, step, op_tol,
                                  [&](GraphT<double>& g, ValueT<double> x) {
                                    return conv_loss(g, g.leaf(input), g.leaf(weight), x);
                                  }));
    Tensor64 sw = random_tensor(4, 2, 2, 2, rng);
    reports.push_back(check_input("conv2d/input_stride2", input, step, op_tol,
                                  [&](GraphT<double>& g, ValueT<double> x) {
                                    Rng r(seed + 2);
                                    return project(g, ops::conv2d(x, g.leaf(sw), 2, 0), r);
                                  }));
  }

  // batch norm (training mode): input, scale, shift.
  {
    Tensor64 input = random_tensor(1, 2, 4, 4, rng);
    Tensor64 scale = random_tensor(1, 2, 1, 1, rng, 0.5, 1.5);
    Tensor64 shift = random_tensor(1, 2, 1, 1, rng, -0.5, 0.5);
    auto bn_loss = [&](GraphT<double>& g, ValueT<double> x, ValueT<double> sc,
                       ValueT<double> sh) {
      ops::BatchNormStats<double> stats;
      stats.init(2);
      Rng r(seed + 3);
      return project(g, ops::batch_norm(x, sc, sh, stats, true), r);
    };
    reports.push_back(check_input("batch_norm/input", input, step, op_tol,
                                  [&](GraphT<double>& g, ValueT<double> x) {
                                    return bn_loss(g, x, g.leaf(scale), g.leaf(shift));
                                  }));
    reports.push_back(check_input("batch_norm/scale", scale, step, op_tol,
                                  [&](GraphT<double>& g, ValueT<double> x) {
                                    return bn_loss(g, g.leaf(input), x, g.leaf(shift));
                                  }));
    reports.push_back(check_input("batch_norm/shift", shift, step, op_tol,
                                  [&](GraphT<double>& g, ValueT<double> x) {
                                    return bn_loss(g, g.leaf(input), g.leaf(scale), x);
                                  }));
  }

  // Pointwise ops. The relu probe stays well away from the kink.
  {
    Tensor64 x = random_tensor(1, 2, 3, 3, rng);
    reports.push_back(check_input("sigmoid", x, step, op_tol,
                                  [&](GraphT<double>& g, ValueT<double> v) {
                                    Rng r(seed + 4);
                                    return project(g, ops::sigmoid(v), r);
                                  }));
    Tensor64 xr = x;
    for (std::int64_t i = 0; i < xr.size(); ++i) {
      if (std::abs(xr[i]) < 0.1) xr[i] = xr[i] < 0 ? xr[i] - 0.1 : xr[i] + 0.1;
    }
    reports.push_back(check_input("relu", xr, step, op_tol,
                                  [&](GraphT<double>& g, ValueT<double> v) {
                                    Rng r(seed + 5);
                                    return project(g, ops::relu(v), r);
                                  }));
    Tensor64 other = random_tensor(1, 2, 3, 3, rng);
    reports.push_back(check_input("elementwise_mul", x, step, op_tol,
                                  [&](GraphT<double>& g, ValueT<double> v) {
                                    Rng r(seed + 6);
                                    return project(g, ops::mul(v, g.leaf(other)), r);
                                  }));
  }

  // Bilinear sampler: image and position gradients, positions off-kink.
  {
    Tensor64 image = random_tensor(1, 2, 6, 6, rng);
    Tensor64 pos(1, 2, 3, 3);
    for (std::int64_t i = 0; i < pos.size(); ++i) {
      // At least 0.1 from every integer and from the border clamp.
      pos[i] = static_cast<double>(rng.index(4)) + rng.uniform(0.1, 0.9);
    }
    reports.push_back(check_input("bilinear_sample/image", image, step, op_tol,
                                  [&](GraphT<double>& g, ValueT<double> v) {
                                    Rng r(seed + 7);
                                    return project(g, filtering::bilinear_sample(v, g.leaf(pos)),
                                                   r);
                                  }));
    reports.push_back(check_input("bilinear_sample/positions", pos, step, op_tol,
                                  [&](GraphT<double>& g, ValueT<double> v) {
                                    Rng r(seed + 8);
                                    return project(g, filtering::bilinear_sample(g.leaf(image), v),
                                                   r);
                                  }));
  }

  // Deformable weighted average: target, kernel and offset gradients.
  {
    filtering::GridSpec grid(3);
    Tensor64 target = random_tensor(1, 1, 12, 12, rng);
    Tensor64 kernels = random_tensor(1, 9, 3, 3, rng, -0.4, 0.4);
    for (std::int64_t i = 0; i < 9; ++i) {  // per-pixel zero mean (residual contract)
      double s = 0;
      for (std::int64_t c = 0; c < 9; ++c) s += kernels.plane(0, c)[i];
      for (std::int64_t c = 0; c < 9; ++c) kernels.plane(0, c)[i] -= s / 9.0;
    }
    Tensor64 offsets(1, 18, 3, 3);
    for (std::int64_t i = 0; i < offsets.size(); ++i) {
      double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      offsets[i] = sign * rng.uniform(0.15, 1.3);  // fractional, off-kink
    }
    auto dwa_loss = [&](GraphT<double>& g, ValueT<double> f, ValueT<double> k,
                        ValueT<double> o) {
      Rng r(seed + 9);
      return project(g, filtering::deformable_weighted_average(f, k, o, grid, true, 4, 4), r);
    };
    reports.push_back(check_input("deformable/target", target, step, op_tol,
                                  [&](GraphT<double>& g, ValueT<double> v) {
                                    return dwa_loss(g, v, g.leaf(kernels), g.leaf(offsets));
                                  }));
    reports.push_back(check_input("deformable/kernels", kernels, step, op_tol,
                                  [&](GraphT<double>& g, ValueT<double> v) {
                                    return dwa_loss(g, g.leaf(target), v, g.leaf(offsets));
                                  }));
    reports.push_back(check_input("deformable/offsets", offsets, step, op_tol,
                                  [&](GraphT<double>& g, ValueT<double> v) {
                                    return dwa_loss(g, g.leaf(target), g.leaf(kernels), v);
                                  }));
  }

  // L1 loss away from ties.
  {
    Tensor64 pred = random_tensor(1, 1, 4, 4, rng);
    Tensor64 gt = pred;
    for (std::int64_t i = 0; i < gt.size(); ++i) {
      gt[i] += (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.2, 0.6);
    }
    reports.push_back(check_input("l1_loss", pred, step, op_tol,
                                  [&](GraphT<double>& g, ValueT<double> v) {
                                    return ops::l1_loss(v, g.leaf(gt));
                                  }));
  }

  // End-to-end DKN patch: L1 loss through the full two-stream network and
  // the deformable average, checked per parameter on sampled coordinates.
  {
    model::ModelConfig cfg;
    auto m = model::build_model<double>(cfg, seed + 100);
    // Drive sampling positions off integer coordinates via constant offsets:
    // the offset heads keep zero weights and get non-zero biases whose
    // two-stream product lands in +-[0.16, 0.49].
    for (auto* head : {&m.dkn().depth.offset_head, &m.dkn().guide.offset_head}) {
      for (std::int64_t i = 0; i < head->bias.value.size(); ++i) {
        double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        head->bias.value[i] = sign * rng.uniform(0.4, 0.7);
      }
    }
    Tensor64 guidance = random_tensor(1, 3, 51, 51, rng, 0.0, 1.0);
    Tensor64 target = random_tensor(1, 1, 51, 51, rng, 0.0, 1.0);
    clear_stream_kinks(m.dkn().depth, target, 5e-4);
    clear_stream_kinks(m.dkn().guide, guidance, 5e-4);

    double pred0;
    {
      GraphT<double> g;
      pred0 = model::forward_patch(g, m, g.leaf(guidance), g.leaf(target), true).tensor()[0];
    }
    Tensor64 gt = Tensor64::scalar(pred0 + 0.3);

    m.zero_grads();
    {
      GraphT<double> g;
      ValueT<double> pred =
          model::forward_patch(g, m, g.leaf(guidance), g.leaf(target), true);
      g.backward(ops::l1_loss(pred, g.leaf(gt)));
    }

    FdReport agg;
    agg.name = "dkn_patch_end_to_end";
    agg.tolerance = 1e-3;
    Rng coord_rng(seed + 200);
    for (ParameterT<double>* p : m.parameters()) {
      std::vector<std::int64_t> coords = sample_coords(p->value.size(), coords_per_param, coord_rng);
      auto fn = [&](const Tensor64& pv) {
        Tensor64 saved = p->value;
        p->value = pv;
        GraphT<double> g;
        ValueT<double> pred =
            model::forward_patch(g, m, g.leaf(guidance), g.leaf(target), true);
        double out = ops::l1_loss(pred, g.leaf(gt)).tensor()[0];
        p->value = saved;
        return out;
      };
      FdReport r = finite_difference_check(p->name, fn, p->value, p->grad, step, agg.tolerance,
                                           coords);
      agg.max_rel_error = std::max(agg.max_rel_error, r.max_rel_error);
      agg.max_abs_error = std::max(agg.max_abs_error, r.max_abs_error);
      agg.checked += r.checked;
    }
    agg.pass = agg.max_rel_error <= agg.tolerance;
    reports.push_back(agg);
  }

  return reports;
}

}  // namespace dkn::gradcheck
