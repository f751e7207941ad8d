#include "dkn/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "dkn/filtering.hpp"
#include "dkn/image_io.hpp"
#include "dkn/ops.hpp"

namespace dkn::train {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  double uniform() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::int64_t index(std::int64_t n) {
    return static_cast<std::int64_t>(gen() % static_cast<std::uint64_t>(n));
  }
};

// Iteration-local RNG derived from (seed, iteration): resuming from a
// checkpoint at iteration k replays the exact data stream of an
// uninterrupted run.
Rng iteration_rng(std::uint64_t seed, std::int64_t iteration) {
  return Rng(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(iteration + 1)));
}

struct Texture {
  double fx, fy, phase;
  float eval(std::int64_t y, std::int64_t x) const {
    return static_cast<float>(
        0.5 + 0.5 * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase));
  }
};

Texture random_texture(Rng& rng) {
  return Texture{rng.uniform(0.08, 0.5), rng.uniform(0.08, 0.5), rng.uniform(0.0, 6.28318)};
}

struct Shape {
  bool ellipse;
  double cx, cy, rx, ry, cos_t, sin_t;
  float depth;
  float albedo[3];
  Texture tex;

  bool contains(std::int64_t y, std::int64_t x) const {
    double dx = static_cast<double>(x) - cx;
    double dy = static_cast<double>(y) - cy;
    double u = (cos_t * dx + sin_t * dy) / rx;
    double v = (-sin_t * dx + cos_t * dy) / ry;
    if (ellipse) return u * u + v * v <= 1.0;
    return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
  }
};

}  // namespace

void TrainConfig::validate() const {
  DKN_CHECK(iterations > 0 && batch_size > 0 && base_lr > 0 && decay_interval > 0 &&
                decay_factor > 0 && epsilon > 0 && crop > 0 && pixels_per_iteration > 0,
            ConfigError, "TrainConfig: all quantities must be positive");
  DKN_CHECK(beta1 > 0 && beta1 < 1 && beta2 > 0 && beta2 < 1, ConfigError,
            "TrainConfig: betas must lie in (0, 1)");
  DKN_CHECK(iterations < decay_interval || iterations % decay_interval == 0, ConfigError,
            "TrainConfig: decay interval ", decay_interval, " does not divide ", iterations,
            " iterations");
  DKN_CHECK(crop % model::ModelConfig::resample_stride == 0, ConfigError,
            "TrainConfig: crop ", crop, " must be a multiple of ",
            model::ModelConfig::resample_stride);
}

double lr_at(std::int64_t iteration, const TrainConfig& config) {
  DKN_CHECK(iteration >= 0, ConfigError, "lr_at: negative iteration ", iteration);
  std::int64_t drops = iteration / config.decay_interval;
  double lr = config.base_lr;
  for (std::int64_t i = 0; i < drops; ++i) lr /= config.decay_factor;
  return lr;
}

ScenePair generate_scene(std::uint64_t seed, std::int64_t height, std::int64_t width) {
  DKN_CHECK(height >= 64 && width >= 64, ConfigError,
            "generate_scene: dims must be >= 64, got ", height, "x", width);
  Rng rng(seed);

  float base = static_cast<float>(rng.uniform(0.3, 0.7));
  double gx = rng.uniform(-0.12, 0.12);
  double gy = rng.uniform(-0.12, 0.12);
  float bg_albedo[3];
  for (float& a : bg_albedo) a = static_cast<float>(rng.uniform(0.15, 0.9));
  Texture bg_tex = random_texture(rng);

  std::int64_t count = 6 + rng.index(7);
  double min_dim = static_cast<double>(std::min(height, width));
  std::vector<Shape> shapes;
  for (std::int64_t i = 0; i < count; ++i) {
    Shape s;
    s.ellipse = rng.index(2) == 0;
    s.cx = rng.uniform(0.12, 0.88) * static_cast<double>(width);
    s.cy = rng.uniform(0.12, 0.88) * static_cast<double>(height);
    s.rx = rng.uniform(0.07, 0.2) * min_dim;
    s.ry = rng.uniform(0.07, 0.2) * min_dim;
    double theta = rng.uniform(0.0, 3.14159265);
    s.cos_t = std::cos(theta);
    s.sin_t = std::sin(theta);
    // Contrast against the background plane: offsets of at least 0.18
    // against a gradient of at most +-0.12 keep every boundary step > 0.1.
    double offset = rng.uniform(0.18, 0.45) * (rng.index(2) == 0 ? 1.0 : -1.0);
    s.depth = static_cast<float>(std::clamp(static_cast<double>(base) + offset, 0.02, 0.98));
    for (float& a : s.albedo) a = static_cast<float>(rng.uniform(0.1, 0.95));
    bool distinct = false;
    for (int c = 0; c < 3; ++c) distinct |= std::abs(s.albedo[c] - bg_albedo[c]) >= 0.2f;
    if (!distinct) {
      s.albedo[0] = bg_albedo[0] > 0.5f ? bg_albedo[0] - 0.25f : bg_albedo[0] + 0.25f;
    }
    s.tex = random_texture(rng);
    shapes.push_back(s);
  }
  // Painter's order: far shapes first, near shapes overwrite.
  std::stable_sort(shapes.begin(), shapes.end(),
                   [](const Shape& a, const Shape& b) { return a.depth > b.depth; });

  ScenePair scene;
  scene.hr_color = Tensor(1, 3, height, width);
  scene.hr_depth = Tensor(1, 1, height, width);
  scene.provenance = detail::cat("synthetic:", seed);
  for (std::int64_t y = 0; y < height; ++y) {
    for (std::int64_t x = 0; x < width; ++x) {
      double u = static_cast<double>(x) / static_cast<double>(width - 1) - 0.5;
      double v = static_cast<double>(y) / static_cast<double>(height - 1) - 0.5;
      float depth = static_cast<float>(
          std::clamp(static_cast<double>(base) + gx * u + gy * v, 0.02, 0.98));
      float tex = bg_tex.eval(y, x);
      float color[3];
      for (int c = 0; c < 3; ++c) color[c] = bg_albedo[c] * (0.8f + 0.2f * tex);
      for (const Shape& s : shapes) {
        if (!s.contains(y, x)) continue;
        depth = s.depth;
        float st = s.tex.eval(y, x);
        for (int c = 0; c < 3; ++c) color[c] = s.albedo[c] * (0.8f + 0.2f * st);
      }
      scene.hr_depth.at(0, 0, y, x) = depth;
      for (int c = 0; c < 3; ++c) {
        scene.hr_color.at(0, c, y, x) = std::clamp(color[c], 0.0f, 1.0f);
      }
    }
  }
  return scene;
}

SynthesizedPair synthesize_pair(const ScenePair& scene, int scale) {
  const Tensor& d = scene.hr_depth;
  DKN_CHECK(scale >= 1, ConfigError, "synthesize_pair: scale must be >= 1, got ", scale);
  DKN_CHECK(d.h() % scale == 0 && d.w() % scale == 0, DimensionError,
            "synthesize_pair: dims ", d.shape_str(), " not divisible by scale ", scale);
  DKN_CHECK(scene.hr_color.h() == d.h() && scene.hr_color.w() == d.w(), DimensionError,
            "synthesize_pair: color ", scene.hr_color.shape_str(), " vs depth ", d.shape_str());
  SynthesizedPair out;
  out.lr_depth = filtering::bicubic_resize(d, d.h() / scale, d.w() / scale);
  out.target_gt = d;
  out.guidance = scene.hr_color;
  return out;
}

void AdamState::init(const std::vector<Parameter*>& params) {
  moments.clear();
  moments.reserve(params.size());
  for (Parameter* p : params) {
    Moments m;
    m.m = Tensor(p->value.n(), p->value.c(), p->value.h(), p->value.w());
    m.v = Tensor(p->value.n(), p->value.c(), p->value.h(), p->value.w());
    moments.push_back(std::move(m));
  }
  step = 0;
}

void adam_step(const std::vector<Parameter*>& params, AdamState& state, double lr, double beta1,
               double beta2, double epsilon) {
  DKN_CHECK(state.moments.size() == params.size(), ContractError,
            "adam_step: state holds ", state.moments.size(), " moment pairs for ", params.size(),
            " parameters");
  state.step++;
  float b1 = static_cast<float>(beta1);
  float b2 = static_cast<float>(beta2);
  float bc1 = 1.0f - static_cast<float>(std::pow(beta1, static_cast<double>(state.step)));
  float bc2 = 1.0f - static_cast<float>(std::pow(beta2, static_cast<double>(state.step)));
  float flr = static_cast<float>(lr);
  float eps = static_cast<float>(epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter* p = params[i];
    DKN_CHECK(p->grad.same_shape(p->value), ContractError, "adam_step: missing gradient for ",
              p->name);
    Tensor& m = state.moments[i].m;
    Tensor& v = state.moments[i].v;
    for (std::int64_t j = 0; j < p->value.size(); ++j) {
      float g = p->grad[j];
      m[j] = b1 * m[j] + (1.0f - b1) * g;
      v[j] = b2 * v[j] + (1.0f - b2) * g * g;
      float mhat = m[j] / bc1;
      float vhat = v[j] / bc2;
      p->value[j] -= flr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

CheckpointMeta summarize_losses(const std::vector<double>& history, std::int64_t iteration,
                                std::uint64_t seed) {
  CheckpointMeta meta;
  meta.iteration = iteration;
  meta.seed = seed;
  meta.loss_count = static_cast<std::int64_t>(history.size());
  if (!history.empty()) {
    meta.loss_first = static_cast<float>(history.front());
    meta.loss_last = static_cast<float>(history.back());
    double mn = history[0], total = 0.0;
    for (double v : history) {
      mn = std::min(mn, v);
      total += v;
    }
    meta.loss_min = static_cast<float>(mn);
    meta.loss_mean = static_cast<float>(total / static_cast<double>(history.size()));
  }
  return meta;
}

namespace {

struct PreparedScene {
  Tensor f_hr;      // bicubic-upsampled LR depth
  Tensor guidance;  // HR color
  Tensor gt;        // HR depth
};

PreparedScene prepare_scene(const ScenePair& scene, int scale) {
  SynthesizedPair pair = synthesize_pair(scene, scale);
  PreparedScene out;
  out.f_hr = filtering::bicubic_resize(pair.lr_depth, pair.target_gt.h(), pair.target_gt.w());
  out.guidance = pair.guidance;
  out.gt = pair.target_gt;
  return out;
}

}  // namespace

TrainResult train(model::Model& m, AdamState& adam, const std::vector<ScenePair>& dataset,
                  const TrainConfig& config) {
  config.validate();
  DKN_CHECK(!dataset.empty(), ConfigError, "train: empty dataset");
  DKN_CHECK(config.scale == m.config().scale, ConfigError, "train: config scale ", config.scale,
            " does not match model scale ", m.config().scale);
  const bool is_dkn = m.is_dkn();
  const bool guided = m.config().guided;
  constexpr int rf = model::ModelConfig::receptive_field;
  constexpr int center = rf / 2;
  const filtering::GridSpec grid = m.config().grid();
  const int taps = grid.taps();

  std::vector<PreparedScene> prepared;
  prepared.reserve(dataset.size());
  for (const ScenePair& scene : dataset) {
    PreparedScene p = prepare_scene(scene, config.scale);
    if (is_dkn) {
      DKN_CHECK(p.f_hr.h() >= rf + 1 && p.f_hr.w() >= rf + 1, ConfigError,
                "train: scene ", p.f_hr.shape_str(), " too small for ", rf, "x", rf, " patches");
    } else {
      DKN_CHECK(p.f_hr.h() >= config.crop && p.f_hr.w() >= config.crop, ConfigError,
                "train: scene ", p.f_hr.shape_str(), " smaller than crop ", config.crop);
    }
    prepared.push_back(std::move(p));
  }

  std::vector<Parameter*> params = m.parameters();
  if (!adam.initialized()) adam.init(params);

  TrainResult result;
  result.loss_history.reserve(static_cast<std::size_t>(config.iterations));
  double last_finite = std::numeric_limits<double>::quiet_NaN();

  for (std::int64_t iter = adam.step; iter < config.iterations; ++iter) {
    Rng rng = iteration_rng(config.seed, iter);
    m.zero_grads();
    double iter_loss = 0.0;
    std::int64_t iter_pixels = 0;

    for (int b = 0; b < config.batch_size; ++b) {
      const PreparedScene& scene = prepared[static_cast<std::size_t>(rng.index(
          static_cast<std::int64_t>(prepared.size())))];
      Graph g;
      Value pred;
      Value gt;
      std::int64_t pixel_count = 0;

      if (is_dkn) {
        const int P = config.pixels_per_iteration;
        std::int64_t ymax = scene.f_hr.h() - rf;  // patch top-left range
        std::int64_t xmax = scene.f_hr.w() - rf;
        Tensor f_patches(P, 1, rf, rf);
        Tensor g_patches(P, guided ? m.config().guidance_channels : 1, rf, rf);
        Tensor gt_batch(P, 1, 1, 1);
        for (int p = 0; p < P; ++p) {
          std::int64_t top = rng.index(ymax + 1);
          std::int64_t left = rng.index(xmax + 1);
          for (std::int64_t y = 0; y < rf; ++y) {
            const float* src = scene.f_hr.row(0, 0, top + y) + left;
            std::copy(src, src + rf, f_patches.row(p, 0, y));
            if (guided) {
              for (std::int64_t c = 0; c < g_patches.c(); ++c) {
                const float* gsrc = scene.guidance.row(0, c, top + y) + left;
                std::copy(gsrc, gsrc + rf, g_patches.row(p, c, y));
              }
            }
          }
          gt_batch[p] = scene.gt.at(0, 0, top + center, left + center);
        }
        Value fv = g.leaf(std::move(f_patches));
        Value gv;
        if (guided) gv = g.leaf(std::move(g_patches));
        model::FeaturePairT<float> features = model::extract_features(g, m, gv, fv, true);
        Value kernels = model::regress_weights(g, m, features);
        Value offsets = config.freeze_offsets
                            ? g.leaf(Tensor(P, 2 * taps, 1, 1))
                            : model::regress_offsets(g, m, features);
        pred = filtering::deformable_weighted_average(fv, kernels, offsets, grid,
                                                      m.config().residual, center, center);
        gt = g.leaf(std::move(gt_batch));
        pixel_count = P;
      } else {
        const std::int64_t c = config.crop;
        std::int64_t top = rng.index(scene.f_hr.h() - c + 1);
        std::int64_t left = rng.index(scene.f_hr.w() - c + 1);
        Value fv = g.leaf(ops::crop(scene.f_hr, top, left, c, c));
        Value gv;
        if (guided) gv = g.leaf(ops::crop(scene.guidance, top, left, c, c));
        model::RegressedFieldsT<float> fields = model::forward_full_fdkn(g, m, gv, fv, true);
        Value offsets = config.freeze_offsets
                            ? g.leaf(Tensor(1, 2 * taps, c, c))
                            : fields.offsets;
        pred = filtering::deformable_weighted_average(fv, fields.kernels, offsets, grid,
                                                      m.config().residual);
        gt = g.leaf(ops::crop(scene.gt, top, left, c, c));
        pixel_count = c * c;
      }

      Value loss = ops::l1_loss(pred, gt);
      double lv = static_cast<double>(loss.tensor()[0]);
      if (!std::isfinite(lv)) {
        throw std::runtime_error(detail::cat("train: non-finite loss at iteration ", iter,
                                             " (last finite loss ", last_finite, ")"));
      }
      g.backward(loss);
      iter_loss += lv;
      iter_pixels += pixel_count;
    }

    adam_step(params, adam, lr_at(iter, config), config.beta1, config.beta2, config.epsilon);
    double per_pixel = iter_loss / static_cast<double>(iter_pixels);
    last_finite = per_pixel;
    result.loss_history.push_back(per_pixel);

    if (config.checkpoint_every > 0 && !config.checkpoint_path.empty() &&
        (iter + 1) % config.checkpoint_every == 0) {
      CheckpointMeta meta = summarize_losses(result.loss_history, iter + 1, config.seed);
      save_checkpoint(m, &adam, meta, config.checkpoint_path);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization (little-endian).
// ---------------------------------------------------------------------------

namespace {

using Kind = IoError::Kind;

constexpr char kMagic[4] = {'D', 'K', 'N', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
  put_u32(out, static_cast<std::uint32_t>(v & 0xffffffffull));
  put_u32(out, static_cast<std::uint32_t>(v >> 32));
}

void put_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_tensor(std::ostream& out, const Tensor& t) {
  for (std::int64_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (std::int64_t i = 0; i < t.size(); ++i) put_f32(out, t[i]);
}

struct Reader {
  std::istream& in;
  std::string ctx;

  void raw(char* dst, std::size_t n) {
    in.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
      throw IoError(Kind::UnexpectedEof, ctx + ": truncated checkpoint");
    }
  }
  std::uint32_t u32() {
    unsigned char b[4];
    raw(reinterpret_cast<char*>(b), 4);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
           std::uint32_t(b[3]) << 24;
  }
  std::uint64_t u64() {
    std::uint64_t lo = u32();
    return lo | (std::uint64_t(u32()) << 32);
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str() {
    std::uint32_t n = u32();
    if (n > (1u << 16)) throw IoError(Kind::MalformedHeader, ctx + ": implausible name length");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }
  Tensor tensor() {
    std::int64_t d[4];
    for (auto& x : d) x = static_cast<std::int64_t>(u32());
    Tensor t(d[0], d[1], d[2], d[3]);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = f32();
    return t;
  }
};

std::uint32_t variant_code(model::Variant v) { return v == model::Variant::Dkn ? 0 : 1; }

}  // namespace

void save_checkpoint(model::Model& m, const AdamState* adam, const CheckpointMeta& meta,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(Kind::Other, "cannot open " + path + " for writing");
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  const model::ModelConfig& cfg = m.config();
  put_u32(out, variant_code(cfg.variant));
  put_u32(out, static_cast<std::uint32_t>(cfg.kernel_size));
  put_u32(out, cfg.guided ? 1 : 0);
  put_u32(out, cfg.residual ? 1 : 0);
  put_u32(out, static_cast<std::uint32_t>(cfg.scale));
  put_u32(out, static_cast<std::uint32_t>(cfg.guidance_channels));

  std::vector<Parameter*> params = m.parameters();
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (Parameter* p : params) {
    put_string(out, p->name);
    put_tensor(out, p->value);
  }
  auto buffers = m.buffers();
  put_u32(out, static_cast<std::uint32_t>(buffers.size()));
  for (auto& [name, tensor] : buffers) {
    put_string(out, name);
    put_tensor(out, *tensor);
  }

  bool has_adam = adam != nullptr && adam->initialized();
  out.put(has_adam ? 1 : 0);
  if (has_adam) {
    DKN_CHECK(adam->moments.size() == params.size(), ContractError,
              "save_checkpoint: optimizer state does not match parameter list");
    put_u64(out, static_cast<std::uint64_t>(adam->step));
    for (const auto& m2 : adam->moments) {
      put_tensor(out, m2.m);
      put_tensor(out, m2.v);
    }
  }

  put_u64(out, static_cast<std::uint64_t>(meta.iteration));
  put_u64(out, meta.seed);
  put_u64(out, static_cast<std::uint64_t>(meta.loss_count));
  put_f32(out, meta.loss_first);
  put_f32(out, meta.loss_last);
  put_f32(out, meta.loss_min);
  put_f32(out, meta.loss_mean);
  if (!out) throw IoError(Kind::Other, "write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(Kind::Other, "cannot open " + path);
  Reader r{in, path};

  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError(Kind::BadMagic, path + ": not a checkpoint (bad magic)");
  }
  std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw IoError(Kind::BadVersion,
                  detail::cat(path, ": unsupported checkpoint version ", version));
  }
  model::ModelConfig cfg;
  std::uint32_t variant = r.u32();
  if (variant > 1) throw IoError(Kind::MalformedHeader, path + ": unknown model variant");
  cfg.variant = variant == 0 ? model::Variant::Dkn : model::Variant::Fdkn;
  cfg.kernel_size = static_cast<int>(r.u32());
  cfg.guided = r.u32() != 0;
  cfg.residual = r.u32() != 0;
  cfg.scale = static_cast<int>(r.u32());
  cfg.guidance_channels = static_cast<int>(r.u32());

  LoadedCheckpoint out;
  out.model = model::build_model<float>(cfg, 0);
  std::vector<Parameter*> params = out.model.parameters();
  std::uint32_t param_count = r.u32();
  if (param_count != params.size()) {
    throw IoError(Kind::Mismatch, detail::cat(path, ": checkpoint holds ", param_count,
                                              " parameters, model expects ", params.size()));
  }
  for (Parameter* p : params) {
    std::string name = r.str();
    if (name != p->name) {
      throw IoError(Kind::Mismatch,
                    detail::cat(path, ": parameter '", name, "' where '", p->name, "' expected"));
    }
    Tensor t = r.tensor();
    if (!t.same_shape(p->value)) {
      throw IoError(Kind::Mismatch, detail::cat(path, ": parameter '", name, "' has shape ",
                                                t.shape_str(), ", expected ",
                                                p->value.shape_str()));
    }
    p->value = std::move(t);
  }
  auto buffers = out.model.buffers();
  std::uint32_t buffer_count = r.u32();
  if (buffer_count != buffers.size()) {
    throw IoError(Kind::Mismatch, detail::cat(path, ": checkpoint holds ", buffer_count,
                                              " buffers, model expects ", buffers.size()));
  }
  for (auto& [name, tensor] : buffers) {
    std::string stored = r.str();
    if (stored != name) {
      throw IoError(Kind::Mismatch,
                    detail::cat(path, ": buffer '", stored, "' where '", name, "' expected"));
    }
    Tensor t = r.tensor();
    if (!t.same_shape(*tensor)) {
      throw IoError(Kind::Mismatch, detail::cat(path, ": buffer '", name, "' shape mismatch"));
    }
    *tensor = std::move(t);
  }

  char has_adam = 0;
  r.raw(&has_adam, 1);
  if (has_adam != 0) {
    out.has_adam = true;
    out.adam.step = static_cast<std::int64_t>(r.u64());
    out.adam.moments.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.adam.moments[i].m = r.tensor();
      out.adam.moments[i].v = r.tensor();
      if (!out.adam.moments[i].m.same_shape(params[i]->value) ||
          !out.adam.moments[i].v.same_shape(params[i]->value)) {
        throw IoError(Kind::Mismatch,
                      detail::cat(path, ": optimizer moments for '", params[i]->name,
                                  "' have wrong shape"));
      }
    }
  }

  out.meta.iteration = static_cast<std::int64_t>(r.u64());
  out.meta.seed = r.u64();
  out.meta.loss_count = static_cast<std::int64_t>(r.u64());
  out.meta.loss_first = r.f32();
  out.meta.loss_last = r.f32();
  out.meta.loss_min = r.f32();
  out.meta.loss_mean = r.f32();
  return out;
}

LoadedCheckpoint load_checkpoint(const std::string& path, const model::ModelConfig& expected) {
  LoadedCheckpoint out = load_checkpoint(path);
  const model::ModelConfig& got = out.model.config();
  if (got.variant != expected.variant || got.kernel_size != expected.kernel_size ||
      got.guided != expected.guided || got.residual != expected.residual ||
      got.scale != expected.scale || got.guidance_channels != expected.guidance_channels) {
    throw IoError(Kind::Mismatch,
                  detail::cat(path, ": checkpoint config (", got.describe(),
                              ") does not match expected (", expected.describe(), ")"));
  }
  return out;
}

std::vector<ScenePair> load_scene_directory(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) {
    throw IoError(IoError::Kind::Other, detail::cat("not a directory: ", dir));
  }
  std::map<std::string, std::pair<std::string, std::string>> pairs;  // name -> (color, depth)
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string fname = entry.path().filename().string();
    auto mark = fname.find(".color.");
    if (mark != std::string::npos) {
      pairs[fname.substr(0, mark)].first = entry.path().string();
      continue;
    }
    mark = fname.find(".depth.");
    if (mark != std::string::npos) pairs[fname.substr(0, mark)].second = entry.path().string();
  }
  std::vector<ScenePair> out;
  for (const auto& [name, files] : pairs) {
    if (files.first.empty() || files.second.empty()) {
      throw IoError(IoError::Kind::Other,
                    detail::cat("dataset pair '", name, "' is missing its ",
                                files.first.empty() ? "color" : "depth", " file"));
    }
    ScenePair scene;
    scene.hr_color = io::read_image(files.first);
    scene.hr_depth = io::read_image(files.second);
    DKN_CHECK(scene.hr_color.c() == 3, DimensionError, files.first, ": expected 3 channels, got ",
              scene.hr_color.shape_str());
    DKN_CHECK(scene.hr_depth.c() == 1, DimensionError, files.second,
              ": expected 1 channel, got ", scene.hr_depth.shape_str());
    DKN_CHECK(scene.hr_color.h() == scene.hr_depth.h() &&
                  scene.hr_color.w() == scene.hr_depth.w(),
              DimensionError, "dataset pair '", name, "': color ", scene.hr_color.shape_str(),
              " vs depth ", scene.hr_depth.shape_str());
    for (Tensor* t : {&scene.hr_color, &scene.hr_depth}) {
      for (std::int64_t i = 0; i < t->size(); ++i) (*t)[i] = std::clamp((*t)[i], 0.0f, 1.0f);
    }
    scene.provenance = name;
    out.push_back(std::move(scene));
  }
  return out;
}

}  // namespace dkn::train
