#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dkn/filtering.hpp"
#include "dkn/ops.hpp"
#include "dkn/training.hpp"
#include "oracles.hpp"

using namespace dkn;
using train::AdamState;
using train::ScenePair;
using train::TrainConfig;

namespace {

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

TrainConfig small_config(std::int64_t iterations) {
  TrainConfig tc;
  tc.iterations = iterations;
  tc.pixels_per_iteration = 4;
  tc.scale = 4;
  tc.seed = 5;
  return tc;
}

}  // namespace

TEST_CASE("l1 loss examples") {
  oracle::TestRng rng(80);
  Tensor pred = oracle::random_tensor<float>(1, 1, 4, 4, rng);
  Graph g;
  CHECK(ops::l1_loss(g.leaf(pred), g.leaf(pred)).tensor()[0] == 0.0f);

  Tensor shifted = pred;
  for (std::int64_t i = 0; i < shifted.size(); ++i) shifted[i] += 0.25f;
  float loss = ops::l1_loss(g.leaf(shifted), g.leaf(pred)).tensor()[0];
  CHECK(loss == doctest::Approx(16 * 0.25f).epsilon(1e-5));
}

TEST_CASE("l1 loss gradient is the elementwise sign") {
  oracle::TestRng rng(81);
  Tensor pred = oracle::random_tensor<float>(1, 1, 3, 3, rng);
  Tensor gt = pred;
  for (std::int64_t i = 0; i < gt.size(); ++i) {
    gt[i] += (i % 2 == 0 ? 0.3f : -0.3f);
  }
  Graph g;
  Value pv = g.leaf(pred, true);
  g.backward(ops::l1_loss(pv, g.leaf(gt)));
  for (std::int64_t i = 0; i < pred.size(); ++i) {
    CHECK(pv.node()->grad[i] == (pred[i] > gt[i] ? 1.0f : -1.0f));
  }
}

TEST_CASE("adam first step moves by about the learning rate") {
  Parameter p;
  p.init("p", Tensor::full(1, 1, 1, 2, 1.0f));
  p.grad[0] = 50.0f;  // any magnitude
  p.grad[1] = -0.5f;
  AdamState state;
  state.init({&p});
  train::adam_step({&p}, state, 0.01);
  CHECK(p.value[0] == doctest::Approx(1.0f - 0.01f).epsilon(1e-3));
  CHECK(p.value[1] == doctest::Approx(1.0f + 0.01f).epsilon(1e-3));
}

TEST_CASE("adam with zero gradients leaves parameters unchanged") {
  Parameter p;
  p.init("p", Tensor::full(1, 1, 1, 3, 0.7f));
  AdamState state;
  state.init({&p});
  for (int i = 0; i < 5; ++i) train::adam_step({&p}, state, 0.1);
  for (std::int64_t i = 0; i < 3; ++i) CHECK(p.value[i] == 0.7f);
  CHECK(state.step == 5);
}

TEST_CASE("adam drives a quadratic toward its minimum") {
  // Frozen expectations from a scalar run of the update rule: |x| decreases
  // monotonically and ends below 0.5 after 50 steps at lr 0.1.
  Parameter x;
  x.init("x", Tensor::full(1, 1, 1, 1, 1.0f));
  AdamState state;
  state.init({&x});
  float prev = 1.0f;
  for (int i = 0; i < 50; ++i) {
    x.zero_grad();
    x.grad[0] = 2.0f * x.value[0];
    train::adam_step({&x}, state, 0.1);
    CHECK(std::abs(x.value[0]) < std::abs(prev) + 1e-6f);
    prev = x.value[0];
  }
  CHECK(std::abs(x.value[0]) < 0.5f);
}

TEST_CASE("adam requires state matching the parameter list") {
  Parameter p, q;
  p.init("p", Tensor::full(1, 1, 1, 1, 1.0f));
  q.init("q", Tensor::full(1, 1, 1, 1, 1.0f));
  AdamState state;
  state.init({&p});
  CHECK_THROWS_AS(train::adam_step({&p, &q}, state, 0.1), ContractError);
}

TEST_CASE("learning rate schedule") {
  TrainConfig tc;
  CHECK(train::lr_at(0, tc) == doctest::Approx(1e-3).epsilon(1e-9));
  CHECK(train::lr_at(9999, tc) == doctest::Approx(1e-3).epsilon(1e-9));
  CHECK(train::lr_at(10000, tc) == doctest::Approx(2e-4).epsilon(1e-9));
  CHECK(train::lr_at(39999, tc) == doctest::Approx(8e-6).epsilon(1e-9));
  // piecewise constant with breakpoints at multiples of 10000
  double prev = train::lr_at(0, tc);
  for (std::int64_t i = 1; i < 40000; i += 997) {
    double lr = train::lr_at(i, tc);
    CHECK(lr <= prev + 1e-12);
    if (i / 10000 == (i - 997) / 10000) CHECK(lr == prev);
    prev = lr;
  }
  CHECK_THROWS_AS(train::lr_at(-1, tc), ConfigError);
}

TEST_CASE("synthesize_pair downsamples the depth and passes guidance through") {
  ScenePair scene;
  scene.hr_color = Tensor::full(1, 3, 32, 32, 0.25f);
  scene.hr_depth = Tensor::full(1, 1, 32, 32, 0.5f);
  auto pair = train::synthesize_pair(scene, 4);
  CHECK(pair.lr_depth.shape_str() == "1x1x8x8");
  for (std::int64_t i = 0; i < pair.lr_depth.size(); ++i) {
    CHECK(pair.lr_depth[i] == doctest::Approx(0.5f).epsilon(1e-6));
  }
  CHECK(bitwise_equal(pair.target_gt, scene.hr_depth));
  CHECK(bitwise_equal(pair.guidance, scene.hr_color));

  ScenePair odd;
  odd.hr_color = Tensor(1, 3, 30, 32);
  odd.hr_depth = Tensor(1, 1, 30, 32);
  CHECK_THROWS_AS(train::synthesize_pair(odd, 4), DimensionError);
}

TEST_CASE("bicubic round trip beats nearest neighbor on smooth depth") {
  std::int64_t n = 64;
  ScenePair scene;
  scene.hr_color = Tensor(1, 3, n, n);
  scene.hr_depth = Tensor(1, 1, n, n);
  for (std::int64_t y = 0; y < n; ++y) {
    for (std::int64_t x = 0; x < n; ++x) {
      double u = static_cast<double>(x) / (n - 1), v = static_cast<double>(y) / (n - 1);
      scene.hr_depth.at(0, 0, y, x) = static_cast<float>(0.2 + 0.5 * u * u + 0.3 * v * u);
    }
  }
  auto pair = train::synthesize_pair(scene, 4);
  Tensor up = filtering::bicubic_resize(pair.lr_depth, n, n);

  // Nearest-neighbor round trip oracle.
  Tensor nn_up(1, 1, n, n);
  for (std::int64_t y = 0; y < n; ++y) {
    for (std::int64_t x = 0; x < n; ++x) {
      nn_up.at(0, 0, y, x) = scene.hr_depth.at(0, 0, (y / 4) * 4, (x / 4) * 4);
    }
  }
  auto rmse_of = [&](const Tensor& t) {
    double acc = 0;
    for (std::int64_t i = 0; i < t.size(); ++i) {
      double d = t[i] - scene.hr_depth[i];
      acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(t.size()));
  };
  CHECK(rmse_of(up) < rmse_of(nn_up));
}

TEST_CASE("scene generation is deterministic, in range, and has depth edges") {
  auto a = train::generate_scene(77, 96, 96);
  auto b = train::generate_scene(77, 96, 96);
  CHECK(bitwise_equal(a.hr_color, b.hr_color));
  CHECK(bitwise_equal(a.hr_depth, b.hr_depth));
  CHECK_FALSE(bitwise_equal(a.hr_depth, train::generate_scene(78, 96, 96).hr_depth));
  CHECK_THROWS_AS(train::generate_scene(1, 32, 96), ConfigError);

  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    auto scene = train::generate_scene(seed, 96, 96);
    const Tensor& d = scene.hr_depth;
    std::int64_t edges = 0;
    for (std::int64_t i = 0; i < d.size(); ++i) {
      CHECK(d[i] >= 0.0f);
      CHECK(d[i] <= 1.0f);
    }
    for (std::int64_t c = 0; c < 3; ++c) {
      for (std::int64_t i = 0; i < scene.hr_color.size() / 3; ++i) {
        CHECK(scene.hr_color.plane(0, c)[i] >= 0.0f);
        CHECK(scene.hr_color.plane(0, c)[i] <= 1.0f);
      }
    }
    for (std::int64_t y = 0; y < 95; ++y) {
      for (std::int64_t x = 0; x < 95; ++x) {
        float gx = std::abs(d.at(0, 0, y, x + 1) - d.at(0, 0, y, x));
        float gy = std::abs(d.at(0, 0, y + 1, x) - d.at(0, 0, y, x));
        if (std::max(gx, gy) > 0.1f) edges++;
      }
    }
    // at least 2% of pixels on depth discontinuities
    CHECK(edges >= 96 * 96 / 50);
  }
}

TEST_CASE("one adam step on the training loss decreases it") {
  model::ModelConfig cfg;
  auto m = model::build_model<float>(cfg, 303);
  auto scene = train::generate_scene(12, 96, 96);
  auto pair = train::synthesize_pair(scene, 4);
  Tensor f_hr = filtering::bicubic_resize(pair.lr_depth, 96, 96);

  // One fixed 4-patch batch.
  Tensor f(4, 1, 51, 51), gd(4, 3, 51, 51), gt(4, 1, 1, 1);
  oracle::TestRng rng(83);
  for (int p = 0; p < 4; ++p) {
    std::int64_t top = rng.index(96 - 51), left = rng.index(96 - 51);
    for (std::int64_t y = 0; y < 51; ++y) {
      for (std::int64_t x = 0; x < 51; ++x) {
        f.at(p, 0, y, x) = f_hr.at(0, 0, top + y, left + x);
        for (std::int64_t c = 0; c < 3; ++c) {
          gd.at(p, c, y, x) = pair.guidance.at(0, c, top + y, left + x);
        }
      }
    }
    gt[p] = pair.target_gt.at(0, 0, top + 25, left + 25);
  }
  auto loss_of = [&](bool backward) {
    Graph g;
    Value fv = g.leaf(f), gv = g.leaf(gd);
    Value pred = model::forward_patch(g, m, gv, fv, true);
    Value loss = ops::l1_loss(pred, g.leaf(gt));
    if (backward) {
      m.zero_grads();
      g.backward(loss);
    }
    return loss.tensor()[0];
  };
  float before = loss_of(true);
  AdamState state;
  state.init(m.parameters());
  train::adam_step(m.parameters(), state, 1e-4);
  float after = loss_of(false);
  CHECK(after < before);
}

TEST_CASE("training is deterministic and records one loss per iteration") {
  std::vector<ScenePair> scenes{train::generate_scene(21, 96, 96)};
  TrainConfig tc = small_config(6);
  auto run = [&]() {
    model::ModelConfig cfg;
    auto m = model::build_model<float>(cfg, 99);
    AdamState adam;
    auto result = train::train(m, adam, scenes, tc);
    return std::pair<std::vector<double>, Tensor>(result.loss_history,
                                                  m.parameters()[0]->value);
  };
  auto [h1, p1] = run();
  auto [h2, p2] = run();
  CHECK(h1.size() == 6);
  CHECK(h1 == h2);
  CHECK(bitwise_equal(p1, p2));
}

TEST_CASE("training aborts on non-finite loss with a diagnostic") {
  std::vector<ScenePair> scenes{train::generate_scene(22, 96, 96)};
  model::ModelConfig cfg;
  auto m = model::build_model<float>(cfg, 100);
  m.parameters()[0]->value.fill(std::numeric_limits<float>::infinity());
  AdamState adam;
  TrainConfig tc = small_config(3);
  try {
    train::train(m, adam, scenes, tc);
    FAIL("expected abort");
  } catch (const std::runtime_error& e) {
    std::string msg = e.what();
    CHECK(msg.find("iteration 0") != std::string::npos);
  }
}

TEST_CASE("training validates its configuration") {
  TrainConfig tc;
  tc.iterations = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.iterations = 15000;  // crosses a decay boundary unevenly
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.crop = 30;  // not a multiple of the resample stride
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.iterations = 2000;  // below one decay interval
  tc.validate();
}

TEST_CASE("checkpoint round trip is bit exact") {
  model::ModelConfig cfg;
  auto m = model::build_model<float>(cfg, 71);
  AdamState adam;
  adam.init(m.parameters());
  adam.step = 17;
  oracle::TestRng rng(84);
  for (auto& mm : adam.moments) {
    for (std::int64_t i = 0; i < mm.m.size(); ++i) {
      mm.m[i] = static_cast<float>(rng.uniform(-1, 1));
      mm.v[i] = static_cast<float>(rng.uniform(0, 1));
    }
  }
  train::CheckpointMeta meta;
  meta.iteration = 17;
  meta.seed = 5;
  meta.loss_count = 17;
  meta.loss_first = 0.5f;
  meta.loss_last = 0.25f;
  meta.loss_min = 0.2f;
  meta.loss_mean = 0.3f;
  std::string path = temp_path("dkn_test_ckpt.bin");
  train::save_checkpoint(m, &adam, meta, path);

  auto loaded = train::load_checkpoint(path);
  auto pa = m.parameters();
  auto pb = loaded.model.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    CHECK(bitwise_equal(pa[i]->value, pb[i]->value));
  }
  auto ba = m.buffers();
  auto bb = loaded.model.buffers();
  for (std::size_t i = 0; i < ba.size(); ++i) {
    CHECK(bitwise_equal(*ba[i].second, *bb[i].second));
  }
  REQUIRE(loaded.has_adam);
  CHECK(loaded.adam.step == 17);
  for (std::size_t i = 0; i < adam.moments.size(); ++i) {
    CHECK(bitwise_equal(adam.moments[i].m, loaded.adam.moments[i].m));
    CHECK(bitwise_equal(adam.moments[i].v, loaded.adam.moments[i].v));
  }
  CHECK(loaded.meta.iteration == 17);
  CHECK(loaded.meta.loss_last == 0.25f);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loader reports distinct failure modes") {
  model::ModelConfig cfg;
  auto m = model::build_model<float>(cfg, 72);
  std::string path = temp_path("dkn_test_ckpt2.bin");
  train::save_checkpoint(m, nullptr, {}, path);

  SUBCASE("truncation") {
    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size / 2);
    try {
      train::load_checkpoint(path);
      FAIL("expected truncation error");
    } catch (const IoError& e) {
      CHECK(e.kind() == IoError::Kind::UnexpectedEof);
    }
  }
  SUBCASE("bad magic") {
    std::ofstream f(path, std::ios::binary);
    f << "NOPE some bytes";
    f.close();
    try {
      train::load_checkpoint(path);
      FAIL("expected magic error");
    } catch (const IoError& e) {
      CHECK(e.kind() == IoError::Kind::BadMagic);
    }
  }
  SUBCASE("config mismatch") {
    model::ModelConfig fdkn;
    fdkn.variant = model::Variant::Fdkn;
    try {
      train::load_checkpoint(path, fdkn);
      FAIL("expected mismatch error");
    } catch (const IoError& e) {
      CHECK(e.kind() == IoError::Kind::Mismatch);
      CHECK(std::string(e.what()).find("config") != std::string::npos);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint resume matches uninterrupted training bit for bit") {
  std::vector<ScenePair> scenes{train::generate_scene(31, 96, 96),
                                train::generate_scene(32, 96, 96)};
  model::ModelConfig cfg;
  std::string path = temp_path("dkn_test_resume.bin");

  // Uninterrupted: 6 iterations.
  auto full = model::build_model<float>(cfg, 55);
  AdamState full_adam;
  TrainConfig tc = small_config(6);
  train::train(full, full_adam, scenes, tc);

  // Interrupted: 4 iterations, checkpoint, reload, 2 more.
  auto part = model::build_model<float>(cfg, 55);
  AdamState part_adam;
  TrainConfig tc4 = small_config(4);
  train::train(part, part_adam, scenes, tc4);
  train::save_checkpoint(part, &part_adam, {}, path);
  auto resumed = train::load_checkpoint(path);
  REQUIRE(resumed.has_adam);
  train::train(resumed.model, resumed.adam, scenes, tc);

  auto pa = full.parameters();
  auto pb = resumed.model.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(bitwise_equal(pa[i]->value, pb[i]->value));
  }
  auto ba = full.buffers();
  auto bb = resumed.model.buffers();
  for (std::size_t i = 0; i < ba.size(); ++i) {
    CHECK(bitwise_equal(*ba[i].second, *bb[i].second));
  }
  std::filesystem::remove(path);
}

TEST_CASE("fdkn training runs over full crops") {
  std::vector<ScenePair> scenes{train::generate_scene(41, 96, 96)};
  model::ModelConfig cfg;
  cfg.variant = model::Variant::Fdkn;
  auto m = model::build_model<float>(cfg, 77);
  AdamState adam;
  TrainConfig tc;
  tc.iterations = 3;
  tc.crop = 48;
  tc.scale = 4;
  tc.seed = 9;
  auto result = train::train(m, adam, scenes, tc);
  CHECK(result.loss_history.size() == 3);
  for (double v : result.loss_history) CHECK(std::isfinite(v));
}

TEST_CASE("overfitting a single scene shrinks the training loss") {
  // 500 iterations on one 96x96 scene at 4x; the smoothed final per-pixel
  // L1 must drop below a quarter of the iteration-0 value.
  std::vector<ScenePair> scenes{train::generate_scene(51, 96, 96)};
  model::ModelConfig cfg;
  auto m = model::build_model<float>(cfg, 88);
  AdamState adam;
  TrainConfig tc;
  tc.iterations = 500;
  tc.pixels_per_iteration = 16;
  tc.scale = 4;
  tc.seed = 13;
  auto result = train::train(m, adam, scenes, tc);
  REQUIRE(result.loss_history.size() == 500);
  double first = result.loss_history.front();
  double last = 0.0;
  for (std::size_t i = 475; i < 500; ++i) last += result.loss_history[i];
  last /= 25.0;
  INFO("first=", first, " last25=", last, " ratio=", last / first);
  CHECK(last < 0.25 * first);
}
