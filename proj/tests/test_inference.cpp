#include <doctest.h>

#include <cmath>
#include <set>

#include "dkn/filtering.hpp"
#include "dkn/inference.hpp"
#include "dkn/model.hpp"
#include "dkn/ops.hpp"
#include "oracles.hpp"

using namespace dkn;
using model::Model;
using model::ModelConfig;
using model::Variant;

TEST_CASE("pixel_unshuffle on the documented ramp") {
  Tensor x(1, 1, 4, 4);
  for (std::int64_t i = 0; i < 16; ++i) x[i] = static_cast<float>(i);
  Tensor u = infer::pixel_unshuffle(x, 4);
  CHECK(u.shape_str() == "1x16x1x1");
  // channel dy*4+dx holds input pixel (dy, dx)
  for (std::int64_t c = 0; c < 16; ++c) CHECK(u[c] == static_cast<float>(c));
}

TEST_CASE("pixel_unshuffle with stride 1 is the identity") {
  oracle::TestRng rng(70);
  Tensor x = oracle::random_tensor<float>(2, 3, 5, 5, rng);
  CHECK(bitwise_equal(infer::pixel_unshuffle(x, 1), x));
  CHECK(bitwise_equal(infer::pixel_shuffle(x, 1), x));
}

TEST_CASE("pixel shuffle and unshuffle are mutually inverse and preserve values") {
  oracle::TestRng rng(71);
  Tensor x = oracle::random_tensor<float>(1, 3, 8, 8, rng);
  Tensor round = infer::pixel_shuffle(infer::pixel_unshuffle(x, 2), 2);
  CHECK(bitwise_equal(round, x));

  Tensor u = infer::pixel_unshuffle(x, 4);
  std::multiset<float> before(x.data(), x.data() + x.size());
  std::multiset<float> after(u.data(), u.data() + u.size());
  CHECK(before == after);

  CHECK_THROWS_AS(infer::pixel_unshuffle(Tensor(1, 1, 6, 6), 4), DimensionError);
  CHECK_THROWS_AS(infer::pixel_shuffle(Tensor(1, 6, 4, 4), 4), DimensionError);
}

TEST_CASE("shift-and-stitch equals per-pixel patch evaluation in 16 passes") {
  ModelConfig cfg;
  auto m = model::build_model<float>(cfg, 101);
  // Give the offset heads structure so the equivalence exercises them.
  oracle::TestRng rng(72);
  for (auto* head : {&m.dkn().depth.offset_head, &m.dkn().guide.offset_head}) {
    for (std::int64_t i = 0; i < head->weight.value.size(); ++i) {
      head->weight.value[i] = static_cast<float>(rng.uniform(-0.05, 0.05));
    }
  }
  std::int64_t h = 24, w = 24;
  Tensor f = oracle::random_tensor<float>(1, 1, h, w, rng, 0.0, 1.0);
  Tensor gd = oracle::random_tensor<float>(1, 3, h, w, rng, 0.0, 1.0);

  m.forward_count = 0;
  infer::StitchedFields<float> fields = infer::shift_and_stitch(m, gd, f);
  CHECK(m.forward_count == 16);
  CHECK(fields.kernels.shape_str() == "1x9x24x24");
  CHECK(fields.offsets.shape_str() == "1x18x24x24");

  Tensor padded_f = ops::pad_replicate(f, 25);
  Tensor padded_g = ops::pad_replicate(gd, 25);
  float worst = 0.0f;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      Graph g;
      Value fp = g.leaf(ops::crop(padded_f, y, x, 51, 51));
      Value gp = g.leaf(ops::crop(padded_g, y, x, 51, 51));
      auto features = model::extract_features(g, m, gp, fp);
      Tensor k = model::regress_weights(g, m, features).tensor();
      Tensor o = model::regress_offsets(g, m, features).tensor();
      for (std::int64_t c = 0; c < 9; ++c) {
        worst = std::max(worst, std::abs(k.plane(0, c)[0] - fields.kernels.at(0, c, y, x)));
      }
      for (std::int64_t c = 0; c < 18; ++c) {
        worst = std::max(worst, std::abs(o.plane(0, c)[0] - fields.offsets.at(0, c, y, x)));
      }
    }
  }
  CHECK(worst < 1e-5f);
}

TEST_CASE("stitched field size matches the target for non-multiple-of-4 sizes") {
  ModelConfig cfg;
  auto m = model::build_model<float>(cfg, 103);
  oracle::TestRng rng(73);
  Tensor f = oracle::random_tensor<float>(1, 1, 21, 26, rng, 0.0, 1.0);
  Tensor gd = oracle::random_tensor<float>(1, 3, 21, 26, rng, 0.0, 1.0);
  auto fields = infer::shift_and_stitch(m, gd, f);
  CHECK(fields.kernels.shape_str() == "1x9x21x26");
  CHECK(fields.offsets.shape_str() == "1x18x21x26");
}

TEST_CASE("upsample with a zeroed weight head reproduces bicubic exactly") {
  ModelConfig cfg;  // residual DKN
  auto m = model::build_model<float>(cfg, 107);
  for (auto* head : {&m.dkn().depth.weight_head, &m.dkn().guide.weight_head}) {
    head->weight.value.zero();
    head->bias.value.zero();
  }
  oracle::TestRng rng(74);
  infer::UpsampleRequest req;
  req.lr_depth = oracle::random_tensor<float>(1, 1, 8, 8, rng, 0.0, 1.0);
  req.hr_guidance = oracle::random_tensor<float>(1, 3, 32, 32, rng, 0.0, 1.0);
  req.model = &m;
  Tensor out = infer::upsample(req);
  CHECK(out.shape_str() == "1x1x32x32");
  Tensor bicubic = filtering::bicubic_resize(req.lr_depth, 32, 32);
  CHECK(bitwise_equal(out, bicubic));
}

TEST_CASE("upsample requires guidance for guided models") {
  ModelConfig cfg;
  auto m = model::build_model<float>(cfg, 109);
  infer::UpsampleRequest req;
  req.lr_depth = Tensor::full(1, 1, 8, 8, 0.5f);
  req.model = &m;
  try {
    infer::upsample(req);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("guidance required") != std::string::npos);
  }
}

TEST_CASE("upsample is deterministic") {
  ModelConfig cfg;
  auto m = model::build_model<float>(cfg, 113);
  oracle::TestRng rng(75);
  infer::UpsampleRequest req;
  req.lr_depth = oracle::random_tensor<float>(1, 1, 6, 6, rng, 0.0, 1.0);
  req.hr_guidance = oracle::random_tensor<float>(1, 3, 24, 24, rng, 0.0, 1.0);
  req.model = &m;
  Tensor a = infer::upsample(req);
  Tensor b = infer::upsample(req);
  CHECK(bitwise_equal(a, b));
}

TEST_CASE("interior pixels do not depend on the padding mode") {
  ModelConfig cfg;
  auto m = model::build_model<float>(cfg, 127);
  oracle::TestRng rng(76);
  std::int64_t h = 64, w = 64;
  Tensor f = oracle::random_tensor<float>(1, 1, h, w, rng, 0.0, 1.0);
  Tensor gd = oracle::random_tensor<float>(1, 3, h, w, rng, 0.0, 1.0);
  auto rep = infer::shift_and_stitch(m, gd, f, infer::PadMode::Replicate);
  auto zero = infer::shift_and_stitch(m, gd, f, infer::PadMode::Zero);
  bool border_differs = false;
  for (std::int64_t c = 0; c < 9; ++c) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        float d = std::abs(rep.kernels.at(0, c, y, x) - zero.kernels.at(0, c, y, x));
        bool interior = y >= 26 && y < h - 26 && x >= 26 && x < w - 26;
        if (interior) {
          CHECK(d == 0.0f);
        } else {
          border_differs |= d != 0.0f;
        }
      }
    }
  }
  CHECK(border_differs);  // the padding choice does matter at the border
}

TEST_CASE("full-image inference equals per-pixel patch evaluation") {
  ModelConfig cfg;
  auto m = model::build_model<float>(cfg, 131);
  oracle::TestRng rng(77);
  for (auto* head : {&m.dkn().depth.offset_head, &m.dkn().guide.offset_head}) {
    for (std::int64_t i = 0; i < head->bias.value.size(); ++i) {
      head->bias.value[i] = static_cast<float>(rng.uniform(-0.8, 0.8));
    }
  }
  infer::UpsampleRequest req;
  req.lr_depth = oracle::random_tensor<float>(1, 1, 4, 4, rng, 0.0, 1.0);
  req.hr_guidance = oracle::random_tensor<float>(1, 3, 16, 16, rng, 0.0, 1.0);
  req.model = &m;
  Tensor out = infer::upsample(req);

  Tensor f_hr = filtering::bicubic_resize(req.lr_depth, 16, 16);
  Tensor padded_f = ops::pad_replicate(f_hr, 25);
  Tensor padded_g = ops::pad_replicate(req.hr_guidance, 25);
  float worst = 0.0f;
  for (std::int64_t y = 0; y < 16; ++y) {
    for (std::int64_t x = 0; x < 16; ++x) {
      Graph g;
      Value fp = g.leaf(ops::crop(padded_f, y, x, 51, 51));
      Value gp = g.leaf(ops::crop(padded_g, y, x, 51, 51));
      float pred = model::forward_patch(g, m, gp, fp).tensor()[0];
      worst = std::max(worst, std::abs(pred - out.at(0, 0, y, x)));
    }
  }
  CHECK(worst < 1e-5f);
}

TEST_CASE("fdkn upsampling handles padding-and-crop for odd sizes") {
  ModelConfig cfg;
  cfg.variant = Variant::Fdkn;
  auto m = model::build_model<float>(cfg, 137);
  oracle::TestRng rng(78);
  Tensor f = oracle::random_tensor<float>(1, 1, 18, 23, rng, 0.0, 1.0);
  Tensor gd = oracle::random_tensor<float>(1, 3, 18, 23, rng, 0.0, 1.0);
  auto fields = infer::fdkn_fields(m, gd, f);
  CHECK(fields.kernels.shape_str() == "1x9x18x23");
  CHECK(fields.offsets.shape_str() == "1x18x18x23");

  infer::UpsampleRequest req;
  req.lr_depth = oracle::random_tensor<float>(1, 1, 5, 5, rng, 0.0, 1.0);
  req.hr_guidance = oracle::random_tensor<float>(1, 3, 20, 20, rng, 0.0, 1.0);
  req.model = &m;
  Tensor out = infer::upsample(req);
  CHECK(out.shape_str() == "1x1x20x20");
  CHECK(out.all_finite());
}

TEST_CASE("wrong model variant is rejected") {
  ModelConfig cfg;
  auto dkn = model::build_model<float>(cfg, 139);
  cfg.variant = Variant::Fdkn;
  auto fdkn = model::build_model<float>(cfg, 139);
  Tensor f = Tensor::full(1, 1, 8, 8, 0.5f);
  Tensor gd = Tensor::full(1, 3, 8, 8, 0.5f);
  CHECK_THROWS_AS(infer::shift_and_stitch(fdkn, gd, f), ContractError);
  CHECK_THROWS_AS(infer::fdkn_fields(dkn, gd, f), ContractError);
}
