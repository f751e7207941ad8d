#include <doctest.h>

#include <cmath>

#include "dkn/gradcheck.hpp"
#include "dkn/ops.hpp"
#include "dkn/threading.hpp"
#include "oracles.hpp"

using namespace dkn;

namespace {

Tensor run_conv(const Tensor& in, const Tensor& w, const Tensor& b, int stride, int pad) {
  Graph g;
  return ops::conv2d(g.leaf(in), g.leaf(w), g.leaf(b), stride, pad).tensor();
}

}  // namespace

TEST_CASE("conv2d reproduces the first feature-extraction layer geometry") {
  for (std::int64_t d : {1, 3}) {
    oracle::TestRng rng(11 + d);
    Tensor in = oracle::random_tensor<float>(1, d, 51, 51, rng);
    Tensor w = oracle::random_tensor<float>(32, d, 7, 7, rng);
    Tensor b(1, 32, 1, 1);
    Tensor out = run_conv(in, w, b, 1, 0);
    CHECK(out.shape_str() == "1x32x45x45");
  }
}

TEST_CASE("conv2d 1x1 identity kernel") {
  oracle::TestRng rng(12);
  Tensor in = oracle::random_tensor<float>(1, 1, 5, 6, rng);
  Tensor w = Tensor::full(1, 1, 1, 1, 1.0f);
  Tensor b(1, 1, 1, 1);
  Tensor out = run_conv(in, w, b, 1, 0);
  CHECK(bitwise_equal(out, in));
}

TEST_CASE("conv2d hand-computed sliding windows") {
  Tensor in = Tensor::from_data(1, 1, 3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor w = Tensor::full(1, 1, 2, 2, 1.0f);
  Tensor b(1, 1, 1, 1);
  Tensor out = run_conv(in, w, b, 1, 0);
  // Frozen from the brute-force loop oracle.
  Tensor expected = oracle::naive_conv2d(in, w, b, 1, 0);
  CHECK(out.at(0, 0, 0, 0) == 12.0f);
  CHECK(out.at(0, 0, 0, 1) == 16.0f);
  CHECK(out.at(0, 0, 1, 0) == 24.0f);
  CHECK(out.at(0, 0, 1, 1) == 28.0f);
  CHECK(max_abs_diff(out, expected) == 0.0f);
}

TEST_CASE("conv2d agrees with the naive loop oracle on random shapes") {
  oracle::TestRng rng(13);
  for (int trial = 0; trial < 24; ++trial) {
    std::int64_t n = 1 + rng.index(2);
    std::int64_t ic = 1 + rng.index(8);
    std::int64_t oc = 1 + rng.index(6);
    std::int64_t kh = 1 + rng.index(3);
    std::int64_t kw = 1 + rng.index(3);
    int stride = 1 + static_cast<int>(rng.index(2));
    int pad = static_cast<int>(rng.index(3));
    // Geometry must be exact for the chosen stride.
    std::int64_t oh = 1 + rng.index(6);
    std::int64_t ow = 1 + rng.index(6);
    std::int64_t h = (oh - 1) * stride + kh - 2 * pad;
    std::int64_t w = (ow - 1) * stride + kw - 2 * pad;
    if (h < 1 || w < 1 || h > 16 || w > 16) continue;
    Tensor in = oracle::random_tensor<float>(n, ic, h, w, rng);
    Tensor wt = oracle::random_tensor<float>(oc, ic, kh, kw, rng);
    Tensor b = oracle::random_tensor<float>(1, oc, 1, 1, rng);
    Tensor got = run_conv(in, wt, b, stride, pad);
    Tensor want = oracle::naive_conv2d(in, wt, b, stride, pad);
    REQUIRE(got.same_shape(want));
    for (std::int64_t i = 0; i < got.size(); ++i) {
      CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-5));
    }
  }
}

TEST_CASE("conv2d error paths") {
  Graph g;
  Value in = g.leaf(Tensor(1, 2, 6, 6));
  SUBCASE("channel mismatch is a dimension error") {
    CHECK_THROWS_AS(ops::conv2d(in, g.leaf(Tensor(4, 3, 3, 3)), 1, 0), DimensionError);
  }
  SUBCASE("non-integer output size is a configuration error") {
    CHECK_THROWS_AS(ops::conv2d(in, g.leaf(Tensor(4, 2, 3, 3)), 2, 0), ConfigError);
  }
  SUBCASE("kernel larger than input is a configuration error") {
    CHECK_THROWS_AS(ops::conv2d(in, g.leaf(Tensor(4, 2, 7, 7)), 1, 0), ConfigError);
  }
  SUBCASE("bad bias length is a dimension error") {
    CHECK_THROWS_AS(ops::conv2d(in, g.leaf(Tensor(4, 2, 3, 3)), g.leaf(Tensor(1, 3, 1, 1)), 1, 0),
                    DimensionError);
  }
}

TEST_CASE("relu examples") {
  Graph g;
  Tensor x = Tensor::from_data(1, 1, 1, 3, {-1.0f, 0.0f, 2.0f});
  Tensor out = ops::relu(g.leaf(x)).tensor();
  CHECK(out[0] == 0.0f);
  CHECK(out[1] == 0.0f);
  CHECK(out[2] == 2.0f);

  Tensor neg = Tensor::full(1, 2, 3, 3, -0.5f);
  Tensor zeros = ops::relu(g.leaf(neg)).tensor();
  for (std::int64_t i = 0; i < zeros.size(); ++i) CHECK(zeros[i] == 0.0f);
}

TEST_CASE("relu gradient of sum at [-1, 2] is [0, 1]") {
  Graph g;
  Value x = g.leaf(Tensor::from_data(1, 1, 1, 2, {-1.0f, 2.0f}), true);
  g.backward(ops::sum(ops::relu(x)));
  CHECK(x.node()->grad[0] == 0.0f);
  CHECK(x.node()->grad[1] == 1.0f);
}

TEST_CASE("sigmoid examples") {
  Graph g;
  Tensor x = Tensor::from_data(1, 1, 1, 3, {0.0f, 100.0f, -3.0f});
  Tensor out = ops::sigmoid(g.leaf(x)).tensor();
  CHECK(out[0] == 0.5f);
  CHECK(out[1] == doctest::Approx(1.0f).epsilon(1e-6));
  CHECK(out[2] > 0.0f);
  CHECK(out[2] < 1.0f);
}

TEST_CASE("sigmoid gradient at 0 is 0.25") {
  Graph g;
  Value x = g.leaf(Tensor::scalar(0.0f), true);
  g.backward(ops::sum(ops::sigmoid(x)));
  CHECK(x.node()->grad[0] == doctest::Approx(0.25f).epsilon(1e-6));
}

TEST_CASE("batch norm normalizes per channel in training mode") {
  oracle::TestRng rng(21);
  Tensor x = oracle::random_tensor<float>(2, 3, 5, 7, rng, -4.0, 3.0);
  Graph g;
  ops::BatchNormStats<float> stats;
  stats.init(3);
  Tensor scale = Tensor::full(1, 3, 1, 1, 1.0f);
  Tensor shift(1, 3, 1, 1);
  Tensor out = ops::batch_norm(g.leaf(x), g.leaf(scale), g.leaf(shift), stats, true).tensor();
  std::int64_t m = out.n() * out.h() * out.w();
  for (std::int64_t c = 0; c < 3; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::int64_t n = 0; n < out.n(); ++n) {
      const float* p = out.plane(n, c);
      for (std::int64_t i = 0; i < out.h() * out.w(); ++i) mean += p[i];
    }
    mean /= static_cast<double>(m);
    for (std::int64_t n = 0; n < out.n(); ++n) {
      const float* p = out.plane(n, c);
      for (std::int64_t i = 0; i < out.h() * out.w(); ++i) {
        var += (p[i] - mean) * (p[i] - mean);
      }
    }
    var /= static_cast<double>(m);
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-4);
  }
  // Running stats moved toward the batch stats.
  CHECK(stats.mean[0] != 0.0f);
}

TEST_CASE("batch norm eval mode with unit running stats is the identity") {
  oracle::TestRng rng(22);
  Tensor x = oracle::random_tensor<float>(1, 2, 4, 4, rng);
  Graph g;
  ops::BatchNormStats<float> stats;
  stats.init(2);  // mean 0, var 1
  Tensor scale = Tensor::full(1, 2, 1, 1, 1.0f);
  Tensor shift(1, 2, 1, 1);
  Tensor out = ops::batch_norm(g.leaf(x), g.leaf(scale), g.leaf(shift), stats, false).tensor();
  CHECK(max_abs_diff(out, x) < 1e-5f);
}

TEST_CASE("batch norm gradient matches finite differences at 1e-5") {
  // 64-bit check on a 1x2x4x4 random tensor.
  oracle::TestRng rng(23);
  Tensor64 x = oracle::random_tensor<double>(1, 2, 4, 4, rng);
  Tensor64 scale = oracle::random_tensor<double>(1, 2, 1, 1, rng, 0.5, 1.5);
  Tensor64 shift = oracle::random_tensor<double>(1, 2, 1, 1, rng, -0.5, 0.5);
  Tensor64 proj = oracle::random_tensor<double>(1, 2, 4, 4, rng, 0.1, 1.0);
  auto loss = [&](GraphT<double>& g, ValueT<double> xv) {
    ops::BatchNormStats<double> stats;
    stats.init(2);
    ValueT<double> y =
        ops::batch_norm(xv, g.leaf(scale), g.leaf(shift), stats, true);
    return ops::sum(ops::mul(y, g.leaf(proj)));
  };
  auto fn = [&](const Tensor64& probe) {
    GraphT<double> g;
    return loss(g, g.leaf(probe)).tensor()[0];
  };
  GraphT<double> g;
  ValueT<double> xv = g.leaf(x, true);
  g.backward(loss(g, xv));
  auto report =
      gradcheck::finite_difference_check("bn", fn, x, xv.node()->grad, 1e-5, 1e-5);
  CHECK(report.pass);
  CHECK(report.max_rel_error < 1e-5);
}

TEST_CASE("batch norm error paths") {
  Graph g;
  ops::BatchNormStats<float> stats;
  stats.init(2);
  Tensor scale = Tensor::full(1, 2, 1, 1, 1.0f);
  Tensor shift(1, 2, 1, 1);
  SUBCASE("zero spatial extent") {
    CHECK_THROWS_AS(
        ops::batch_norm(g.leaf(Tensor(1, 2, 0, 4)), g.leaf(scale), g.leaf(shift), stats, true),
        ConfigError);
  }
  SUBCASE("scale length mismatch") {
    CHECK_THROWS_AS(ops::batch_norm(g.leaf(Tensor(1, 3, 4, 4)), g.leaf(scale), g.leaf(shift),
                                    stats, true),
                    DimensionError);
  }
}

TEST_CASE("elementwise mul examples") {
  oracle::TestRng rng(24);
  Tensor a = oracle::random_tensor<float>(1, 2, 3, 3, rng);
  Graph g;
  Tensor ones = Tensor::full(1, 2, 3, 3, 1.0f);
  CHECK(bitwise_equal(ops::mul(g.leaf(a), g.leaf(ones)).tensor(), a));
  Tensor zeros(1, 2, 3, 3);
  Tensor z = ops::mul(g.leaf(a), g.leaf(zeros)).tensor();
  for (std::int64_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0f);
  CHECK_THROWS_AS(ops::mul(g.leaf(a), g.leaf(Tensor(1, 2, 3, 4))), DimensionError);
}

TEST_CASE("mul gradient w.r.t. a equals b") {
  oracle::TestRng rng(25);
  Tensor a = oracle::random_tensor<float>(1, 1, 3, 3, rng);
  Tensor b = oracle::random_tensor<float>(1, 1, 3, 3, rng);
  Graph g;
  Value av = g.leaf(a, true);
  g.backward(ops::sum(ops::mul(av, g.leaf(b))));
  CHECK(max_abs_diff(av.node()->grad, b) == 0.0f);
}

TEST_CASE("pointwise ops touch only their own coordinates") {
  oracle::TestRng rng(26);
  Tensor x = oracle::random_tensor<float>(1, 2, 4, 4, rng);
  Tensor y = x;
  std::int64_t target = 13;
  y[target] += 0.5f;
  Graph g;
  Tensor rx = ops::sigmoid(g.leaf(x)).tensor();
  Tensor ry = ops::sigmoid(g.leaf(y)).tensor();
  for (std::int64_t i = 0; i < rx.size(); ++i) {
    if (i == target) {
      CHECK(rx[i] != ry[i]);
    } else {
      CHECK(rx[i] == ry[i]);
    }
  }
}

TEST_CASE("operations are deterministic for any thread count") {
  oracle::TestRng rng(27);
  Tensor in = oracle::random_tensor<float>(2, 4, 16, 16, rng);
  Tensor w = oracle::random_tensor<float>(8, 4, 3, 3, rng);
  Tensor b = oracle::random_tensor<float>(1, 8, 1, 1, rng);
  int saved = threading::thread_count();
  threading::set_thread_count(1);
  Tensor serial = run_conv(in, w, b, 1, 1);
  threading::set_thread_count(2);
  Tensor parallel = run_conv(in, w, b, 1, 1);
  threading::set_thread_count(saved);
  CHECK(bitwise_equal(serial, parallel));
}

TEST_CASE("channel mean subtraction and L1 normalization") {
  oracle::TestRng rng(28);
  Tensor x = oracle::random_tensor<float>(2, 9, 3, 3, rng, 0.05, 1.0);
  Graph g;
  Tensor centered = ops::subtract_channel_mean(g.leaf(x)).tensor();
  Tensor normalized = ops::l1_normalize_channels(g.leaf(x)).tensor();
  for (std::int64_t n = 0; n < 2; ++n) {
    for (std::int64_t i = 0; i < 9; ++i) {
      float sum_c = 0.0f, sum_n = 0.0f;
      for (std::int64_t c = 0; c < 9; ++c) {
        sum_c += centered.plane(n, c)[i];
        sum_n += normalized.plane(n, c)[i];
        CHECK(normalized.plane(n, c)[i] >= 0.0f);
      }
      CHECK(std::abs(sum_c) < 1e-5f);
      CHECK(std::abs(sum_n - 1.0f) < 1e-5f);
    }
  }
}

TEST_CASE("gradient check suite passes") {
  auto reports = gradcheck::run_gradient_check_suite(515, 20);
  for (const auto& r : reports) {
    INFO(r.name, " max_rel=", r.max_rel_error, " checked=", r.checked);
    CHECK(r.pass);
  }
  CHECK(gradcheck::all_passed(reports));
  // The end-to-end DKN entry must be present and cover every parameter.
  bool found = false;
  for (const auto& r : reports) {
    if (r.name == "dkn_patch_end_to_end") {
      found = true;
      CHECK(r.checked >= 40 * 10);
      CHECK(r.max_rel_error < 1e-3);
    }
  }
  CHECK(found);
}

TEST_CASE("finite difference check on trivial functions") {
  oracle::TestRng rng(29);
  Tensor64 x = oracle::random_tensor<double>(1, 1, 3, 3, rng);
  // Sum of squares: gradient 2x.
  auto fn = [](const Tensor64& t) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < t.size(); ++i) acc += t[i] * t[i];
    return acc;
  };
  Tensor64 analytic(1, 1, 3, 3);
  for (std::int64_t i = 0; i < x.size(); ++i) analytic[i] = 2.0 * x[i];
  auto report = gradcheck::finite_difference_check("sumsq", fn, x, analytic, 1e-5, 1e-6);
  CHECK(report.pass);

  // A deliberately wrong gradient is reported, not thrown.
  analytic[0] += 1.0;
  auto bad = gradcheck::finite_difference_check("bad", fn, x, analytic, 1e-5, 1e-6);
  CHECK_FALSE(bad.pass);
}
