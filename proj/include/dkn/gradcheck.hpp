#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dkn/tensor.hpp"

namespace dkn::gradcheck {

struct FdReport {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::int64_t checked = 0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central-difference verification of an analytic gradient, evaluated in
// 64-bit. Checks the listed coordinates (all of x when empty). The relative
// error denominator is floored at `floor` so near-zero gradients compare
// absolutely. Failures are reported, never thrown.
FdReport finite_difference_check(const std::string& name,
                                 const std::function<double(const Tensor64&)>& fn,
                                 const Tensor64& x, const Tensor64& analytic, double step,
                                 double tolerance, std::vector<std::int64_t> coords = {},
                                 double floor = 1e-3);

// The gradient-integrity suite: conv2d, batch norm, sigmoid, relu,
// elementwise mul, bilinear sampler (image and position gradients),
// deformable weighted average, L1 loss, and an end-to-end DKN patch.
// coords_per_param caps the sampled coordinates of the end-to-end check.
std::vector<FdReport> run_gradient_check_suite(std::uint64_t seed, int coords_per_param = 20);

bool all_passed(const std::vector<FdReport>& reports);

}  // namespace dkn::gradcheck
