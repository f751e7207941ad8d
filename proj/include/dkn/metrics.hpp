#pragma once

#include <string>
#include <vector>

#include "dkn/tensor.hpp"

namespace dkn::metrics {

// A depth map with the physical scale used for error reporting and an
// optional validity mask (non-zero = included in metrics).
struct DepthImage {
  Tensor samples;  // 1 x 1 x H x W
  float value_scale = 1.0f;
  Tensor mask;  // 1 x 1 x H x W of 0/1; empty means all valid

  static DepthImage of(Tensor t, float scale = 1.0f) {
    DepthImage d;
    d.samples = std::move(t);
    d.value_scale = scale;
    return d;
  }
};

// sqrt(mean squared difference over masked-in pixels) * value_scale.
// Requires equal dims and equal value scales; an all-invalid mask is an
// error.
float rmse(const DepthImage& pred, const DepthImage& gt);

// Zeroes the mask within `border` pixels of each edge.
DepthImage with_border_excluded(const DepthImage& img, int border);

struct EvalEntry {
  std::string name;
  float rmse = 0.0f;
  double seconds = 0.0;
};

struct EvalReport {
  std::string method;
  std::vector<EvalEntry> entries;

  float average_rmse() const;
  double average_seconds() const;
  // Line-oriented text plus a machine-readable key=value block.
  std::string to_text() const;
};

}  // namespace dkn::metrics
