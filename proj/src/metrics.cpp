#include "dkn/metrics.hpp"

#include <cmath>

namespace dkn::metrics {

float rmse(const DepthImage& pred, const DepthImage& gt) {
  const Tensor& a = pred.samples;
  const Tensor& b = gt.samples;
  DKN_CHECK(a.same_shape(b), DimensionError, "rmse: shape mismatch ", a.shape_str(), " vs ",
            b.shape_str());
  DKN_CHECK(pred.value_scale == gt.value_scale, ConfigError, "rmse: value scale mismatch ",
            pred.value_scale, " vs ", gt.value_scale);
  auto masked_out = [&](const Tensor& mask, std::int64_t i) {
    return !mask.empty() && mask[i] == 0.0f;
  };
  if (!pred.mask.empty()) {
    DKN_CHECK(pred.mask.same_shape(a), DimensionError, "rmse: mask shape ",
              pred.mask.shape_str(), " vs image ", a.shape_str());
  }
  if (!gt.mask.empty()) {
    DKN_CHECK(gt.mask.same_shape(b), DimensionError, "rmse: mask shape ", gt.mask.shape_str(),
              " vs image ", b.shape_str());
  }
  double acc = 0.0;
  std::int64_t count = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    if (masked_out(pred.mask, i) || masked_out(gt.mask, i)) continue;
    double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
    count++;
  }
  DKN_CHECK(count > 0, ConfigError, "rmse: empty mask (no valid pixels)");
  return static_cast<float>(std::sqrt(acc / static_cast<double>(count))) * pred.value_scale;
}

DepthImage with_border_excluded(const DepthImage& img, int border) {
  DepthImage out = img;
  if (border <= 0) return out;
  const Tensor& s = img.samples;
  if (out.mask.empty()) out.mask = Tensor::full(1, 1, s.h(), s.w(), 1.0f);
  for (std::int64_t y = 0; y < s.h(); ++y) {
    for (std::int64_t x = 0; x < s.w(); ++x) {
      bool inside = y >= border && y < s.h() - border && x >= border && x < s.w() - border;
      if (!inside) out.mask.at(0, 0, y, x) = 0.0f;
    }
  }
  return out;
}

float EvalReport::average_rmse() const {
  DKN_CHECK(!entries.empty(), ConfigError, "EvalReport: no entries");
  double acc = 0.0;
  for (const auto& e : entries) acc += e.rmse;
  return static_cast<float>(acc / static_cast<double>(entries.size()));
}

double EvalReport::average_seconds() const {
  if (entries.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& e : entries) acc += e.seconds;
  return acc / static_cast<double>(entries.size());
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << "method: " << method << "\n";
  for (const auto& e : entries) {
    os << "  " << e.name << "  rmse=" << e.rmse << "  time=" << e.seconds << "s\n";
  }
  os << "average rmse: " << average_rmse() << "\n";
  os << "---\n";
  os << "method=" << method << "\n";
  for (const auto& e : entries) {
    os << "rmse." << e.name << "=" << e.rmse << "\n";
    os << "seconds." << e.name << "=" << e.seconds << "\n";
  }
  os << "rmse.average=" << average_rmse() << "\n";
  os << "seconds.average=" << average_seconds() << "\n";
  os << "images=" << entries.size() << "\n";
  return os.str();
}

}  // namespace dkn::metrics
