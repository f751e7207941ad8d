#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dkn/common.hpp"

namespace dkn {

// Dense N x C x H x W array in row-major (w fastest) order. All images,
// feature maps, kernel fields, offset fields and gradients use this one
// carrier; scalars are 1x1x1x1, per-channel vectors 1xCx1x1.
template <typename S>
class TensorT {
 public:
  using scalar_type = S;

  TensorT() : shape_{0, 0, 0, 0} {}

  TensorT(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w)
      : shape_{n, c, h, w} {
    DKN_CHECK(n >= 0 && c >= 0 && h >= 0 && w >= 0, DimensionError,
              "negative tensor dimension in ", shape_str());
    data_.assign(static_cast<std::size_t>(n * c * h * w), S(0));
  }

  static TensorT zeros(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return TensorT(n, c, h, w);
  }

  static TensorT full(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w, S value) {
    TensorT t(n, c, h, w);
    t.fill(value);
    return t;
  }

  static TensorT scalar(S value) { return full(1, 1, 1, 1, value); }

  static TensorT from_data(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w,
                           std::vector<S> data) {
    TensorT t;
    t.shape_ = {n, c, h, w};
    DKN_CHECK(static_cast<std::int64_t>(data.size()) == n * c * h * w, DimensionError,
              "data length ", data.size(), " does not match shape ", t.shape_str());
    t.data_ = std::move(data);
    return t;
  }

  std::int64_t n() const { return shape_[0]; }
  std::int64_t c() const { return shape_[1]; }
  std::int64_t h() const { return shape_[2]; }
  std::int64_t w() const { return shape_[3]; }
  const std::array<std::int64_t, 4>& shape() const { return shape_; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  S& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  S operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  std::int64_t index(std::int64_t in, std::int64_t ic, std::int64_t ih, std::int64_t iw) const {
    return ((in * shape_[1] + ic) * shape_[2] + ih) * shape_[3] + iw;
  }

  S& at(std::int64_t in, std::int64_t ic, std::int64_t ih, std::int64_t iw) {
    return data_[static_cast<std::size_t>(index(in, ic, ih, iw))];
  }
  S at(std::int64_t in, std::int64_t ic, std::int64_t ih, std::int64_t iw) const {
    return data_[static_cast<std::size_t>(index(in, ic, ih, iw))];
  }

  // Pointer to the start of row (n, c, h).
  S* row(std::int64_t in, std::int64_t ic, std::int64_t ih) {
    return data_.data() + index(in, ic, ih, 0);
  }
  const S* row(std::int64_t in, std::int64_t ic, std::int64_t ih) const {
    return data_.data() + index(in, ic, ih, 0);
  }

  // Pointer to the start of plane (n, c).
  S* plane(std::int64_t in, std::int64_t ic) { return row(in, ic, 0); }
  const S* plane(std::int64_t in, std::int64_t ic) const { return row(in, ic, 0); }

  void fill(S value) { std::fill(data_.begin(), data_.end(), value); }
  void zero() { fill(S(0)); }

  bool same_shape(const TensorT& other) const { return shape_ == other.shape_; }

  bool all_finite() const;

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(shape_[0], shape_[1], shape_[2], shape_[3]);
    for (std::int64_t i = 0; i < size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  std::string shape_str() const {
    return detail::cat(shape_[0], "x", shape_[1], "x", shape_[2], "x", shape_[3]);
  }

 private:
  std::array<std::int64_t, 4> shape_;
  std::vector<S> data_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename S>
bool bitwise_equal(const TensorT<S>& a, const TensorT<S>& b);

template <typename S>
S max_abs_diff(const TensorT<S>& a, const TensorT<S>& b);

extern template class TensorT<float>;
extern template class TensorT<double>;

}  // namespace dkn
