#include "dkn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dkn {

template <typename S>
bool TensorT<S>::all_finite() const {
  for (std::int64_t i = 0; i < size(); ++i) {
    if (!std::isfinite(data_[i])) return false;
  }
  return true;
}

template <typename S>
bool bitwise_equal(const TensorT<S>& a, const TensorT<S>& b) {
  if (!a.same_shape(b)) return false;
  if (a.size() == 0) return true;
  return std::memcmp(a.data(), b.data(), sizeof(S) * static_cast<std::size_t>(a.size())) == 0;
}

template <typename S>
S max_abs_diff(const TensorT<S>& a, const TensorT<S>& b) {
  DKN_CHECK(a.same_shape(b), DimensionError, "max_abs_diff: shape mismatch ", a.shape_str(),
            " vs ", b.shape_str());
  S worst = S(0);
  for (std::int64_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

template class TensorT<float>;
template class TensorT<double>;
template bool bitwise_equal<float>(const TensorT<float>&, const TensorT<float>&);
template bool bitwise_equal<double>(const TensorT<double>&, const TensorT<double>&);
template float max_abs_diff<float>(const TensorT<float>&, const TensorT<float>&);
template double max_abs_diff<double>(const TensorT<double>&, const TensorT<double>&);

}  // namespace dkn
