#include "lsnet/tensor.hpp"

#include <sstream>

namespace lsnet {

std::string Shape::str() const {
  std::ostringstream os;
  os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ConfigError("negative tensor extent " + shape.str());
  }
  data_.assign(shape.numel(), fill);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ConfigError("negative tensor extent " + shape.str());
  }
  if (data_.size() != shape.numel()) {
    throw ConfigError("tensor buffer of " + std::to_string(data_.size()) +
                      " elements does not match shape " + shape.str());
  }
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape.numel() != data_.size()) {
    throw ConfigError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return Tensor(shape, data_);
}

template <typename T>
Tensor<T>& Tensor<T>::operator+=(const Tensor& other) {
  require_same_shape(shape_, other.shape_, "tensor +=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

template <typename T>
Tensor<T>& Tensor<T>::operator*=(T factor) {
  for (auto& v : data_) v *= factor;
  return *this;
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
T Tensor<T>::sum() const {
  T acc{0};
  for (T v : data_) acc += v;
  return acc;
}

template <typename T>
T Tensor<T>::max_abs() const {
  T m{0};
  for (T v : data_) m = std::max(m, std::abs(v));
  return m;
}

template <typename T>
void check_finite(const Tensor<T>& t, std::string_view op) {
  if (!t.all_finite()) throw NumericError("non-finite value produced by " + std::string(op));
}

void require_same_shape(const Shape& a, const Shape& b, std::string_view what) {
  if (!(a == b)) {
    throw ConfigError(std::string(what) + ": shape " + a.str() + " vs " + b.str());
  }
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "max_abs_diff");
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template class Tensor<float>;
template class Tensor<double>;
template void check_finite(const Tensor<float>&, std::string_view);
template void check_finite(const Tensor<double>&, std::string_view);
template float max_abs_diff(const Tensor<float>&, const Tensor<float>&);
template double max_abs_diff(const Tensor<double>&, const Tensor<double>&);

}  // namespace lsnet
