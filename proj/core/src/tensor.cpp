#include "pidi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pidi {

std::string Shape::str() const {
  std::ostringstream os;
  os << n << "x" << c << "x" << h << "x" << w;
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor extent " + shape.str());
  }
  data_.assign(shape.numel(), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor extent " + shape.str());
  }
  if (data_.size() != shape.numel()) {
    throw ShapeError("tensor " + shape.str() + " needs " + std::to_string(shape.numel()) +
                     " elements, got " + std::to_string(data_.size()));
  }
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (shape.numel() != data_.size()) {
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  return BasicTensor(shape, data_);
}

template <typename T>
bool BasicTensor<T>::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

void ConvSpec::validate() const {
  if (kernel < 1) throw ShapeError("kernel size must be positive");
  if (stride < 1) throw ShapeError("stride must be positive");
  if (padding < 0) throw ShapeError("padding must be non-negative");
  if (dilation < 1) throw ShapeError("dilation must be positive");
  if (groups < 1) throw ShapeError("groups must be positive");
}

template <typename T>
BasicTensor<T> random_uniform(Shape shape, T lo, T hi, std::mt19937_64& rng) {
  BasicTensor<T> t(shape);
  std::uniform_real_distribution<T> dist(lo, hi);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

template <typename T>
BasicTensor<T> random_normal(Shape shape, T mean, T stddev, std::mt19937_64& rng) {
  BasicTensor<T> t(shape);
  std::normal_distribution<T> dist(mean, stddev);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

template <typename T>
T max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  }
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

template <typename T>
T max_abs(const BasicTensor<T>& a) {
  T m = 0;
  for (T v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template Tensor random_uniform(Shape, float, float, std::mt19937_64&);
template Tensor64 random_uniform(Shape, double, double, std::mt19937_64&);
template Tensor random_normal(Shape, float, float, std::mt19937_64&);
template Tensor64 random_normal(Shape, double, double, std::mt19937_64&);
template float max_abs_diff(const Tensor&, const Tensor&);
template double max_abs_diff(const Tensor64&, const Tensor64&);
template float max_abs(const Tensor&);
template double max_abs(const Tensor64&);

}  // namespace pidi
