#include "rosslink/autodiff/tensor.hpp"

#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rosslink::ad {

std::int64_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s) : shape(std::move(s)) {
  for (auto e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_string(shape));
  }
  data = Vector::Zero(numel_of(shape));
}

Tensor::Tensor(Shape s, Vector values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != numel_of(shape)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_string(shape));
  }
}

Tensor::Tensor(Shape s, std::initializer_list<Scalar> values)
    : Tensor(std::move(s), Eigen::Map<const Vector>(values.begin(), static_cast<Eigen::Index>(values.size()))) {}

Tensor Tensor::scalar(Scalar v) {
  Tensor t{Shape{}};
  t.data[0] = v;
  return t;
}

Tensor Tensor::from_matrix(const Matrix& m) {
  Tensor t{Shape{m.rows(), m.cols()}};
  MatrixMap(t.data.data(), m.rows(), m.cols()) = m;
  return t;
}

std::int64_t Tensor::rows() const {
  if (shape.size() == 2) return shape[0];
  if (shape.size() == 1) return 1;
  throw std::invalid_argument("rows() needs rank 1 or 2, got " + shape_string(shape));
}

std::int64_t Tensor::cols() const {
  if (shape.size() == 2) return shape[1];
  if (shape.size() == 1) return shape[0];
  throw std::invalid_argument("cols() needs rank 1 or 2, got " + shape_string(shape));
}

MatrixMap Tensor::matrix() { return MatrixMap(data.data(), rows(), cols()); }

ConstMatrixMap Tensor::matrix() const { return ConstMatrixMap(data.data(), rows(), cols()); }

Vector& Tensor::ensure_grad() {
  if (!grad || grad->size() != data.size()) grad = Vector::Zero(data.size());
  return *grad;
}

bool bit_identical(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  return std::memcmp(a.data.data(), b.data.data(), sizeof(Scalar) * static_cast<std::size_t>(a.data.size())) == 0;
}

}  // namespace rosslink::ad
