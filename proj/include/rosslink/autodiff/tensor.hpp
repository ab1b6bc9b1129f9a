#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

namespace rosslink::ad {

using Scalar = double;
using Shape = std::vector<std::int64_t>;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

std::int64_t numel_of(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
struct Tensor {
  Shape shape;
  Vector data;
  std::optional<Vector> grad;

  Tensor() = default;
  explicit Tensor(Shape s);
  Tensor(Shape s, Vector values);
  Tensor(Shape s, std::initializer_list<Scalar> values);

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor scalar(Scalar v);
  static Tensor from_matrix(const Matrix& m);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  std::int64_t rows() const;
  std::int64_t cols() const;

  /// Views a rank-2 tensor as a matrix. Rank-1 tensors read as a single row.
  MatrixMap matrix();
  ConstMatrixMap matrix() const;

  Vector& ensure_grad();
  void clear_grad() { grad.reset(); }
  bool all_finite() const { return data.allFinite(); }
};

bool bit_identical(const Tensor& a, const Tensor& b);

}  // namespace rosslink::ad
