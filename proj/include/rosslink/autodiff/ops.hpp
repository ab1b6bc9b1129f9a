#pragma once

#include "rosslink/autodiff/tape.hpp"

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rosslink::ad {

/// Thrown when operand shapes do not conform to an op's rule.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when an op would produce NaN or infinity.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class OpKind {
  matmul,
  add,
  mul,
  sub,
  div,
  conv1d,
  conv2d,
  layernorm,
  softmax,
  log,
  exp,
  gelu,
  relu,
  sigmoid,
  gather,
  concat,
  slice,
  transpose,
  mean,
  sum,
  square,
  masked_fill,
  sqrt,
  expand,
  reshape,
};

std::string_view op_name(OpKind kind);
std::vector<OpKind> all_op_kinds();

// Elementwise binary ops take equal shapes, or one rank-0 operand.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator*(Scalar s, Var a);
Var operator+(Var a, Scalar s);
Var operator-(Scalar s, Var a);

/// (m,k) x (k,n) -> (m,n)
Var matmul(Var a, Var b);
/// rank-2 transpose
Var transpose(Var a);

/// x: (T, Cin), w: (K, Cin, Cout), optional bias (Cout). Zero "same" padding:
/// output length ceil(T / stride).
Var conv1d(Var x, Var w, std::optional<Var> bias, int stride);
/// x: (H, W, Cin), w: (KH, KW, Cin, Cout), optional bias (Cout). Zero "same" padding.
Var conv2d(Var x, Var w, std::optional<Var> bias, int stride_h, int stride_w);

/// Normalizes over the last axis, then scales by gamma and shifts by beta (both last-axis sized).
Var layernorm(Var x, Var gamma, Var beta, Scalar eps = 1e-5);

/// Softmax over the last axis. `additive_mask`, when given, has x's shape and holds
/// 0 or -inf; masked entries come out exactly 0.
Var softmax(Var x, const Tensor* additive_mask = nullptr);

/// Natural log. A positive `floor` clamps inputs below it (zero gradient there).
Var log(Var x, Scalar floor = 0.0);
Var exp(Var x);
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Var gelu(Var x);
Var relu(Var x);
Var sigmoid(Var x);
Var square(Var x);
Var sqrt(Var x);

/// Rows of a (V, d) table picked by ids -> (n, d).
Var gather(Var table, std::span<const int> ids);
Var concat(std::span<const Var> parts, int axis);
Var slice(Var x, int axis, std::int64_t begin, std::int64_t end);

/// Reductions. axis = -1 reduces the last axis; std::nullopt reduces everything to rank 0.
Var sum(Var x, std::optional<int> axis = std::nullopt);
Var mean(Var x, std::optional<int> axis = std::nullopt);

/// Entries where mask != 0 are replaced by `value` (must be finite).
Var masked_fill(Var x, const Tensor& mask, Scalar value);

/// Replicates x so that its shape becomes `target`; x's shape must be a suffix of target.
Var expand(Var x, Shape target);
Var reshape(Var x, Shape target);

/// Generic entry point used by tooling that iterates over op kinds.
struct OpAttrs {
  int stride = 1;
  int stride_w = 1;
  int axis = -1;
  bool reduce_all = true;
  std::int64_t begin = 0;
  std::int64_t end = 0;
  Scalar value = 0.0;
  Scalar floor = 0.0;
  std::vector<int> ids;
  Shape shape;
  const Tensor* mask = nullptr;
};
Var forward_op(OpKind kind, std::span<const Var> inputs, const OpAttrs& attrs = {});

/// Test hook: scales the gradient produced by one op kind's backward rule.
/// Used to verify that gradient checks catch a broken rule. Scale 1 disables it.
void inject_backward_fault(OpKind kind, Scalar scale);
void clear_backward_faults();

}  // namespace rosslink::ad
