#include "rosslink/autodiff/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>

namespace rosslink::ad {

namespace {

constexpr std::size_t kOpCount = static_cast<std::size_t>(OpKind::reshape) + 1;

std::array<Scalar, kOpCount>& fault_scales() {
  static std::array<Scalar, kOpCount> scales = [] {
    std::array<Scalar, kOpCount> s{};
    s.fill(1.0);
    return s;
  }();
  return scales;
}

[[noreturn]] void mismatch(OpKind kind, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op_name(kind)) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

[[noreturn]] void bad_shape(OpKind kind, const std::string& what) {
  throw ShapeError(std::string(op_name(kind)) + ": " + what);
}

Tape& tape_of(OpKind kind, std::initializer_list<Var> vars) {
  Tape* t = nullptr;
  for (const auto& v : vars) {
    if (!v.valid()) bad_shape(kind, "invalid operand");
    if (t && v.tape != t) bad_shape(kind, "operands live on different tapes");
    t = v.tape;
  }
  return *t;
}

Var emit(OpKind kind, Tape& tape, Tensor out, std::vector<int> inputs, Tape::BackwardFn bw) {
  if (!out.all_finite()) {
    throw NonFiniteError(std::string(op_name(kind)) + ": non-finite output for shape " + shape_string(out.shape));
  }
  const Scalar fault = fault_scales()[static_cast<std::size_t>(kind)];
  if (fault != 1.0) {
    bw = [inner = std::move(bw), fault](Tape& t, int self) {
      Vector saved = t.grad(self);
      t.grad(self) *= fault;
      inner(t, self);
      t.grad(self) = saved;
    };
  }
  return tape.record(op_name(kind), std::move(out), std::move(inputs), std::move(bw));
}

bool is_scalar(const Tensor& t) { return t.shape.empty(); }

Eigen::ArrayXd broadcast(const Tensor& t, Eigen::Index n) {
  if (is_scalar(t)) return Eigen::ArrayXd::Constant(n, t.data[0]);
  return t.data.array();
}

void accumulate(Tape& tape, int id, const Eigen::ArrayXd& contribution) {
  if (!tape.requires_grad(id)) return;
  auto& g = tape.grad(id);
  if (g.size() == 1 && contribution.size() != 1) {
    g[0] += contribution.sum();
  } else {
    g.array() += contribution;
  }
}

Shape binary_shape(OpKind kind, const Tensor& a, const Tensor& b) {
  if (a.shape == b.shape) return a.shape;
  if (is_scalar(a)) return b.shape;
  if (is_scalar(b)) return a.shape;
  mismatch(kind, a.shape, b.shape);
}

template <class Fwd, class Bwd>
Var binary(OpKind kind, Var a, Var b, Fwd fwd, Bwd bwd) {
  Tape& tape = tape_of(kind, {a, b});
  const Shape out_shape = binary_shape(kind, a.value(), b.value());
  const auto n = static_cast<Eigen::Index>(numel_of(out_shape));
  Tensor out{out_shape};
  out.data = fwd(broadcast(a.value(), n), broadcast(b.value(), n)).matrix();
  const int ia = a.id, ib = b.id;
  return emit(kind, tape, std::move(out), {ia, ib}, [ia, ib, n, bwd](Tape& t, int self) {
    const Eigen::ArrayXd g = t.grad(self).array();
    const Eigen::ArrayXd av = broadcast(t.value(ia), n);
    const Eigen::ArrayXd bv = broadcast(t.value(ib), n);
    auto [ga, gb] = bwd(g, av, bv);
    accumulate(t, ia, ga);
    accumulate(t, ib, gb);
  });
}

template <class Fwd, class Deriv>
Var unary(OpKind kind, Var x, Fwd fwd, Deriv deriv) {
  Tape& tape = tape_of(kind, {x});
  Tensor out{x.shape()};
  out.data = fwd(x.value().data.array()).matrix();
  const int ix = x.id;
  return emit(kind, tape, std::move(out), {ix}, [ix, deriv](Tape& t, int self) {
    const Eigen::ArrayXd g = t.grad(self).array();
    accumulate(t, ix, g * deriv(t.value(ix).data.array(), t.value(self).data.array()));
  });
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

struct Padding {
  std::int64_t out = 0;
  std::int64_t left = 0;
};

Padding same_padding(std::int64_t in, std::int64_t kernel, std::int64_t stride) {
  Padding p;
  p.out = ceil_div(in, stride);
  const std::int64_t total = std::max<std::int64_t>((p.out - 1) * stride + kernel - in, 0);
  p.left = total / 2;
  return p;
}

int normalize_axis(OpKind kind, int axis, std::int64_t rank) {
  if (axis < 0) axis += static_cast<int>(rank);
  if (axis < 0 || axis >= rank) bad_shape(kind, "axis out of range for rank " + std::to_string(rank));
  return axis;
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::sub: return "sub";
    case OpKind::div: return "div";
    case OpKind::conv1d: return "conv1d";
    case OpKind::conv2d: return "conv2d";
    case OpKind::layernorm: return "layernorm";
    case OpKind::softmax: return "softmax";
    case OpKind::log: return "log";
    case OpKind::exp: return "exp";
    case OpKind::gelu: return "gelu";
    case OpKind::relu: return "relu";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::gather: return "gather";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::transpose: return "transpose";
    case OpKind::mean: return "mean";
    case OpKind::sum: return "sum";
    case OpKind::square: return "square";
    case OpKind::masked_fill: return "masked_fill";
    case OpKind::sqrt: return "sqrt";
    case OpKind::expand: return "expand";
    case OpKind::reshape: return "reshape";
  }
  return "unknown";
}

std::vector<OpKind> all_op_kinds() {
  std::vector<OpKind> kinds;
  for (std::size_t i = 0; i < kOpCount; ++i) kinds.push_back(static_cast<OpKind>(i));
  return kinds;
}

void inject_backward_fault(OpKind kind, Scalar scale) { fault_scales()[static_cast<std::size_t>(kind)] = scale; }

void clear_backward_faults() { fault_scales().fill(1.0); }

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
  return binary(
      OpKind::add, a, b, [](const auto& x, const auto& y) { return Eigen::ArrayXd(x + y); },
      [](const Eigen::ArrayXd& g, const Eigen::ArrayXd&, const Eigen::ArrayXd&) {
        return std::pair<Eigen::ArrayXd, Eigen::ArrayXd>{g, g};
      });
}

Var sub(Var a, Var b) {
  return binary(
      OpKind::sub, a, b, [](const auto& x, const auto& y) { return Eigen::ArrayXd(x - y); },
      [](const Eigen::ArrayXd& g, const Eigen::ArrayXd&, const Eigen::ArrayXd&) {
        return std::pair<Eigen::ArrayXd, Eigen::ArrayXd>{g, -g};
      });
}

Var mul(Var a, Var b) {
  return binary(
      OpKind::mul, a, b, [](const auto& x, const auto& y) { return Eigen::ArrayXd(x * y); },
      [](const Eigen::ArrayXd& g, const Eigen::ArrayXd& x, const Eigen::ArrayXd& y) {
        return std::pair<Eigen::ArrayXd, Eigen::ArrayXd>{g * y, g * x};
      });
}

Var div(Var a, Var b) {
  return binary(
      OpKind::div, a, b, [](const auto& x, const auto& y) { return Eigen::ArrayXd(x / y); },
      [](const Eigen::ArrayXd& g, const Eigen::ArrayXd& x, const Eigen::ArrayXd& y) {
        return std::pair<Eigen::ArrayXd, Eigen::ArrayXd>{g / y, -g * x / (y * y)};
      });
}

Var operator+(Var a, Var b) { return add(a, b); }
Var operator-(Var a, Var b) { return sub(a, b); }
Var operator*(Var a, Var b) { return mul(a, b); }
Var operator/(Var a, Var b) { return div(a, b); }
Var operator*(Scalar s, Var a) { return mul(a.tape->scalar(s), a); }
Var operator+(Var a, Scalar s) { return add(a, a.tape->scalar(s)); }
Var operator-(Scalar s, Var a) { return sub(a.tape->scalar(s), a); }

Var log(Var x, Scalar floor) {
  if (floor > 0.0) {
    return unary(
        OpKind::log, x, [floor](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(v.max(floor).log()); },
        [floor](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) {
          return Eigen::ArrayXd((v >= floor).select(1.0 / v, 0.0));
        });
  }
  return unary(
      OpKind::log, x, [](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(v.log()); },
      [](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) { return Eigen::ArrayXd(1.0 / v); });
}

Var exp(Var x) {
  return unary(
      OpKind::exp, x, [](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(v.exp()); },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) { return y; });
}

namespace {
constexpr Scalar kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr Scalar kGeluA = 0.044715;
}  // namespace

Var gelu(Var x) {
  return unary(
      OpKind::gelu, x,
      [](const Eigen::ArrayXd& v) {
        return Eigen::ArrayXd(0.5 * v * (1.0 + (kGeluC * (v + kGeluA * v.cube())).tanh()));
      },
      [](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) {
        const Eigen::ArrayXd t = (kGeluC * (v + kGeluA * v.cube())).tanh();
        return Eigen::ArrayXd(0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v.square()));
      });
}

Var relu(Var x) {
  return unary(
      OpKind::relu, x, [](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(v.max(0.0)); },
      [](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) { return Eigen::ArrayXd((v > 0.0).cast<Scalar>()); });
}

Var sigmoid(Var x) {
  return unary(
      OpKind::sigmoid, x,
      [](const Eigen::ArrayXd& v) {
        return Eigen::ArrayXd((v >= 0.0).select(1.0 / (1.0 + (-v).exp()), v.exp() / (1.0 + v.exp())));
      },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) { return Eigen::ArrayXd(y * (1.0 - y)); });
}

Var square(Var x) {
  return unary(
      OpKind::square, x, [](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(v.square()); },
      [](const Eigen::ArrayXd& v, const Eigen::ArrayXd&) { return Eigen::ArrayXd(2.0 * v); });
}

// The gradient at sqrt(0) is taken as 0.
Var sqrt(Var x) {
  return unary(
      OpKind::sqrt, x, [](const Eigen::ArrayXd& v) { return Eigen::ArrayXd(v.sqrt()); },
      [](const Eigen::ArrayXd&, const Eigen::ArrayXd& y) { return Eigen::ArrayXd((y > 0.0).select(0.5 / y, 0.0)); });
}

// ---------------------------------------------------------------- linear algebra

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(OpKind::matmul, {a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0]) mismatch(OpKind::matmul, av.shape, bv.shape);
  Tensor out{Shape{av.shape[0], bv.shape[1]}};
  out.matrix().noalias() = av.matrix() * bv.matrix();
  const int ia = a.id, ib = b.id;
  return emit(OpKind::matmul, tape, std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
    const auto& out_v = t.value(self);
    ConstMatrixMap g(t.grad(self).data(), out_v.shape[0], out_v.shape[1]);
    const auto& x = t.value(ia);
    const auto& y = t.value(ib);
    if (t.requires_grad(ia)) MatrixMap(t.grad(ia).data(), x.shape[0], x.shape[1]).noalias() += g * y.matrix().transpose();
    if (t.requires_grad(ib)) MatrixMap(t.grad(ib).data(), y.shape[0], y.shape[1]).noalias() += x.matrix().transpose() * g;
  });
}

Var transpose(Var a) {
  Tape& tape = tape_of(OpKind::transpose, {a});
  const auto& av = a.value();
  if (av.rank() != 2) bad_shape(OpKind::transpose, "needs rank 2, got " + shape_string(av.shape));
  Tensor out{Shape{av.shape[1], av.shape[0]}};
  out.matrix() = av.matrix().transpose();
  const int ia = a.id;
  return emit(OpKind::transpose, tape, std::move(out), {ia}, [ia](Tape& t, int self) {
    const auto& x = t.value(ia);
    ConstMatrixMap g(t.grad(self).data(), x.shape[1], x.shape[0]);
    MatrixMap(t.grad(ia).data(), x.shape[0], x.shape[1]) += g.transpose();
  });
}

// ---------------------------------------------------------------- convolutions

Var conv1d(Var x, Var w, std::optional<Var> bias, int stride) {
  Tape& tape = bias ? tape_of(OpKind::conv1d, {x, w, *bias}) : tape_of(OpKind::conv1d, {x, w});
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (stride < 1) bad_shape(OpKind::conv1d, "stride must be >= 1");
  if (xv.rank() != 2 || wv.rank() != 3 || wv.shape[1] != xv.shape[1]) mismatch(OpKind::conv1d, xv.shape, wv.shape);
  const std::int64_t len = xv.shape[0], cin = xv.shape[1], k = wv.shape[0], cout = wv.shape[2];
  if (bias && bias->value().shape != Shape{cout}) mismatch(OpKind::conv1d, bias->value().shape, Shape{cout});
  const Padding pad = same_padding(len, k, stride);

  auto cols = std::make_shared<Matrix>(Matrix::Zero(pad.out, k * cin));
  for (std::int64_t o = 0; o < pad.out; ++o) {
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const std::int64_t src = o * stride + kk - pad.left;
      if (src < 0 || src >= len) continue;
      cols->block(o, kk * cin, 1, cin) = xv.matrix().row(src);
    }
  }
  ConstMatrixMap wmat(wv.data.data(), k * cin, cout);
  Tensor out{Shape{pad.out, cout}};
  out.matrix().noalias() = *cols * wmat;
  if (bias) out.matrix().rowwise() += bias->value().data.transpose();

  std::vector<int> inputs{x.id, w.id};
  if (bias) inputs.push_back(bias->id);
  const int ix = x.id, iw = w.id, ibias = bias ? bias->id : -1;
  const std::int64_t out_len = pad.out, left = pad.left;
  return emit(OpKind::conv1d, tape, std::move(out), inputs,
              [=](Tape& t, int self) {
                ConstMatrixMap g(t.grad(self).data(), out_len, cout);
                if (t.requires_grad(iw)) MatrixMap(t.grad(iw).data(), k * cin, cout).noalias() += cols->transpose() * g;
                if (ibias >= 0 && t.requires_grad(ibias)) t.grad(ibias) += g.colwise().sum().transpose();
                if (t.requires_grad(ix)) {
                  const auto& wval = t.value(iw);
                  const Matrix dcols = g * ConstMatrixMap(wval.data.data(), k * cin, cout).transpose();
                  MatrixMap dx(t.grad(ix).data(), len, cin);
                  for (std::int64_t o = 0; o < out_len; ++o) {
                    for (std::int64_t kk = 0; kk < k; ++kk) {
                      const std::int64_t src = o * stride + kk - left;
                      if (src < 0 || src >= len) continue;
                      dx.row(src) += dcols.block(o, kk * cin, 1, cin);
                    }
                  }
                }
              });
}

Var conv2d(Var x, Var w, std::optional<Var> bias, int stride_h, int stride_w) {
  Tape& tape = bias ? tape_of(OpKind::conv2d, {x, w, *bias}) : tape_of(OpKind::conv2d, {x, w});
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (stride_h < 1 || stride_w < 1) bad_shape(OpKind::conv2d, "strides must be >= 1");
  if (xv.rank() != 3 || wv.rank() != 4 || wv.shape[2] != xv.shape[2]) mismatch(OpKind::conv2d, xv.shape, wv.shape);
  const std::int64_t h = xv.shape[0], wd = xv.shape[1], cin = xv.shape[2];
  const std::int64_t kh = wv.shape[0], kw = wv.shape[1], cout = wv.shape[3];
  if (bias && bias->value().shape != Shape{cout}) mismatch(OpKind::conv2d, bias->value().shape, Shape{cout});
  const Padding ph = same_padding(h, kh, stride_h);
  const Padding pw = same_padding(wd, kw, stride_w);
  const std::int64_t patch = kh * kw * cin;

  auto cols = std::make_shared<Matrix>(Matrix::Zero(ph.out * pw.out, patch));
  const Scalar* xd = xv.data.data();
  for (std::int64_t i = 0; i < ph.out; ++i) {
    for (std::int64_t j = 0; j < pw.out; ++j) {
      Scalar* row = cols->row(i * pw.out + j).data();
      for (std::int64_t a = 0; a < kh; ++a) {
        const std::int64_t si = i * stride_h + a - ph.left;
        if (si < 0 || si >= h) continue;
        for (std::int64_t b = 0; b < kw; ++b) {
          const std::int64_t sj = j * stride_w + b - pw.left;
          if (sj < 0 || sj >= wd) continue;
          std::copy_n(xd + (si * wd + sj) * cin, cin, row + (a * kw + b) * cin);
        }
      }
    }
  }
  Tensor out{Shape{ph.out, pw.out, cout}};
  MatrixMap out_mat(out.data.data(), ph.out * pw.out, cout);
  out_mat.noalias() = *cols * ConstMatrixMap(wv.data.data(), patch, cout);
  if (bias) out_mat.rowwise() += bias->value().data.transpose();

  std::vector<int> inputs{x.id, w.id};
  if (bias) inputs.push_back(bias->id);
  const int ix = x.id, iw = w.id, ibias = bias ? bias->id : -1;
  const std::int64_t oh = ph.out, ow = pw.out, lh = ph.left, lw = pw.left;
  return emit(OpKind::conv2d, tape, std::move(out), inputs, [=](Tape& t, int self) {
    ConstMatrixMap g(t.grad(self).data(), oh * ow, cout);
    if (t.requires_grad(iw)) MatrixMap(t.grad(iw).data(), patch, cout).noalias() += cols->transpose() * g;
    if (ibias >= 0 && t.requires_grad(ibias)) t.grad(ibias) += g.colwise().sum().transpose();
    if (t.requires_grad(ix)) {
      const auto& wval = t.value(iw);
      const Matrix dcols = g * ConstMatrixMap(wval.data.data(), patch, cout).transpose();
      Scalar* dx = t.grad(ix).data();
      for (std::int64_t i = 0; i < oh; ++i) {
        for (std::int64_t j = 0; j < ow; ++j) {
          const Scalar* row = dcols.row(i * ow + j).data();
          for (std::int64_t a = 0; a < kh; ++a) {
            const std::int64_t si = i * stride_h + a - lh;
            if (si < 0 || si >= h) continue;
            for (std::int64_t b = 0; b < kw; ++b) {
              const std::int64_t sj = j * stride_w + b - lw;
              if (sj < 0 || sj >= wd) continue;
              Scalar* dst = dx + (si * wd + sj) * cin;
              const Scalar* src = row + (a * kw + b) * cin;
              for (std::int64_t c = 0; c < cin; ++c) dst[c] += src[c];
            }
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------- normalization

Var layernorm(Var x, Var gamma, Var beta, Scalar eps) {
  Tape& tape = tape_of(OpKind::layernorm, {x, gamma, beta});
  const auto& xv = x.value();
  if (xv.rank() < 1) bad_shape(OpKind::layernorm, "needs rank >= 1");
  const std::int64_t width = xv.shape.back();
  const std::int64_t rows = xv.numel() / width;
  if (gamma.value().shape != Shape{width}) mismatch(OpKind::layernorm, xv.shape, gamma.value().shape);
  if (beta.value().shape != Shape{width}) mismatch(OpKind::layernorm, xv.shape, beta.value().shape);

  auto xhat = std::make_shared<Matrix>(rows, width);
  auto inv_std = std::make_shared<Vector>(rows);
  ConstMatrixMap xm(xv.data.data(), rows, width);
  for (std::int64_t r = 0; r < rows; ++r) {
    const Scalar mu = xm.row(r).mean();
    const Scalar var = (xm.row(r).array() - mu).square().mean();
    (*inv_std)[r] = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (xm.row(r).array() - mu) * (*inv_std)[r];
  }
  Tensor out{xv.shape};
  MatrixMap om(out.data.data(), rows, width);
  om = (xhat->array().rowwise() * gamma.value().data.transpose().array()).rowwise() + beta.value().data.transpose().array();

  const int ix = x.id, ig = gamma.id, ib = beta.id;
  return emit(OpKind::layernorm, tape, std::move(out), {ix, ig, ib}, [=](Tape& t, int self) {
    ConstMatrixMap g(t.grad(self).data(), rows, width);
    if (t.requires_grad(ig)) t.grad(ig) += (g.array() * xhat->array()).colwise().sum().transpose().matrix();
    if (t.requires_grad(ib)) t.grad(ib) += g.colwise().sum().transpose();
    if (t.requires_grad(ix)) {
      const Eigen::Array<Scalar, 1, Eigen::Dynamic> gam = t.value(ig).data.transpose().array();
      MatrixMap dx(t.grad(ix).data(), rows, width);
      for (std::int64_t r = 0; r < rows; ++r) {
        const Eigen::Array<Scalar, 1, Eigen::Dynamic> dxhat = g.row(r).array() * gam;
        const Scalar m1 = dxhat.mean();
        const Scalar m2 = (dxhat * xhat->row(r).array()).mean();
        dx.row(r).array() += (*inv_std)[r] * (dxhat - m1 - xhat->row(r).array() * m2);
      }
    }
  });
}

Var softmax(Var x, const Tensor* additive_mask) {
  Tape& tape = tape_of(OpKind::softmax, {x});
  const auto& xv = x.value();
  if (xv.rank() < 1) bad_shape(OpKind::softmax, "needs rank >= 1");
  if (additive_mask && additive_mask->shape != xv.shape) mismatch(OpKind::softmax, xv.shape, additive_mask->shape);
  const std::int64_t width = xv.shape.back();
  const std::int64_t rows = xv.numel() / width;
  Tensor out{xv.shape};
  ConstMatrixMap xm(xv.data.data(), rows, width);
  MatrixMap om(out.data.data(), rows, width);
  for (std::int64_t r = 0; r < rows; ++r) {
    Eigen::Array<Scalar, 1, Eigen::Dynamic> z = xm.row(r).array();
    if (additive_mask) z += ConstMatrixMap(additive_mask->data.data(), rows, width).row(r).array();
    const Scalar mx = z.maxCoeff();
    if (!std::isfinite(mx)) {
      throw NonFiniteError("softmax: row " + std::to_string(r) + " has no unmasked entry");
    }
    // Eigen's vectorized exp clamps -inf to a denormal, so masked entries are zeroed explicitly.
    const Eigen::Array<Scalar, 1, Eigen::Dynamic> e = (z == -std::numeric_limits<Scalar>::infinity()).select(0.0, (z - mx).exp());
    om.row(r) = (e / e.sum()).matrix();
  }
  const int ix = x.id;
  return emit(OpKind::softmax, tape, std::move(out), {ix}, [=](Tape& t, int self) {
    ConstMatrixMap g(t.grad(self).data(), rows, width);
    ConstMatrixMap y(t.value(self).data.data(), rows, width);
    MatrixMap dx(t.grad(ix).data(), rows, width);
    for (std::int64_t r = 0; r < rows; ++r) {
      const Scalar dot = g.row(r).dot(y.row(r));
      dx.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

// ---------------------------------------------------------------- indexing

Var gather(Var table, std::span<const int> ids) {
  Tape& tape = tape_of(OpKind::gather, {table});
  const auto& tv = table.value();
  if (tv.rank() != 2) bad_shape(OpKind::gather, "table must be rank 2, got " + shape_string(tv.shape));
  if (ids.empty()) bad_shape(OpKind::gather, "empty id list");
  const std::int64_t vocab = tv.shape[0], width = tv.shape[1];
  std::vector<int> idv(ids.begin(), ids.end());
  Tensor out{Shape{static_cast<std::int64_t>(idv.size()), width}};
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || idv[i] >= vocab) {
      bad_shape(OpKind::gather, "id " + std::to_string(idv[i]) + " outside table of " + std::to_string(vocab) + " rows");
    }
    out.matrix().row(static_cast<Eigen::Index>(i)) = tv.matrix().row(idv[i]);
  }
  const int it = table.id;
  return emit(OpKind::gather, tape, std::move(out), {it}, [=](Tape& t, int self) {
    ConstMatrixMap g(t.grad(self).data(), static_cast<Eigen::Index>(idv.size()), width);
    MatrixMap dt(t.grad(it).data(), vocab, width);
    for (std::size_t i = 0; i < idv.size(); ++i) dt.row(idv[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

namespace {
struct AxisSplit {
  std::int64_t outer = 1;
  std::int64_t inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit a;
  for (int i = 0; i < axis; ++i) a.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}
}  // namespace

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape& tape = tape_of(OpKind::concat, {parts.front()});
  const Shape& first = parts.front().shape();
  const int ax = normalize_axis(OpKind::concat, axis, static_cast<std::int64_t>(first.size()));
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<int> inputs;
  std::vector<std::int64_t> extents;
  for (const auto& p : parts) {
    if (p.tape != &tape) bad_shape(OpKind::concat, "operands live on different tapes");
    Shape s = p.shape();
    if (s.size() != first.size()) mismatch(OpKind::concat, first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != ax && s[i] != first[i]) mismatch(OpKind::concat, first, s);
    }
    out_shape[ax] += s[ax];
    extents.push_back(s[ax]);
    inputs.push_back(p.id);
  }
  const AxisSplit split = split_at(out_shape, ax);
  const std::int64_t out_row = out_shape[ax] * split.inner;
  Tensor out{out_shape};
  std::int64_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::int64_t chunk = extents[k] * split.inner;
    const Scalar* src = parts[k].value().data.data();
    for (std::int64_t o = 0; o < split.outer; ++o) {
      std::copy_n(src + o * chunk, chunk, out.data.data() + o * out_row + offset);
    }
    offset += chunk;
  }
  return emit(OpKind::concat, tape, std::move(out), inputs, [=](Tape& t, int self) {
    const Scalar* g = t.grad(self).data();
    std::int64_t off = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      const std::int64_t chunk = extents[k] * split.inner;
      if (t.requires_grad(inputs[k])) {
        Scalar* dst = t.grad(inputs[k]).data();
        for (std::int64_t o = 0; o < split.outer; ++o) {
          for (std::int64_t i = 0; i < chunk; ++i) dst[o * chunk + i] += g[o * out_row + off + i];
        }
      }
      off += chunk;
    }
  });
}

Var slice(Var x, int axis, std::int64_t begin, std::int64_t end) {
  Tape& tape = tape_of(OpKind::slice, {x});
  const Shape& in_shape = x.shape();
  const int ax = normalize_axis(OpKind::slice, axis, static_cast<std::int64_t>(in_shape.size()));
  if (begin < 0 || end > in_shape[ax] || begin >= end) {
    bad_shape(OpKind::slice, "range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                                 shape_string(in_shape));
  }
  Shape out_shape = in_shape;
  out_shape[ax] = end - begin;
  const AxisSplit split = split_at(in_shape, ax);
  const std::int64_t in_row = in_shape[ax] * split.inner;
  const std::int64_t chunk = (end - begin) * split.inner;
  const std::int64_t off = begin * split.inner;
  Tensor out{out_shape};
  const Scalar* src = x.value().data.data();
  for (std::int64_t o = 0; o < split.outer; ++o) std::copy_n(src + o * in_row + off, chunk, out.data.data() + o * chunk);
  const int ix = x.id;
  return emit(OpKind::slice, tape, std::move(out), {ix}, [=](Tape& t, int self) {
    const Scalar* g = t.grad(self).data();
    Scalar* dst = t.grad(ix).data();
    for (std::int64_t o = 0; o < split.outer; ++o) {
      for (std::int64_t i = 0; i < chunk; ++i) dst[o * in_row + off + i] += g[o * chunk + i];
    }
  });
}

// ---------------------------------------------------------------- reductions

namespace {
Var reduce(OpKind kind, Var x, std::optional<int> axis, bool average) {
  Tape& tape = tape_of(kind, {x});
  const auto& xv = x.value();
  if (!axis) {
    const Scalar scale = average ? 1.0 / static_cast<Scalar>(xv.numel()) : 1.0;
    Tensor out = Tensor::scalar(xv.data.sum() * scale);
    const int ix = x.id;
    return emit(kind, tape, std::move(out), {ix}, [=](Tape& t, int self) {
      t.grad(ix).array() += t.grad(self)[0] * scale;
    });
  }
  if (xv.rank() < 1) bad_shape(kind, "axis reduction on a scalar");
  const int ax = normalize_axis(kind, *axis, xv.rank());
  if (ax != xv.rank() - 1) bad_shape(kind, "only the last axis can be reduced");
  const std::int64_t width = xv.shape.back();
  const std::int64_t rows = xv.numel() / width;
  const Scalar scale = average ? 1.0 / static_cast<Scalar>(width) : 1.0;
  Shape out_shape(xv.shape.begin(), xv.shape.end() - 1);
  Tensor out{out_shape};
  out.data = ConstMatrixMap(xv.data.data(), rows, width).rowwise().sum() * scale;
  const int ix = x.id;
  return emit(kind, tape, std::move(out), {ix}, [=](Tape& t, int self) {
    MatrixMap dx(t.grad(ix).data(), rows, width);
    dx.colwise() += t.grad(self) * scale;
  });
}
}  // namespace

Var sum(Var x, std::optional<int> axis) { return reduce(OpKind::sum, x, axis, false); }
Var mean(Var x, std::optional<int> axis) { return reduce(OpKind::mean, x, axis, true); }

// ---------------------------------------------------------------- masking & shape

Var masked_fill(Var x, const Tensor& mask, Scalar value) {
  Tape& tape = tape_of(OpKind::masked_fill, {x});
  if (mask.shape != x.shape()) mismatch(OpKind::masked_fill, x.shape(), mask.shape);
  Tensor out{x.shape()};
  const Eigen::Array<bool, Eigen::Dynamic, 1> keep = mask.data.array() == 0.0;
  out.data = keep.select(x.value().data.array(), value).matrix();
  const int ix = x.id;
  return emit(OpKind::masked_fill, tape, std::move(out), {ix}, [=](Tape& t, int self) {
    t.grad(ix).array() += keep.select(t.grad(self).array(), 0.0);
  });
}

Var expand(Var x, Shape target) {
  Tape& tape = tape_of(OpKind::expand, {x});
  const Shape& s = x.shape();
  if (s.size() > target.size() || !std::equal(s.rbegin(), s.rend(), target.rbegin())) {
    mismatch(OpKind::expand, s, target);
  }
  const std::int64_t block = x.numel();
  const std::int64_t reps = numel_of(target) / block;
  Tensor out{target};
  for (std::int64_t r = 0; r < reps; ++r) out.data.segment(r * block, block) = x.value().data;
  const int ix = x.id;
  return emit(OpKind::expand, tape, std::move(out), {ix}, [=](Tape& t, int self) {
    ConstMatrixMap g(t.grad(self).data(), reps, block);
    t.grad(ix) += g.colwise().sum().transpose();
  });
}

Var reshape(Var x, Shape target) {
  Tape& tape = tape_of(OpKind::reshape, {x});
  if (numel_of(target) != x.numel()) mismatch(OpKind::reshape, x.shape(), target);
  Tensor out{std::move(target), x.value().data};
  const int ix = x.id;
  return emit(OpKind::reshape, tape, std::move(out), {ix},
              [=](Tape& t, int self) { t.grad(ix) += t.grad(self); });
}

// ---------------------------------------------------------------- dispatch

Var forward_op(OpKind kind, std::span<const Var> in, const OpAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (in.size() < n) {
      throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                       std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::matmul: need(2); return matmul(in[0], in[1]);
    case OpKind::add: need(2); return add(in[0], in[1]);
    case OpKind::mul: need(2); return mul(in[0], in[1]);
    case OpKind::sub: need(2); return sub(in[0], in[1]);
    case OpKind::div: need(2); return div(in[0], in[1]);
    case OpKind::conv1d:
      need(2);
      return conv1d(in[0], in[1], in.size() > 2 ? std::optional<Var>(in[2]) : std::nullopt, attrs.stride);
    case OpKind::conv2d:
      need(2);
      return conv2d(in[0], in[1], in.size() > 2 ? std::optional<Var>(in[2]) : std::nullopt, attrs.stride,
                    attrs.stride_w);
    case OpKind::layernorm: need(3); return layernorm(in[0], in[1], in[2]);
    case OpKind::softmax: need(1); return softmax(in[0], attrs.mask);
    case OpKind::log: need(1); return log(in[0], attrs.floor);
    case OpKind::exp: need(1); return exp(in[0]);
    case OpKind::gelu: need(1); return gelu(in[0]);
    case OpKind::relu: need(1); return relu(in[0]);
    case OpKind::sigmoid: need(1); return sigmoid(in[0]);
    case OpKind::gather: need(1); return gather(in[0], attrs.ids);
    case OpKind::concat: need(1); return concat(in, attrs.axis);
    case OpKind::slice: need(1); return slice(in[0], attrs.axis, attrs.begin, attrs.end);
    case OpKind::transpose: need(1); return transpose(in[0]);
    case OpKind::mean:
      need(1);
      return mean(in[0], attrs.reduce_all ? std::nullopt : std::optional<int>(attrs.axis));
    case OpKind::sum:
      need(1);
      return sum(in[0], attrs.reduce_all ? std::nullopt : std::optional<int>(attrs.axis));
    case OpKind::square: need(1); return square(in[0]);
    case OpKind::masked_fill:
      need(1);
      if (!attrs.mask) throw ShapeError("masked_fill: mask attribute missing");
      return masked_fill(in[0], *attrs.mask, attrs.value);
    case OpKind::sqrt: need(1); return sqrt(in[0]);
    case OpKind::expand: need(1); return expand(in[0], attrs.shape);
    case OpKind::reshape: need(1); return reshape(in[0], attrs.shape);
  }
  throw ShapeError("unknown op kind");
}

}  // namespace rosslink::ad
