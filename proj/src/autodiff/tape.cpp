#include "rosslink/autodiff/tape.hpp"

#include <stdexcept>

namespace rosslink::ad {

const Tensor& Var::value() const { return tape->value(id); }
const Shape& Var::shape() const { return tape->value(id).shape; }
std::int64_t Var::numel() const { return tape->value(id).numel(); }
std::int64_t Var::rows() const { return tape->value(id).rows(); }
std::int64_t Var::cols() const { return tape->value(id).cols(); }

Scalar Var::item() const {
  const auto& v = value();
  if (v.numel() != 1) throw std::invalid_argument("item() on non-scalar of shape " + shape_string(v.shape));
  return v.data[0];
}

Vector Var::grad() const {
  if (tape->has_grad(id)) return tape->grad(id);
  return Vector::Zero(numel());
}

bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::leaf(Tensor value, bool trainable) {
  Node n;
  n.kind = trainable ? "param" : "const";
  n.value = std::move(value);
  n.value.grad.reset();
  n.needs_grad = trainable;
  n.trainable = trainable;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::record(std::string_view kind, Tensor value, std::vector<int> inputs, BackwardFn backward) {
  Node n;
  n.kind = kind;
  n.value = std::move(value);
  for (int in : inputs) n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
  n.inputs = std::move(inputs);
  if (n.needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Vector& Tape::grad(int id) {
  auto& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Vector::Zero(n.value.numel());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (value(loss.id).numel() != 1 || !value(loss.id).shape.empty()) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " + shape_string(value(loss.id).shape));
  }
  for (auto& n : nodes_) n.grad.resize(0);
  grad(loss.id)[0] = 1.0;
  for (int id = loss.id; id >= 0; --id) {
    auto& n = nodes_[id];
    if (!n.needs_grad) continue;
    if (n.trainable) {
      grad(id);
      continue;
    }
    if (n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, id);
  }
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (nodes_[id].trainable) grad(static_cast<int>(id));
  }
}

}  // namespace rosslink::ad
