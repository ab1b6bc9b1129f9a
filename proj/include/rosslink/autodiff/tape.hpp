#pragma once

#include "rosslink/autodiff/tensor.hpp"

#include <functional>
#include <string_view>
#include <vector>

namespace rosslink::ad {

class Tape;

/// Handle to a node recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
  const Shape& shape() const;
  std::int64_t numel() const;
  std::int64_t rows() const;
  std::int64_t cols() const;
  Scalar item() const;
  /// Gradient after backward; zeros when nothing flowed into this node.
  Vector grad() const;
  bool requires_grad() const;
};

/// Records executed ops in order and replays them in reverse for gradients.
/// A tape and all of its vars belong to a single thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool trainable);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var scalar(Scalar v) { return constant(Tensor::scalar(v)); }

  /// Registers an op output. The backward rule runs only when some input needs a gradient.
  Var record(std::string_view kind, Tensor value, std::vector<int> inputs, BackwardFn backward);

  void backward(Var loss);

  const Tensor& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].needs_grad; }
  bool is_trainable_leaf(int id) const { return nodes_[id].trainable; }
  std::string_view kind(int id) const { return nodes_[id].kind; }
  std::size_t size() const { return nodes_.size(); }

  /// Gradient buffer of a node, allocated as zeros on first access.
  Vector& grad(int id);
  bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }

 private:
  struct Node {
    std::string_view kind;
    Tensor value;
    Vector grad;
    std::vector<int> inputs;
    BackwardFn backward;
    bool needs_grad = false;
    bool trainable = false;
  };
  std::vector<Node> nodes_;
};

}  // namespace rosslink::ad
