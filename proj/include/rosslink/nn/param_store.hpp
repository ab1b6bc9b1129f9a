#pragma once

#include "rosslink/autodiff/tape.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace rosslink::nn {

/// Named trainable tensors of one network.
class ParamStore {
 public:
  ParamStore() = default;
  explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

  void add(const std::string& name, ad::Tensor tensor);
  ad::Tensor& at(const std::string& name);
  const ad::Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  std::size_t size() const { return tensors_.size(); }
  std::int64_t parameter_count() const;
  std::vector<std::string> names() const;

  std::uint64_t seed() const { return seed_; }
  void set_seed(std::uint64_t s) { seed_ = s; }

  void clear_grads();
  bool bit_identical(const ParamStore& other) const;

  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

 private:
  std::map<std::string, ad::Tensor> tensors_;
  std::uint64_t seed_ = 0;
};

/// Puts parameters of a store on a tape on first use. With `trainable` false the
/// parameters enter as constants and receive no gradient.
class Binder {
 public:
  Binder(ad::Tape& tape, const ParamStore& store, bool trainable);

  ad::Var operator()(const std::string& name);
  /// Uses an existing var for `name` instead of copying from the store.
  void bind(const std::string& name, ad::Var v);
  ad::Tape& tape() { return tape_; }
  bool trainable() const { return trainable_; }

  /// Adds gradients of every bound parameter into `store`'s grad buffers.
  void accumulate_grads(ParamStore& store) const;

 private:
  ad::Tape& tape_;
  const ParamStore& store_;
  bool trainable_;
  std::unordered_map<std::string, int> bound_;
};

}  // namespace rosslink::nn
