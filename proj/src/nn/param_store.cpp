#include "rosslink/nn/param_store.hpp"

#include "rosslink/autodiff/ops.hpp"

#include <stdexcept>

namespace rosslink::nn {

void ParamStore::add(const std::string& name, ad::Tensor tensor) {
  if (!tensors_.emplace(name, std::move(tensor)).second) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
}

ad::Tensor& ParamStore::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

const ad::Tensor& ParamStore::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::int64_t ParamStore::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [_, t] : tensors_) n += t.numel();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [name, _] : tensors_) out.push_back(name);
  return out;
}

void ParamStore::clear_grads() {
  for (auto& [_, t] : tensors_) t.clear_grad();
}

bool ParamStore::bit_identical(const ParamStore& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  auto it = other.tensors_.begin();
  for (const auto& [name, t] : tensors_) {
    if (name != it->first || !ad::bit_identical(t, it->second)) return false;
    ++it;
  }
  return true;
}

Binder::Binder(ad::Tape& tape, const ParamStore& store, bool trainable)
    : tape_(tape), store_(store), trainable_(trainable) {}

ad::Var Binder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return ad::Var{&tape_, it->second};
  ad::Tensor copy{store_.at(name).shape, store_.at(name).data};
  ad::Var v = tape_.leaf(std::move(copy), trainable_);
  bound_.emplace(name, v.id);
  return v;
}

void Binder::bind(const std::string& name, ad::Var v) {
  if (v.shape() != store_.at(name).shape) {
    throw ad::ShapeError("bind " + name + ": shape " + ad::shape_string(v.shape()) + " differs from store " +
                         ad::shape_string(store_.at(name).shape));
  }
  if (!bound_.emplace(name, v.id).second) throw std::logic_error("parameter already bound: " + name);
}

void Binder::accumulate_grads(ParamStore& store) const {
  if (!trainable_) return;
  for (const auto& [name, id] : bound_) {
    auto& t = store.at(name);
    t.ensure_grad() += tape_.has_grad(id) ? tape_.grad(id) : ad::Vector::Zero(t.numel());
  }
}

}  // namespace rosslink::nn
