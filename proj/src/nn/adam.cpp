#include "rosslink/nn/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace rosslink::nn {

void adam_step(AdamState& state, ParamStore& params) {
  for (const auto& [name, t] : params) {
    if (!t.grad) throw std::invalid_argument("adam_step: parameter '" + name + "' has no gradient");
  }
  const auto& c = state.config;
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (auto& [name, t] : params) {
    const ad::Vector& g = *t.grad;
    auto [mit, m_new] = state.m.try_emplace(name, ad::Vector::Zero(t.numel()));
    auto [vit, v_new] = state.v.try_emplace(name, ad::Vector::Zero(t.numel()));
    ad::Vector& m = mit->second;
    ad::Vector& v = vit->second;
    if (m.size() != t.numel() || v.size() != t.numel()) {
      throw std::invalid_argument("adam_step: moment size mismatch for '" + name + "'");
    }
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseAbs2();
    t.data.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
    t.clear_grad();
  }
}

}  // namespace rosslink::nn
