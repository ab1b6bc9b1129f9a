#pragma once

#include "rosslink/nn/param_store.hpp"

#include <map>
#include <string>

namespace rosslink::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
};

struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::map<std::string, ad::Vector> m;
  std::map<std::string, ad::Vector> v;
};

/// Bias-corrected Adam update of every tensor in `params`, then clears their grads.
/// Throws naming the first parameter without a gradient; nothing is updated in that case.
void adam_step(AdamState& state, ParamStore& params);

}  // namespace rosslink::nn
