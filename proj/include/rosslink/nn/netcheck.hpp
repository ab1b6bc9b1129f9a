#pragma once

#include "rosslink/autodiff/gradcheck.hpp"
#include "rosslink/nn/param_store.hpp"

#include <functional>
#include <span>

namespace rosslink::nn {

using NetworkFn = std::function<ad::Var(Binder&, std::span<const ad::Var>)>;

/// Finite-difference check of a scalar-valued network with respect to both its inputs
/// and every parameter in `store`. Inputs come first in the report's input index,
/// followed by parameters in name order. `opts.checked_inputs` selects among the
/// inputs only; parameters are always checked.
ad::GradCheckReport grad_check_network(const ParamStore& store, std::span<const ad::Tensor> inputs,
                                       const NetworkFn& body, const ad::GradCheckOptions& opts = {});

}  // namespace rosslink::nn
