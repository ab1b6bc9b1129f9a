#include "rosslink/nn/netcheck.hpp"

namespace rosslink::nn {

ad::GradCheckReport grad_check_network(const ParamStore& store, std::span<const ad::Tensor> inputs,
                                       const NetworkFn& body, const ad::GradCheckOptions& opts) {
  const std::vector<std::string> names = store.names();
  std::vector<ad::Tensor> point(inputs.begin(), inputs.end());
  for (const auto& n : names) point.push_back(ad::Tensor{store.at(n).shape, store.at(n).data});
  const std::size_t n_in = inputs.size();
  ad::ScalarFn fn = [&](ad::Tape& tape, std::span<const ad::Var> vars) {
    Binder binder(tape, store, true);
    for (std::size_t i = 0; i < names.size(); ++i) binder.bind(names[i], vars[n_in + i]);
    return body(binder, vars.first(n_in));
  };
  ad::GradCheckOptions o = opts;
  if (!o.checked_inputs.empty()) {
    for (std::size_t i = 0; i < names.size(); ++i) o.checked_inputs.push_back(n_in + i);
  }
  auto report = ad::grad_check(fn, point, o);
  if (!report.passed && report.worst_input >= n_in && report.worst_input < point.size()) {
    report.failure += " [parameter " + names[report.worst_input - n_in] + "]";
  }
  return report;
}

}  // namespace rosslink::nn
