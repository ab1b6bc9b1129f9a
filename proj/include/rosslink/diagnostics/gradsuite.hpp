#pragma once

// Finite-difference sweep over every differentiable piece of the system: autodiff
// ops, nn blocks, the seven networks and the six losses. Each item is checked at
// many independently drawn points (fresh inputs and, for parametrized items, fresh
// parameters).

#include "rosslink/autodiff/ops.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace rosslink::diagnostics {

struct GradSuiteOptions {
  int points = 100;
  /// Coordinates sampled per input tensor and parameter at each point, for blocks and
  /// networks. Ops and losses have small inputs and are checked on every coordinate.
  std::size_t coords_per_input = 2;
  double eps = 1e-5;
  double tol = 1e-4;
  std::uint64_t seed = 1;
  /// Item groups to run ("op", "block", "network", "loss"); empty runs all.
  std::vector<std::string> groups;
  /// Scales one op's backward rule for the duration of the run.
  std::optional<ad::OpKind> fault;
  double fault_scale = 1.5;
};

struct GradItemResult {
  std::string group;
  std::string name;
  int points = 0;
  std::size_t coords = 0;
  std::size_t kinks = 0;
  double max_rel_error = 0.0;
  bool passed = true;
  std::string failure;  // first failing point, if any
  double seconds = 0.0;
};

struct GradSuiteResult {
  std::vector<GradItemResult> items;
  double seconds = 0.0;
  bool passed() const;
};

/// "group/name" for every item, in run order.
std::vector<std::string> grad_suite_items();

using GradProgress = std::function<void(const GradItemResult&)>;
GradSuiteResult run_grad_suite(const GradSuiteOptions& opts, const GradProgress& progress = {});

}  // namespace rosslink::diagnostics
