#pragma once

#include "rosslink/autodiff/tape.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace rosslink::ad {

/// Scalar-valued function of several tensors, evaluated on a fresh tape.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckOptions {
  Scalar eps = 1e-5;
  Scalar tol = 1e-4;
  /// Coordinates checked per input; 0 checks every coordinate.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 1;
  /// Inputs whose gradient is compared. Empty means all inputs.
  std::vector<std::size_t> checked_inputs;
};

struct GradCheckReport {
  bool passed = true;
  Scalar max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_coord = 0;
  std::size_t coords_checked = 0;
  /// Coordinates whose central difference straddles a kink (see grad_check).
  std::size_t kinks_skipped = 0;
  /// Coordinates where both gradients are below the relative-error floor.
  std::size_t below_resolution = 0;
  std::string failure;
};

/// Compares the tape gradient of `fn` at `point` against central differences
/// (f(x+eps e) - f(x-eps e)) / 2 eps, per coordinate, using the relative error
/// |a-b| / max(|a|, |b|, floor). The floor is resolution / tol, where resolution =
/// 256 eps_mach max(1, |f|) / eps bounds the rounding error of the quotient; gradients
/// below it are therefore held to an absolute error of `resolution`.
/// A mismatching coordinate whose forward and backward one-sided quotients also
/// disagree by more than `tol` has a kink within eps; it is counted in `kinks_skipped`
/// instead, and the check fails if more than 5% are skipped.
GradCheckReport grad_check(const ScalarFn& fn, std::span<const Tensor> point, const GradCheckOptions& options = {});

Scalar relative_error(Scalar a, Scalar b, Scalar floor = 1e-8);

}  // namespace rosslink::ad
