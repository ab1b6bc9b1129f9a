#include "rosslink/autodiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

namespace rosslink::ad {

Scalar relative_error(Scalar a, Scalar b, Scalar floor) {
  const Scalar denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

namespace {

struct Probe {
  Scalar value = 0.0;
  bool finite = true;
};

Probe evaluate(const ScalarFn& fn, std::span<const Tensor> point) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(point.size());
  for (const auto& t : point) vars.push_back(tape.constant(t));
  try {
    const Scalar v = fn(tape, vars).item();
    return {v, std::isfinite(v)};
  } catch (const std::domain_error&) {
    return {0.0, false};
  }
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& fn, std::span<const Tensor> point, const GradCheckOptions& options) {
  GradCheckReport report;

  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : point) vars.push_back(tape.leaf(t, true));
  Var out = fn(tape, vars);
  if (!std::isfinite(out.item())) {
    report.passed = false;
    report.failure = "function value is not finite at the base point";
    return report;
  }
  tape.backward(out);
  // Absolute resolution of a central difference: the rounding error of
  // f(x +- eps), amplified by 1 / eps. Rounding accumulates over the whole forward
  // pass, hence the wide margin over a single ulp of f. Below resolution / tol the
  // relative error is measured against that floor instead of the gradient itself.
  const Scalar base = out.item();
  const Scalar resolution =
      256.0 * std::numeric_limits<Scalar>::epsilon() * std::max<Scalar>(1.0, std::abs(base)) / options.eps;
  const Scalar floor = std::max(resolution / options.tol, 1e-8);

  std::vector<std::size_t> inputs = options.checked_inputs;
  if (inputs.empty()) {
    inputs.resize(point.size());
    std::iota(inputs.begin(), inputs.end(), std::size_t{0});
  }

  std::mt19937_64 rng(options.seed);
  std::vector<Tensor> probe(point.begin(), point.end());
  for (std::size_t input : inputs) {
    const Vector analytic = vars[input].grad();
    const auto n = static_cast<std::size_t>(point[input].numel());
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_input > 0 && options.max_coords_per_input < n) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_input);
    }
    for (std::size_t c : coords) {
      const Scalar original = point[input].data[static_cast<Eigen::Index>(c)];
      Probe up, down;
      auto central = [&](Scalar h, bool& ok) {
        probe[input].data[static_cast<Eigen::Index>(c)] = original + h;
        up = evaluate(fn, probe);
        probe[input].data[static_cast<Eigen::Index>(c)] = original - h;
        down = evaluate(fn, probe);
        probe[input].data[static_cast<Eigen::Index>(c)] = original;
        ok = up.finite && down.finite;
        return (up.value - down.value) / (2.0 * h);
      };
      bool ok = true;
      const Scalar numeric = central(options.eps, ok);
      const Scalar forward = (up.value - base) / options.eps;
      const Scalar backward = (base - down.value) / options.eps;
      if (!ok) {
        std::ostringstream os;
        os << "non-finite function value when probing input " << input << " coordinate " << c;
        report.passed = false;
        report.failure = os.str();
        return report;
      }
      const Scalar a = analytic[static_cast<Eigen::Index>(c)];
      if (std::abs(a) < floor && std::abs(numeric) < floor) ++report.below_resolution;
      const Scalar err = relative_error(a, numeric, floor);
      // One-sided quotients differ by about eps f'' on smooth functions and by the
      // slope jump when a kink lies within eps.
      if (err > options.tol && relative_error(forward, backward, floor) > options.tol) {
        ++report.kinks_skipped;
        continue;
      }
      ++report.coords_checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = input;
        report.worst_coord = c;
      }
    }
  }
  const std::size_t total = report.coords_checked + report.kinks_skipped;
  if (report.max_rel_error > options.tol) {
    std::ostringstream os;
    os << "max relative error " << report.max_rel_error << " at input " << report.worst_input << " coordinate "
       << report.worst_coord << " exceeds " << options.tol;
    report.passed = false;
    report.failure = os.str();
  } else if (total > 0 && report.kinks_skipped * 20 > total) {
    std::ostringstream os;
    os << report.kinks_skipped << " of " << total << " coordinates sit on kinks";
    report.passed = false;
    report.failure = os.str();
  }
  return report;
}

}  // namespace rosslink::ad
