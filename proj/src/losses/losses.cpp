#include "rosslink/losses/losses.hpp"

#include <stdexcept>
#include <string>

namespace rosslink::losses {

using ad::Shape;
using ad::Tensor;
using ad::Var;

SmoothingRule parse_smoothing_rule(std::string_view name) {
  if (name == "paper_literal" || name == "paper-literal") return SmoothingRule::paper_literal;
  if (name == "standard") return SmoothingRule::standard;
  throw std::invalid_argument("unknown smoothing rule: " + std::string(name));
}

std::string_view smoothing_rule_name(SmoothingRule rule) {
  return rule == SmoothingRule::paper_literal ? "paper_literal" : "standard";
}

void LossConfig::validate() const {
  if (!(kappa >= 0.0 && kappa <= 1.0)) throw std::invalid_argument("kappa must lie in [0, 1]");
  if (!(xi > 0.0)) throw std::invalid_argument("xi must be positive");
}

int active_positions(std::span<const int> labels) {
  int n = 0;
  while (n < static_cast<int>(labels.size()) && labels[n] != kPad) ++n;
  return n;
}

namespace {

void check_pred(const char* what, const Var& pred, std::span<const int> labels) {
  if (pred.shape().size() != 2 || pred.rows() != static_cast<std::int64_t>(labels.size())) {
    throw ad::ShapeError(std::string(what) + ": prediction " + ad::shape_string(pred.shape()) + " does not match " +
                         std::to_string(labels.size()) + " labels");
  }
  for (int t : labels) {
    if (t < 0 || t >= pred.cols()) {
      throw std::out_of_range(std::string(what) + ": label " + std::to_string(t) + " outside vocabulary of " +
                              std::to_string(pred.cols()));
    }
  }
}

// -sum(W * log p), flagging any weighted entry below the floor.
Var weighted_nll(Var pred, const Tensor& weights, LossReport* report) {
  if (report != nullptr) {
    report->clamped = ((weights.data.array() > 0.0) && (pred.value().data.array() < kProbFloor)).any();
  }
  return -1.0 * ad::sum(ad::mul(ad::log(pred, kProbFloor), pred.tape->constant(weights)));
}

void check_scalar(const char* what, const Var& v) {
  if (!v.shape().empty()) throw ad::ShapeError(std::string(what) + ": expected a scalar, got " + ad::shape_string(v.shape()));
}

}  // namespace

Var lsr_ce(Var pred, std::span<const int> labels, const LossConfig& cfg, LossReport* report) {
  cfg.validate();
  check_pred("lsr_ce", pred, labels);
  const std::int64_t e = pred.cols();
  const double mass = cfg.rule == SmoothingRule::paper_literal ? cfg.kappa : 1.0 - cfg.kappa;
  const double off = e > 1 ? mass / static_cast<double>(e - 1) : 0.0;
  const int n = active_positions(labels);
  Tensor w{pred.shape()};
  auto wm = w.matrix();
  wm.topRows(n).setConstant(off);
  for (int l = 0; l < n; ++l) wm(l, labels[l]) = cfg.kappa;
  if (report != nullptr) report->positions = n;
  return weighted_nll(pred, w, report);
}

Var cross_entropy(Var pred, std::span<const int> labels, LossReport* report) {
  check_pred("cross_entropy", pred, labels);
  const int n = active_positions(labels);
  Tensor w{pred.shape()};
  for (int l = 0; l < n; ++l) w.data[l * pred.cols() + labels[l]] = 1.0;
  if (report != nullptr) report->positions = n;
  return weighted_nll(pred, w, report);
}

Var disc_loss(Var d_real, Var d_fake) {
  check_scalar("disc_loss", d_real);
  check_scalar("disc_loss", d_fake);
  return 0.5 * ad::square(d_real + (-1.0)) + 0.5 * ad::square(d_fake);
}

Var gen_loss(Var f, Var f_tilde, Var d_fake, const LossConfig& cfg) {
  cfg.validate();
  check_scalar("gen_loss", d_fake);
  if (f.shape() != f_tilde.shape()) {
    throw ad::ShapeError("gen_loss: F " + ad::shape_string(f.shape()) + " vs F~ " + ad::shape_string(f_tilde.shape()));
  }
  return (0.5 * cfg.xi) * ad::mean(ad::square(f - f_tilde)) + 0.5 * ad::square(d_fake + (-1.0));
}

Var probe_net_loss(Var i, Var i_tilde, Var c) {
  if (i.shape().size() != 1 || i.shape() != i_tilde.shape() || i.shape() != c.shape()) {
    throw ad::ShapeError("probe_net_loss: lengths differ: " + ad::shape_string(i.shape()) + ", " +
                         ad::shape_string(i_tilde.shape()) + ", " + ad::shape_string(c.shape()));
  }
  return ad::sum(ad::square(i - c * i_tilde));
}

Var probe_comp_loss(Var pred, std::span<const int> labels, std::span<const int> probe, LossReport* report) {
  check_pred("probe_comp_loss", pred, labels);
  if (probe.size() != labels.size()) {
    throw ad::ShapeError("probe_comp_loss: probe length " + std::to_string(probe.size()) + " vs " +
                         std::to_string(labels.size()) + " rows");
  }
  const int n = active_positions(labels);
  Tensor w{pred.shape()};
  int used = 0;
  for (int l = 0; l < n; ++l) {
    if (probe[l] != 0) {
      w.data[l * pred.cols() + labels[l]] = 1.0;
      ++used;
    }
  }
  if (report != nullptr) report->positions = used;
  return weighted_nll(pred, w, report);
}

Var row_norms(Var m) { return ad::sqrt(ad::sum(ad::square(m), -1)); }

}  // namespace rosslink::losses
