#pragma once

#include "rosslink/autodiff/ops.hpp"

#include <span>
#include <string_view>

namespace rosslink::losses {

/// How much label mass each off-target token receives in lsr_ce:
///   paper_literal  kappa / (E - 1)
///   standard       (1 - kappa) / (E - 1)
enum class SmoothingRule { paper_literal, standard };

SmoothingRule parse_smoothing_rule(std::string_view name);
std::string_view smoothing_rule_name(SmoothingRule rule);

struct LossConfig {
  double kappa = 0.95;
  double xi = 10.0;
  SmoothingRule rule = SmoothingRule::paper_literal;

  void validate() const;
};

struct LossReport {
  int positions = 0;     // rows that contributed
  bool clamped = false;  // some needed probability was below the 1e-12 floor
};

inline constexpr int kPad = 0;
inline constexpr double kProbFloor = 1e-12;

/// Label-smoothed cross-entropy summed over rows of `pred` (L x E probabilities).
/// Rows at or after the first PAD label contribute nothing.
ad::Var lsr_ce(ad::Var pred, std::span<const int> labels, const LossConfig& cfg, LossReport* report = nullptr);

/// -sum log p(label) over rows before the first PAD.
ad::Var cross_entropy(ad::Var pred, std::span<const int> labels, LossReport* report = nullptr);

/// 1/2 (D_real - 1)^2 + 1/2 D_fake^2
ad::Var disc_loss(ad::Var d_real, ad::Var d_fake);

/// 1/2 xi mean((F - F~)^2) + 1/2 (D_fake - 1)^2
ad::Var gen_loss(ad::Var f, ad::Var f_tilde, ad::Var d_fake, const LossConfig& cfg);

/// sum_l (i_l - c_l * i~_l)^2 over length-L' vectors.
ad::Var probe_net_loss(ad::Var i, ad::Var i_tilde, ad::Var c);

/// -sum log p(label) over rows with C = 1 (and before the first PAD). Zero for an empty support.
ad::Var probe_comp_loss(ad::Var pred, std::span<const int> labels, std::span<const int> probe,
                        LossReport* report = nullptr);

/// L2 norm of each row of a (L, d) matrix -> (L).
ad::Var row_norms(ad::Var m);

/// Number of rows that count under the PAD rule.
int active_positions(std::span<const int> labels);

}  // namespace rosslink::losses
