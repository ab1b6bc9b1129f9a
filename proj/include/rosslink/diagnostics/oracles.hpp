#pragma once

// Independent reference computations for the losses, the channel and the digital
// baseline's coding chain. Each row compares a measured deviation to a tolerance.

#include <cstdint>
#include <string>
#include <vector>

namespace rosslink::diagnostics {

struct CheckRow {
  std::string name;
  bool passed = false;
  double measured = 0.0;   // deviation from the reference (or the statistic itself)
  double tolerance = 0.0;
  std::string detail;
};

/// lsr_ce against direct summation on random E=4, L~=3 cases under both smoothing
/// rules, kappa=1 standard against plain CE, the adversarial hand values, and both
/// probe losses against direct masked sums.
std::vector<CheckRow> loss_oracle_checks(int trials = 200, std::uint64_t seed = 1);

/// Empirical SNR for AWGN and Rayleigh over `symbols` symbols, Rayleigh mean |h|^2
/// over `blocks` blocks, and noiseless perfect-CSI equalization.
std::vector<CheckRow> channel_checks(std::int64_t symbols = 1'000'000, int blocks = 100'000, std::uint64_t seed = 1);

/// 16-QAM round trip, unit power and Gray adjacency; Hamming(7,4) correction of every
/// single-bit error and minimum distance 3.
std::vector<CheckRow> coding_checks();

bool all_passed(const std::vector<CheckRow>& rows);

}  // namespace rosslink::diagnostics
