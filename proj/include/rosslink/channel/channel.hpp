#pragma once

#include "rosslink/autodiff/tape.hpp"

#include <Eigen/Core>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace rosslink::channel {

using Complex = std::complex<double>;
using SymbolBlock = Eigen::VectorXcd;

enum class ChannelKind { awgn, rayleigh };

ChannelKind parse_channel_kind(std::string_view name);
std::string_view channel_name(ChannelKind kind);

/// snr_db is Es/N0 per complex symbol after unit-power normalization. +inf means noiseless.
struct ChannelConfig {
  ChannelKind kind = ChannelKind::awgn;
  double snr_db = 10.0;
  std::uint64_t seed = 0;

  bool noiseless() const;
  void validate() const;
};

/// One block's draw. `noise` is kept so a received block can be replayed exactly.
struct ChannelRealization {
  Complex h{1.0, 0.0};
  double noise_variance = 0.0;
  double snr_db = 0.0;
  SymbolBlock noise;
};

struct SymbolMapping {
  SymbolBlock symbols;
  double scale = 1.0;  // symbols = scale * (pairs of f)
};

/// 10^(-snr/10); 0 for +inf.
double noise_variance_for(double snr_db);

/// Pairs consecutive reals into complex symbols and scales to unit mean power.
SymbolMapping to_symbols(const Eigen::Ref<const Eigen::VectorXd>& f);
Eigen::VectorXd from_symbols(const SymbolBlock& x, double scale);

/// y = h x + n with one h per block. Deterministic in (cfg.seed, block_index).
std::pair<SymbolBlock, ChannelRealization> apply_channel(const SymbolBlock& x, const ChannelConfig& cfg,
                                                         std::uint64_t block_index);
/// Zero-forcing y / h. Throws DeepFadeError when |h| < 1e-12.
SymbolBlock equalize(const SymbolBlock& y, const ChannelRealization& r);

class DeepFadeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Channel then equalization on already unit-power reals (pairs as symbols).
Eigen::VectorXd transmit_normalized(const Eigen::Ref<const Eigen::VectorXd>& x, const ChannelConfig& cfg,
                                    std::uint64_t block_index, ChannelRealization* realization = nullptr);

/// Power normalization followed by the channel, on a tape. The normalization is
/// differentiated; the channel is straight-through (h and n held constant, so the
/// equalized output has unit Jacobian with respect to the normalized input).
ad::Var transmit_on_tape(ad::Var x, const ChannelConfig& cfg, std::uint64_t block_index,
                         ChannelRealization* realization = nullptr);

/// Same computation without a tape, for evaluation.
ad::Tensor transmit(const ad::Tensor& x, const ChannelConfig& cfg, std::uint64_t block_index,
                    ChannelRealization* realization = nullptr);

}  // namespace rosslink::channel
