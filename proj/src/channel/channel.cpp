#include "rosslink/channel/channel.hpp"

#include "rosslink/autodiff/ops.hpp"
#include "rosslink/common/seeding.hpp"

#include <cmath>
#include <random>

namespace rosslink::channel {

ChannelKind parse_channel_kind(std::string_view name) {
  if (name == "awgn" || name == "AWGN") return ChannelKind::awgn;
  if (name == "rayleigh" || name == "Rayleigh") return ChannelKind::rayleigh;
  throw std::invalid_argument("unknown channel kind: " + std::string(name));
}

std::string_view channel_name(ChannelKind kind) { return kind == ChannelKind::awgn ? "awgn" : "rayleigh"; }

bool ChannelConfig::noiseless() const { return std::isinf(snr_db) && snr_db > 0; }

void ChannelConfig::validate() const {
  if (std::isnan(snr_db) || (std::isinf(snr_db) && snr_db < 0)) {
    throw std::invalid_argument("channel snr_db must be finite or +inf");
  }
}

double noise_variance_for(double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return std::pow(10.0, -snr_db / 10.0);
}

SymbolMapping to_symbols(const Eigen::Ref<const Eigen::VectorXd>& f) {
  if (f.size() == 0 || f.size() % 2 != 0) {
    throw std::invalid_argument("to_symbols: feature count " + std::to_string(f.size()) +
                                " is not a positive even number");
  }
  if (!f.allFinite()) throw std::invalid_argument("to_symbols: non-finite feature");
  const double power = 2.0 * f.squaredNorm() / static_cast<double>(f.size());
  if (power == 0.0) throw std::invalid_argument("to_symbols: all-zero block has no power to normalize");
  SymbolMapping out;
  out.scale = 1.0 / std::sqrt(power);
  out.symbols.resize(f.size() / 2);
  for (Eigen::Index k = 0; k < out.symbols.size(); ++k) {
    out.symbols[k] = Complex(f[2 * k], f[2 * k + 1]) * out.scale;
  }
  return out;
}

Eigen::VectorXd from_symbols(const SymbolBlock& x, double scale) {
  Eigen::VectorXd f(2 * x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    f[2 * k] = x[k].real() / scale;
    f[2 * k + 1] = x[k].imag() / scale;
  }
  return f;
}

std::pair<SymbolBlock, ChannelRealization> apply_channel(const SymbolBlock& x, const ChannelConfig& cfg,
                                                         std::uint64_t block_index) {
  cfg.validate();
  std::mt19937_64 rng(derive_seed(cfg.seed, {block_index}));
  std::normal_distribution<double> gauss(0.0, 1.0);
  ChannelRealization r;
  r.snr_db = cfg.snr_db;
  r.noise_variance = noise_variance_for(cfg.snr_db);
  if (cfg.kind == ChannelKind::rayleigh) {
    // CN(0,1): each component has variance 1/2.
    const double re = gauss(rng);
    const double im = gauss(rng);
    r.h = Complex(re, im) * std::sqrt(0.5);
  }
  r.noise = SymbolBlock::Zero(x.size());
  if (r.noise_variance > 0.0) {
    const double sd = std::sqrt(r.noise_variance / 2.0);
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      const double re = gauss(rng);
      const double im = gauss(rng);
      r.noise[k] = Complex(re * sd, im * sd);
    }
  }
  SymbolBlock y = r.h * x + r.noise;
  return {std::move(y), std::move(r)};
}

SymbolBlock equalize(const SymbolBlock& y, const ChannelRealization& r) {
  if (std::abs(r.h) < 1e-12) throw DeepFadeError("equalize: deep fade, |h| below 1e-12");
  if (r.h == Complex(1.0, 0.0)) return y;
  return y / r.h;
}

Eigen::VectorXd transmit_normalized(const Eigen::Ref<const Eigen::VectorXd>& x, const ChannelConfig& cfg,
                                    std::uint64_t block_index, ChannelRealization* realization) {
  if (x.size() % 2 != 0) throw std::invalid_argument("transmit: odd feature count " + std::to_string(x.size()));
  SymbolBlock s(x.size() / 2);
  for (Eigen::Index k = 0; k < s.size(); ++k) s[k] = Complex(x[2 * k], x[2 * k + 1]);
  auto [y, r] = apply_channel(s, cfg, block_index);
  const SymbolBlock eq = equalize(y, r);
  Eigen::VectorXd out(x.size());
  for (Eigen::Index k = 0; k < eq.size(); ++k) {
    out[2 * k] = eq[k].real();
    out[2 * k + 1] = eq[k].imag();
  }
  if (realization != nullptr) *realization = std::move(r);
  return out;
}

ad::Var transmit_on_tape(ad::Var x, const ChannelConfig& cfg, std::uint64_t block_index,
                         ChannelRealization* realization) {
  ad::Tape& tape = *x.tape;
  ad::Var power = 2.0 * ad::mean(ad::square(x));
  if (power.item() == 0.0) throw std::invalid_argument("transmit: all-zero block has no power to normalize");
  ad::Var xn = ad::mul(x, ad::div(tape.scalar(1.0), ad::sqrt(power)));
  const Eigen::VectorXd y = transmit_normalized(xn.value().data, cfg, block_index, realization);
  return ad::add(xn, tape.constant(ad::Tensor{x.shape(), y - xn.value().data}));
}

ad::Tensor transmit(const ad::Tensor& x, const ChannelConfig& cfg, std::uint64_t block_index,
                    ChannelRealization* realization) {
  const double power = 2.0 * x.data.squaredNorm() / static_cast<double>(x.numel());
  if (power == 0.0) throw std::invalid_argument("transmit: all-zero block has no power to normalize");
  const Eigen::VectorXd xn = x.data / std::sqrt(power);
  return ad::Tensor{x.shape, transmit_normalized(xn, cfg, block_index, realization)};
}

}  // namespace rosslink::channel
