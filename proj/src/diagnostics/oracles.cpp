#include "rosslink/diagnostics/oracles.hpp"

#include "rosslink/channel/channel.hpp"
#include "rosslink/eval/eval.hpp"
#include "rosslink/losses/losses.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

namespace rosslink::diagnostics {

using ad::Shape;
using ad::Tensor;
using ad::Var;
using losses::SmoothingRule;

namespace {

CheckRow row(std::string name, double measured, double tolerance, std::string detail = {}) {
  return {std::move(name), measured <= tolerance, measured, tolerance, std::move(detail)};
}

double eval(const std::function<Var(ad::Tape&)>& f) {
  ad::Tape tape;
  return f(tape).item();
}

Tensor distributions(int rows, int cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Tensor t{Shape{rows, cols}};
  auto m = t.matrix();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = u(rng);
    m.row(r) /= m.row(r).sum();
  }
  return t;
}

// Sum over positions before the first PAD and over every token of w(k) * -log p.
double lsr_direct(const Tensor& p, const std::vector<int>& labels, double kappa, SmoothingRule rule) {
  const auto e = p.cols();
  const double mass = rule == SmoothingRule::paper_literal ? kappa : 1.0 - kappa;
  double loss = 0.0;
  for (std::size_t l = 0; l < labels.size() && labels[l] != losses::kPad; ++l) {
    for (std::int64_t k = 0; k < e; ++k) {
      const double w = k == labels[l] ? kappa : mass / static_cast<double>(e - 1);
      loss -= w * std::log(p.data[static_cast<Eigen::Index>(l * e + k)]);
    }
  }
  return loss;
}

double ce_direct(const Tensor& p, const std::vector<int>& labels, const std::vector<int>* probe) {
  double loss = 0.0;
  for (std::size_t l = 0; l < labels.size() && labels[l] != losses::kPad; ++l) {
    if (probe && (*probe)[l] == 0) continue;
    loss -= std::log(p.data[static_cast<Eigen::Index>(l * p.cols() + labels[l])]);
  }
  return loss;
}

channel::SymbolBlock unit_block(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, std::sqrt(0.5));
  channel::SymbolBlock x(n);
  for (Eigen::Index i = 0; i < n; ++i) x[i] = {g(rng), g(rng)};
  return x / std::sqrt(x.squaredNorm() / static_cast<double>(n));
}

}  // namespace

bool all_passed(const std::vector<CheckRow>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const CheckRow& r) { return r.passed; });
}

std::vector<CheckRow> loss_oracle_checks(int trials, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<CheckRow> rows;
  double lit = 0.0, std_rule = 0.0, kappa_one = 0.0, comp = 0.0, net = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Tensor p = distributions(3, 4, rng);
    std::vector<int> labels{static_cast<int>(rng() % 3) + 1, static_cast<int>(rng() % 4),
                            static_cast<int>(rng() % 4)};
    const double kappa = static_cast<double>(rng() % 1001) / 1000.0;
    for (auto rule : {SmoothingRule::paper_literal, SmoothingRule::standard}) {
      const losses::LossConfig cfg{.kappa = kappa, .xi = 10.0, .rule = rule};
      const double got = eval([&](ad::Tape& tp) { return losses::lsr_ce(tp.constant(p), labels, cfg); });
      double& worst = rule == SmoothingRule::paper_literal ? lit : std_rule;
      worst = std::max(worst, std::abs(got - lsr_direct(p, labels, kappa, rule)));
    }
    const losses::LossConfig one{.kappa = 1.0, .xi = 10.0, .rule = SmoothingRule::standard};
    kappa_one = std::max(kappa_one, std::abs(eval([&](ad::Tape& tp) { return losses::lsr_ce(tp.constant(p), labels, one); }) -
                                             eval([&](ad::Tape& tp) { return losses::cross_entropy(tp.constant(p), labels); })));

    const std::vector<int> probe{static_cast<int>(rng() % 2), static_cast<int>(rng() % 2), static_cast<int>(rng() % 2)};
    comp = std::max(comp, std::abs(eval([&](ad::Tape& tp) { return losses::probe_comp_loss(tp.constant(p), labels, probe); }) -
                                   ce_direct(p, labels, &probe)));

    std::uniform_real_distribution<double> u(-2.0, 2.0);
    Tensor i{Shape{4}}, it{Shape{4}}, c{Shape{4}};
    double direct = 0.0;
    for (Eigen::Index k = 0; k < 4; ++k) {
      i.data[k] = u(rng);
      it.data[k] = u(rng);
      c.data[k] = std::abs(u(rng)) / 2.0;
      direct += std::pow(i.data[k] - c.data[k] * it.data[k], 2);
    }
    net = std::max(net, std::abs(eval([&](ad::Tape& tp) {
                                   return losses::probe_net_loss(tp.constant(i), tp.constant(it), tp.constant(c));
                                 }) - direct));
  }
  rows.push_back(row("lsr_ce paper-literal vs direct sum (E=4, L=3)", lit, 1e-12));
  rows.push_back(row("lsr_ce standard vs direct sum (E=4, L=3)", std_rule, 1e-12));
  rows.push_back(row("lsr_ce standard kappa=1 vs plain CE", kappa_one, 1e-12));

  const double d = eval([](ad::Tape& tp) { return losses::disc_loss(tp.scalar(0.5), tp.scalar(0.5)); });
  rows.push_back(row("disc_loss(D_real=0.5, D_fake=0.5) = 0.25", std::abs(d - 0.25), 0.0));
  // MSE 0.1 over ten entries, xi = 10, D_fake = 0.5: 0.5 + 0.125.
  Tensor f{Shape{2, 5}}, g{Shape{2, 5}};
  f.data << 0.5, 0, 0, 0.5, 0, 0, -0.5, -0.5, 0, 0;
  const double gl = eval([&](ad::Tape& tp) {
    return losses::gen_loss(tp.constant(f), tp.constant(g), tp.scalar(0.5), {.kappa = 0.95, .xi = 10.0});
  });
  rows.push_back(row("gen_loss hand value 0.625", std::abs(gl - 0.625), 0.0));
  rows.push_back(row("probe_net_loss vs direct sum", net, 1e-12));
  rows.push_back(row("probe_comp_loss vs masked CE sum", comp, 1e-12));
  return rows;
}

std::vector<CheckRow> channel_checks(std::int64_t symbols, int blocks, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<CheckRow> rows;
  const channel::SymbolBlock x = unit_block(symbols, rng);
  for (double snr : {0.0, 6.0, 12.0}) {
    auto [y, r] = channel::apply_channel(x, {.kind = channel::ChannelKind::awgn, .snr_db = snr, .seed = seed}, 0);
    const double measured = 10.0 * std::log10(x.squaredNorm() / (y - x).squaredNorm());
    std::ostringstream name;
    name << "AWGN empirical SNR at " << snr << " dB";
    rows.push_back(row(name.str(), std::abs(measured - snr), 0.1, "measured " + std::to_string(measured)));
  }

  // Rayleigh: short blocks so |h|^2 averages over many draws; SNR over the same symbols.
  const Eigen::Index block_len = std::max<Eigen::Index>(2, symbols / std::max(blocks, 1));
  const channel::SymbolBlock xb = unit_block(block_len, rng);
  const channel::ChannelConfig ray{.kind = channel::ChannelKind::rayleigh, .snr_db = 6.0, .seed = seed};
  double h2 = 0.0, signal = 0.0, noise = 0.0;
  for (int b = 0; b < blocks; ++b) {
    auto [y, r] = channel::apply_channel(xb, ray, static_cast<std::uint64_t>(b));
    h2 += std::norm(r.h);
    signal += (r.h * xb).squaredNorm();
    noise += (y - r.h * xb).squaredNorm();
  }
  h2 /= blocks;
  const double ray_snr = 10.0 * std::log10(signal / noise);
  rows.push_back(row("Rayleigh empirical SNR at 6 dB", std::abs(ray_snr - 6.0), 0.1,
                     "measured " + std::to_string(ray_snr)));
  rows.push_back(row("Rayleigh mean |h|^2 relative deviation from 1", std::abs(h2 - 1.0), 0.02,
                     "mean " + std::to_string(h2)));

  double eq = 0.0;
  const channel::SymbolBlock xs = unit_block(64, rng);
  for (auto kind : {channel::ChannelKind::awgn, channel::ChannelKind::rayleigh}) {
    for (int b = 0; b < 100; ++b) {
      const channel::ChannelConfig clean{.kind = kind, .snr_db = std::numeric_limits<double>::infinity(), .seed = seed};
      auto [y, r] = channel::apply_channel(xs, clean, static_cast<std::uint64_t>(b));
      eq = std::max(eq, (channel::equalize(y, r) - xs).cwiseAbs().maxCoeff());
    }
  }
  rows.push_back(row("noiseless perfect-CSI equalization max error", eq, 1e-12));
  return rows;
}

std::vector<CheckRow> coding_checks() {
  std::vector<CheckRow> rows;
  int round_trip = 0, gray = 0;
  double power = 0.0;
  const double d_min = 2.0 / std::sqrt(10.0);
  for (unsigned a = 0; a < 16; ++a) {
    const auto s = eval::qam16_modulate(a);
    round_trip += eval::qam16_demodulate(s) != a;
    power += std::norm(s) / 16.0;
    for (unsigned b = a + 1; b < 16; ++b) {
      const bool neighbours = std::abs(std::abs(s - eval::qam16_modulate(b)) - d_min) < 1e-12;
      gray += neighbours && std::popcount(a ^ b) != 1;
    }
  }
  rows.push_back(row("16-QAM round-trip errors", round_trip, 0.0));
  rows.push_back(row("16-QAM mean power deviation from 1", std::abs(power - 1.0), 1e-12));
  rows.push_back(row("16-QAM neighbours differing in more than one bit", gray, 0.0));

  int uncorrected = 0, close = 0;
  for (unsigned d = 0; d < 16; ++d) {
    const auto cw = eval::hamming74_encode(static_cast<std::uint8_t>(d));
    uncorrected += eval::hamming74_decode(cw) != d;
    for (int bit = 0; bit < 7; ++bit) {
      uncorrected += eval::hamming74_decode(static_cast<std::uint8_t>(cw ^ (1u << bit))) != d;
    }
    for (unsigned e = d + 1; e < 16; ++e) {
      close += std::popcount(unsigned(cw ^ eval::hamming74_encode(static_cast<std::uint8_t>(e)))) < 3;
    }
  }
  rows.push_back(row("Hamming(7,4) words with zero or one flipped bit decoded wrongly", uncorrected, 0.0));
  rows.push_back(row("Hamming(7,4) codeword pairs closer than distance 3", close, 0.0));
  return rows;
}

}  // namespace rosslink::diagnostics
