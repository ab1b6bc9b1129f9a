#include <gtest/gtest.h>

#include "rosslink/autodiff/gradcheck.hpp"
#include "rosslink/autodiff/ops.hpp"
#include "rosslink/channel/channel.hpp"

#include <cmath>
#include <limits>
#include <random>

using namespace rosslink;
using namespace rosslink::channel;

namespace {

SymbolBlock random_unit_block(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, std::sqrt(0.5));
  SymbolBlock x(n);
  for (auto& s : x) s = Complex(g(rng), g(rng));
  return x / std::sqrt(x.squaredNorm() / static_cast<double>(n));
}

}  // namespace

TEST(Symbols, PairsBecomeComplex) {
  const Eigen::Vector2d f(3.0, 4.0);
  const auto m = to_symbols(f);
  ASSERT_EQ(m.symbols.size(), 1);
  // One symbol of power 25 scales to unit power.
  EXPECT_NEAR(m.scale, 0.2, 1e-15);
  EXPECT_NEAR(m.symbols[0].real(), 0.6, 1e-15);
  EXPECT_NEAR(m.symbols[0].imag(), 0.8, 1e-15);
}

TEST(Symbols, RejectsZeroAndOdd) {
  EXPECT_THROW(to_symbols(Eigen::VectorXd::Zero(4)), std::invalid_argument);
  EXPECT_THROW(to_symbols(Eigen::VectorXd::Ones(3)), std::invalid_argument);
}

TEST(Symbols, RoundTrip) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd f(64);
    for (auto& v : f) v = g(rng);
    const auto m = to_symbols(f);
    EXPECT_NEAR(m.symbols.squaredNorm() / 32.0, 1.0, 1e-12);
    EXPECT_LE((from_symbols(m.symbols, m.scale) - f).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Channel, NoiselessAwgnIsExact) {
  const SymbolBlock x = random_unit_block(100, 2);
  ChannelConfig cfg{.kind = ChannelKind::awgn, .snr_db = std::numeric_limits<double>::infinity(), .seed = 3};
  auto [y, r] = apply_channel(x, cfg, 0);
  EXPECT_EQ((y - x).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(r.h, Complex(1.0, 0.0));
}

TEST(Channel, AwgnEmpiricalSnr) {
  const Eigen::Index n = 1'000'000;
  const SymbolBlock x = random_unit_block(n, 4);
  for (double snr : {0.0, 6.0, 12.0}) {
    auto [y, r] = apply_channel(x, {.kind = ChannelKind::awgn, .snr_db = snr, .seed = 5}, 0);
    const double signal = x.squaredNorm() / static_cast<double>(n);
    const double noise = (y - x).squaredNorm() / static_cast<double>(n);
    EXPECT_NEAR(10.0 * std::log10(signal / noise), snr, 0.1);
  }
}

TEST(Channel, RayleighGainAndSnr) {
  const int blocks = 100'000;
  const SymbolBlock x = random_unit_block(10, 6);
  const ChannelConfig cfg{.kind = ChannelKind::rayleigh, .snr_db = 6.0, .seed = 7};
  double h2 = 0.0, signal = 0.0, noise = 0.0;
  for (int b = 0; b < blocks; ++b) {
    auto [y, r] = apply_channel(x, cfg, b);
    h2 += std::norm(r.h);
    signal += (r.h * x).squaredNorm();
    noise += (y - r.h * x).squaredNorm();
  }
  EXPECT_NEAR(h2 / blocks, 1.0, 0.02);
  EXPECT_NEAR(10.0 * std::log10(signal / noise), 6.0, 0.1);
}

TEST(Channel, DeterministicPerBlock) {
  const SymbolBlock x = random_unit_block(16, 8);
  const ChannelConfig cfg{.kind = ChannelKind::rayleigh, .snr_db = 3.0, .seed = 9};
  auto [a, ra] = apply_channel(x, cfg, 42);
  auto [b, rb] = apply_channel(x, cfg, 42);
  auto [c, rc] = apply_channel(x, cfg, 43);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
}

TEST(Equalize, NoiselessRayleighRecovers) {
  const SymbolBlock x = random_unit_block(32, 10);
  const ChannelConfig cfg{.kind = ChannelKind::rayleigh, .snr_db = std::numeric_limits<double>::infinity(), .seed = 1};
  for (int b = 0; b < 20; ++b) {
    auto [y, r] = apply_channel(x, cfg, b);
    EXPECT_LE((equalize(y, r) - x).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Equalize, ResidualEqualsRecordedNoiseOverH) {
  const SymbolBlock x = random_unit_block(32, 11);
  const ChannelConfig cfg{.kind = ChannelKind::rayleigh, .snr_db = 2.0, .seed = 12};
  auto [y, r] = apply_channel(x, cfg, 5);
  EXPECT_LE((equalize(y, r) - x - r.noise / r.h).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Equalize, IdentityForUnitGainAndDeepFadeGuard) {
  const SymbolBlock y = random_unit_block(8, 13);
  ChannelRealization r;
  EXPECT_TRUE(equalize(y, r) == y);
  r.h = Complex(1e-13, 0.0);
  EXPECT_THROW(equalize(y, r), DeepFadeError);
}

TEST(Transmit, TapeValueMatchesPlainPathAndIsStraightThrough) {
  std::mt19937_64 rng(14);
  std::normal_distribution<double> g(0.0, 1.0);
  ad::Tensor f{ad::Shape{4, 6}};
  for (auto& v : f.data) v = g(rng);
  const ChannelConfig cfg{.kind = ChannelKind::rayleigh, .snr_db = 5.0, .seed = 15};
  ad::Tape tape;
  ad::Var x = tape.leaf(f, true);
  ad::Var y = transmit_on_tape(x, cfg, 3);
  const ad::Tensor plain = transmit(f, cfg, 3);
  EXPECT_LE((y.value().data - plain.data).cwiseAbs().maxCoeff(), 1e-12);

  // Gradient equals that of the normalization alone.
  ad::ScalarFn normalized = [&](ad::Tape& t, std::span<const ad::Var> v) {
    ad::Var xn = ad::mul(v[0], ad::div(t.scalar(1.0), ad::sqrt(2.0 * ad::mean(ad::square(v[0])))));
    return ad::sum(ad::mul(xn, t.constant(ad::Tensor{f.shape, Eigen::VectorXd::LinSpaced(24, -1, 1)})));
  };
  tape.backward(ad::sum(ad::mul(y, tape.constant(ad::Tensor{f.shape, Eigen::VectorXd::LinSpaced(24, -1, 1)}))));
  ad::Tape ref;
  ad::Var x2 = ref.leaf(f, true);
  ref.backward(normalized(ref, std::span<const ad::Var>(&x2, 1)));
  EXPECT_LE((x.grad() - x2.grad()).cwiseAbs().maxCoeff(), 1e-15);
}
