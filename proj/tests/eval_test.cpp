#include <gtest/gtest.h>

#include "rosslink/eval/eval.hpp"
#include "tiny_setup.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <random>

using namespace rosslink;
using namespace rosslink::eval;
using namespace rosslink::fixtures;

namespace {

std::vector<int> seq(std::initializer_list<int> content) {
  std::vector<int> s{data::kBos};
  s.insert(s.end(), content);
  s.push_back(data::kEos);
  return s;
}

}  // namespace

TEST(TokenAccuracy, Oracles) {
  EXPECT_EQ(token_accuracy(seq({3, 4, 5, 6}), seq({3, 4, 5, 6})), 1.0);
  EXPECT_EQ(token_accuracy(seq({3, 4, 5, 6}), seq({7, 8, 9, 10})), 0.0);
  EXPECT_EQ(token_accuracy(seq({3, 4, 5, 6}), seq({3, 4, 5, 9})), 0.75);
  EXPECT_EQ(token_accuracy(seq({3, 4, 5, 6}), seq({3, 4, 5})), 0.75);
  EXPECT_EQ(token_accuracy(seq({3, 4}), seq({3, 4, 5, 6})), 0.5);
  // PAD after EOS is ignored, a missing EOS is tolerated.
  EXPECT_EQ(token_accuracy(std::vector<int>{1, 3, 4, 2, 0, 0}, std::vector<int>{1, 3, 4}), 1.0);
}

TEST(StsProxy, Oracles) {
  EXPECT_DOUBLE_EQ(sts_proxy(seq({3, 4, 5}), seq({3, 4, 5}), 1).value, 1.0);
  EXPECT_NEAR(sts_proxy(seq({3, 4, 5, 6}), seq({6, 5, 3, 4}), 1).value, 1.0, 1e-12);
  const Scored empty = sts_proxy(seq({3, 4}), seq({}), 1);
  EXPECT_EQ(empty.value, 0.0);
  EXPECT_TRUE(empty.flagged);
}

TEST(StsProxy, UnrelatedPairsConcentrateAtHalf) {
  // Cosines of independent random unit vectors in d dimensions have spread 1/sqrt(d).
  const double band = 3.0 / std::sqrt(static_cast<double>(kStsDim));
  int inside = 0;
  double mean = 0.0;
  const int trials = 2000;
  for (int t = 0; t < trials; ++t) {
    const double s = sts_proxy(seq({3}), seq({4}), 1000 + t).value;
    mean += s / trials;
    inside += std::abs(s - 0.5) <= band;
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
  EXPECT_NEAR(mean, 0.5, 0.02);
  EXPECT_GE(inside, trials * 99 / 100);
}

TEST(NgramScore, Oracles) {
  EXPECT_DOUBLE_EQ(ngram_score(seq({3, 4, 5, 6}), seq({3, 4, 5, 6})).value, 1.0);
  const Scored short_hyp = ngram_score(seq({3, 4, 5, 6}), seq({3, 4, 5}));
  EXPECT_EQ(short_hyp.value, 0.0);
  EXPECT_TRUE(short_hyp.flagged);
  // Unigrams 3/4 clipped, bigrams 1/3: sqrt(3/4 * 1/3) = 1/2, equal lengths.
  EXPECT_DOUBLE_EQ(ngram_score(seq({3, 4, 5, 6}), seq({3, 4, 4, 6}), 2).value, 0.5);
  // Exact prefix, brevity penalty exp(1 - 6/4).
  EXPECT_NEAR(ngram_score(seq({3, 4, 5, 6, 7, 8}), seq({3, 4, 5, 6}), 2).value, std::exp(-0.5), 1e-15);
  // Clipping: repeated token counts once per reference occurrence.
  EXPECT_DOUBLE_EQ(ngram_score(seq({3, 4}), seq({3, 3}), 1).value, 0.5);
}

TEST(Qam16, RoundTripPowerAndGray) {
  double power = 0.0;
  for (unsigned v = 0; v < 16; ++v) {
    const auto s = qam16_modulate(v);
    EXPECT_EQ(qam16_demodulate(s), v);
    power += std::norm(s) / 16.0;
  }
  EXPECT_NEAR(power, 1.0, 1e-15);
  // Nearest neighbours differ in exactly one bit.
  const double d_min = 2.0 / std::sqrt(10.0);
  for (unsigned a = 0; a < 16; ++a) {
    for (unsigned b = a + 1; b < 16; ++b) {
      if (std::abs(std::abs(qam16_modulate(a) - qam16_modulate(b)) - d_min) < 1e-12) {
        EXPECT_EQ(std::popcount(a ^ b), 1) << a << " " << b;
      }
    }
  }
  EXPECT_THROW(qam16_modulate(16), std::invalid_argument);
}

TEST(Hamming74, CorrectsEverySingleFlip) {
  for (std::uint8_t d = 0; d < 16; ++d) {
    const std::uint8_t cw = hamming74_encode(d);
    EXPECT_LT(cw, 128);
    EXPECT_EQ(hamming74_decode(cw), d);
    for (int bit = 0; bit < 7; ++bit) EXPECT_EQ(hamming74_decode(cw ^ (1 << bit)), d) << int(d) << " bit " << bit;
    for (std::uint8_t e = d + 1; e < 16; ++e) EXPECT_GE(std::popcount(unsigned(cw ^ hamming74_encode(e))), 3);
  }
}

TEST(DigitalLink, NoiselessWithinOneQuantizationStep) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.5);
  data::FrameMatrix f(20, 16);
  for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = n(rng);
  channel::ChannelConfig ch;
  ch.snr_db = std::numeric_limits<double>::infinity();
  const Quantizer q = Quantizer::fit(f);
  for (auto kind : {channel::ChannelKind::awgn, channel::ChannelKind::rayleigh}) {
    ch.kind = kind;
    const data::FrameMatrix out = digital_link(f, ch, 7);
    EXPECT_LE((out - f).cwiseAbs().maxCoeff(), q.step());
  }
  // Low SNR corrupts values; same seed reproduces the same output.
  ch.kind = channel::ChannelKind::awgn;
  ch.snr_db = 0.0;
  const data::FrameMatrix noisy = digital_link(f, ch, 7);
  EXPECT_GT((noisy - f).cwiseAbs().maxCoeff(), q.step());
  EXPECT_TRUE(noisy == digital_link(f, ch, 7));
}

TEST(Sweep, CardinalitySortingAndDeterminism) {
  const auto dir = scratch_dir("sweep");
  const data::Corpus corpus = data::generate_corpus(tiny_corpus_spec());
  train_all(dir, corpus, 2);
  const auto bundle = pipeline::Bundle::load(dir, 3);
  SweepConfig cfg;
  cfg.snrs = {6.0, 0.0};
  cfg.count = 4;
  cfg.seed = 11;
  const auto rows = snr_sweep(cfg, bundle, corpus);
  ASSERT_EQ(rows.size(), 4u * 2u * 2u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& a = rows[i - 1];
    const auto& b = rows[i];
    EXPECT_TRUE(std::tie(a.system, a.channel, a.snr_db) < std::tie(b.system, b.channel, b.snr_db));
  }
  for (const auto& r : rows) {
    EXPECT_EQ(r.n, 4);
    for (double v : {r.token_acc, r.ngram, r.sts_proxy}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_EQ(r.seed, sweep_channel_seed(11, channel::parse_channel_kind(r.channel), r.snr_db));
  }
  const auto p1 = dir / "a.csv", p2 = dir / "b.csv";
  write_sweep_csv(rows, p1);
  write_sweep_csv(snr_sweep(cfg, bundle, corpus), p2);
  EXPECT_EQ(read_file(p1), read_file(p2));
  const std::string csv = read_file(p1);
  EXPECT_EQ(csv.rfind("system,channel,snr_db,token_acc,ngram,sts_proxy,n,seed\n", 0), 0u);
  EXPECT_NE(csv.find("baseline_digital,awgn,0.000000,"), std::string::npos);
}

TEST(Sweep, MissingStageFlagsRowsAndContinues) {
  const auto dir = scratch_dir("sweep_missing");
  const data::Corpus corpus = data::generate_corpus(tiny_corpus_spec());
  pipeline::train(tiny_train(dir, 1, 1), tiny_model(), corpus);
  const auto bundle = pipeline::Bundle::load(dir, 1);
  SweepConfig cfg;
  cfg.snrs = {3.0};
  cfg.channels = {channel::ChannelKind::awgn};
  cfg.count = 2;
  const auto rows = snr_sweep(cfg, bundle, corpus);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    const bool needs_later_stage = r.system == "ross_full" || r.system == "generator_only";
    EXPECT_EQ(r.n, needs_later_stage ? 0 : 2) << r.system;
    EXPECT_EQ(std::isnan(r.sts_proxy), needs_later_stage) << r.system;
  }
}

TEST(Sweep, ConfigValidation) {
  SweepConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.snrs.clear();
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.systems.clear();
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_EQ(parse_system("ross_full"), System::ross_full);
  EXPECT_THROW(parse_system("nope"), std::invalid_argument);
}
