#pragma once

#include "rosslink/pipeline/pipeline.hpp"

#include <array>
#include <bitset>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace rosslink::eval {

/// A metric value with a flag for degenerate input (empty hypothesis, too short for n-grams).
struct Scored {
  double value = 0.0;
  bool flagged = false;
};

/// Content tokens of a sequence: leading BOS dropped, cut at the first EOS, PAD removed.
std::vector<int> content_tokens(std::span<const int> seq);

/// Exact-match rate over aligned content positions up to the longer length.
/// Missing positions are errors; two empty sequences score 1.
double token_accuracy(std::span<const int> ref, std::span<const int> hyp);

inline constexpr int kStsDim = 32;

/// Cosine of mean content-token embeddings mapped from [-1, 1] to [0, 1]. The table holds one
/// random unit vector per token id, drawn from `seed`. Order-insensitive by construction.
Scored sts_proxy(std::span<const int> ref, std::span<const int> hyp, std::uint64_t seed, int dim = kStsDim);

/// Geometric mean of clipped n-gram precisions (n = 1..n_max) times the brevity penalty
/// min(1, exp(1 - |ref| / |hyp|)). Flagged and 0 when the hypothesis has fewer than n_max tokens.
Scored ngram_score(std::span<const int> ref, std::span<const int> hyp, int n_max = 4);

// --- digital baseline pieces ---

/// Gray-mapped 16-QAM with unit average power. Bits b0 b1 pick the in-phase level and b2 b3
/// the quadrature level, each through 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3, scaled by 1/sqrt(10).
channel::Complex qam16_modulate(unsigned nibble);
/// Minimum-distance decision.
unsigned qam16_demodulate(channel::Complex symbol);

/// Hamming(7,4) with codeword bits [p1 p2 d1 p3 d2 d3 d4] (bit i of the result is position i+1).
std::uint8_t hamming74_encode(std::uint8_t data);
/// Corrects any single bit error; returns the 4 data bits.
std::uint8_t hamming74_decode(std::uint8_t codeword);

/// 8-bit uniform quantizer over [lo, hi]; step = (hi - lo) / 255.
struct Quantizer {
  double lo = 0.0, hi = 0.0;

  static Quantizer fit(const data::FrameMatrix& frames);
  double step() const { return (hi - lo) / 255.0; }
  std::uint8_t encode(double v) const;
  double decode(std::uint8_t q) const;
};

/// Frames -> bits -> Hamming(7,4) -> 16-QAM -> channel block -> equalize -> demodulate -> decode
/// -> frames. The quantizer range travels as error-free side information.
data::FrameMatrix digital_link(const data::FrameMatrix& frames, const channel::ChannelConfig& channel,
                               std::uint64_t block_index);

/// Digital link followed by receiver-side stage-1 inference on the reconstructed frames.
std::vector<int> baseline_digital(const pipeline::Bundle& bundle, const data::FrameMatrix& frames,
                                  const channel::ChannelConfig& channel, std::uint64_t block_index);

// --- sweeps ---

enum class System { ross_full, generator_only, deepsc_s2t_clean_encoder, baseline_digital };
System parse_system(const std::string& name);
std::string system_name(System s);

struct MetricReport {
  std::string system;
  std::string channel;
  double snr_db = 0.0;
  double token_acc = 0.0;
  double ngram = 0.0;
  double sts_proxy = 0.0;
  int n = 0;
  std::uint64_t seed = 0;
  int failures = 0;  // utterances whose inference threw; excluded from the means
};

struct SweepConfig {
  std::vector<double> snrs{0.0, 3.0, 6.0, 9.0, 12.0};
  std::vector<channel::ChannelKind> channels{channel::ChannelKind::awgn, channel::ChannelKind::rayleigh};
  std::vector<System> systems{System::ross_full, System::generator_only, System::deepsc_s2t_clean_encoder,
                              System::baseline_digital};
  int count = 200;             // test utterances, from the start of the test split
  bool corrupted = true;       // corrupt the inputs (the reference is always the clean target)
  data::CorruptionSpec corruption;
  std::uint64_t seed = 1;      // master seed for channel draws and corruption
  std::uint64_t sts_seed = 17; // embedding table of the similarity proxy

  void validate() const;
};

/// Seed of the channel at one sweep point. It ignores the system, so every system sees the
/// same fading and noise draws for a given (channel, SNR, utterance).
std::uint64_t sweep_channel_seed(std::uint64_t master, channel::ChannelKind kind, double snr_db);

/// One system at one channel point over prepared inputs.
MetricReport evaluate_point(const pipeline::Bundle& bundle, System system, const channel::ChannelConfig& channel,
                            const std::vector<data::Utterance>& inputs, std::uint64_t sts_seed);

/// Test inputs of a sweep: the first `count` test utterances, corrupted if requested.
std::vector<data::Utterance> sweep_inputs(const data::Corpus& corpus, const SweepConfig& cfg);

/// Every (system, channel, SNR) point, sorted by system name, channel name, then SNR.
std::vector<MetricReport> snr_sweep(const SweepConfig& cfg, const pipeline::Bundle& bundle, const data::Corpus& corpus);

std::string sweep_csv_header();
std::string sweep_csv_row(const MetricReport& r);
void write_sweep_csv(const std::vector<MetricReport>& rows, const std::filesystem::path& path);

}  // namespace rosslink::eval
