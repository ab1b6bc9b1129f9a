#include "rosslink/eval/eval.hpp"

#include "rosslink/common/seeding.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <random>

namespace rosslink::eval {

using channel::Complex;

std::vector<int> content_tokens(std::span<const int> seq) {
  std::vector<int> out;
  std::size_t i = !seq.empty() && seq[0] == data::kBos ? 1 : 0;
  for (; i < seq.size() && seq[i] != data::kEos; ++i) {
    if (seq[i] != data::kPad) out.push_back(seq[i]);
  }
  return out;
}

double token_accuracy(std::span<const int> ref_seq, std::span<const int> hyp_seq) {
  const auto ref = content_tokens(ref_seq), hyp = content_tokens(hyp_seq);
  const std::size_t len = std::max(ref.size(), hyp.size());
  if (len == 0) return 1.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(ref.size(), hyp.size()); ++i) hits += ref[i] == hyp[i];
  return static_cast<double>(hits) / static_cast<double>(len);
}

namespace {

Eigen::VectorXd token_embedding(int token, std::uint64_t seed, int dim) {
  std::mt19937_64 rng(derive_seed(seed, {fnv1a("sts"), static_cast<std::uint64_t>(token)}));
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = n(rng);
  return v.normalized();
}

Eigen::VectorXd mean_embedding(const std::vector<int>& tokens, std::uint64_t seed, int dim) {
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  for (int t : tokens) sum += token_embedding(t, seed, dim);
  return sum / static_cast<double>(tokens.size());
}

}  // namespace

Scored sts_proxy(std::span<const int> ref_seq, std::span<const int> hyp_seq, std::uint64_t seed, int dim) {
  if (dim < 1) throw std::invalid_argument("sts_proxy: dimension must be >= 1");
  const auto ref = content_tokens(ref_seq), hyp = content_tokens(hyp_seq);
  if (hyp.empty() || ref.empty()) return {ref.empty() && hyp.empty() ? 1.0 : 0.0, true};
  const Eigen::VectorXd a = mean_embedding(ref, seed, dim), b = mean_embedding(hyp, seed, dim);
  const double na = a.norm(), nb = b.norm();
  // Means of unit vectors can cancel exactly only in contrived cases; treat as orthogonal.
  const double cos = na > 0 && nb > 0 ? std::clamp(a.dot(b) / (na * nb), -1.0, 1.0) : 0.0;
  return {0.5 * (cos + 1.0), false};
}

Scored ngram_score(std::span<const int> ref_seq, std::span<const int> hyp_seq, int n_max) {
  if (n_max < 1) throw std::invalid_argument("ngram_score: n_max must be >= 1");
  const auto ref = content_tokens(ref_seq), hyp = content_tokens(hyp_seq);
  if (static_cast<int>(hyp.size()) < n_max) return {0.0, true};
  double log_sum = 0.0;
  for (int n = 1; n <= n_max; ++n) {
    std::map<std::vector<int>, int> ref_counts, hyp_counts;
    for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[std::vector<int>(ref.begin() + i, ref.begin() + i + n)];
    for (std::size_t i = 0; i + n <= hyp.size(); ++i) ++hyp_counts[std::vector<int>(hyp.begin() + i, hyp.begin() + i + n)];
    int clipped = 0, total = 0;
    for (const auto& [gram, c] : hyp_counts) {
      total += c;
      const auto it = ref_counts.find(gram);
      clipped += std::min(c, it == ref_counts.end() ? 0 : it->second);
    }
    if (clipped == 0) return {0.0, false};
    log_sum += std::log(static_cast<double>(clipped) / total);
  }
  const double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(ref.size()) / static_cast<double>(hyp.size())));
  return {bp * std::exp(log_sum / n_max), false};
}

namespace {

constexpr double kQamLevels[4] = {-3.0, -1.0, 3.0, 1.0};  // indexed by the two Gray bits b_hi b_lo
const double kQamScale = 1.0 / std::sqrt(10.0);

unsigned slice_axis(double v) {
  // Decision regions of -3, -1, +1, +3 and their Gray labels 00, 01, 11, 10.
  const double x = v / kQamScale;
  if (x < -2.0) return 0b00;
  if (x < 0.0) return 0b01;
  if (x < 2.0) return 0b11;
  return 0b10;
}

}  // namespace

Complex qam16_modulate(unsigned nibble) {
  if (nibble > 15) throw std::invalid_argument("qam16_modulate: value exceeds 4 bits");
  return {kQamLevels[(nibble >> 2) & 3] * kQamScale, kQamLevels[nibble & 3] * kQamScale};
}

unsigned qam16_demodulate(Complex symbol) { return (slice_axis(symbol.real()) << 2) | slice_axis(symbol.imag()); }

std::uint8_t hamming74_encode(std::uint8_t data) {
  if (data > 15) throw std::invalid_argument("hamming74_encode: value exceeds 4 bits");
  const int d1 = data & 1, d2 = (data >> 1) & 1, d3 = (data >> 2) & 1, d4 = (data >> 3) & 1;
  const int p1 = d1 ^ d2 ^ d4, p2 = d1 ^ d3 ^ d4, p3 = d2 ^ d3 ^ d4;
  return static_cast<std::uint8_t>(p1 | p2 << 1 | d1 << 2 | p3 << 3 | d2 << 4 | d3 << 5 | d4 << 6);
}

std::uint8_t hamming74_decode(std::uint8_t codeword) {
  auto bit = [&](int pos) { return (codeword >> (pos - 1)) & 1; };
  const int s1 = bit(1) ^ bit(3) ^ bit(5) ^ bit(7);
  const int s2 = bit(2) ^ bit(3) ^ bit(6) ^ bit(7);
  const int s3 = bit(4) ^ bit(5) ^ bit(6) ^ bit(7);
  const int syndrome = s1 | s2 << 1 | s3 << 2;
  if (syndrome != 0) codeword ^= static_cast<std::uint8_t>(1u << (syndrome - 1));
  return static_cast<std::uint8_t>(bit(3) | bit(5) << 1 | bit(6) << 2 | bit(7) << 3);
}

Quantizer Quantizer::fit(const data::FrameMatrix& frames) {
  if (frames.size() == 0) throw std::invalid_argument("quantizer: no values");
  return {frames.minCoeff(), frames.maxCoeff()};
}

std::uint8_t Quantizer::encode(double v) const {
  if (hi == lo) return 0;
  return static_cast<std::uint8_t>(std::clamp(std::lround((v - lo) / step()), 0L, 255L));
}

double Quantizer::decode(std::uint8_t q) const { return lo + q * step(); }

data::FrameMatrix digital_link(const data::FrameMatrix& frames, const channel::ChannelConfig& ch,
                               std::uint64_t block_index) {
  const Quantizer quant = Quantizer::fit(frames);
  // Each byte becomes two nibbles, each nibble a 7-bit codeword; codeword bits are packed
  // into 4-bit groups for the modulator.
  std::vector<std::uint8_t> bits;
  bits.reserve(frames.size() * 14);
  for (Eigen::Index i = 0; i < frames.size(); ++i) {
    const std::uint8_t q = quant.encode(frames.data()[i]);
    for (std::uint8_t nibble : {static_cast<std::uint8_t>(q & 15), static_cast<std::uint8_t>(q >> 4)}) {
      const std::uint8_t cw = hamming74_encode(nibble);
      for (int b = 0; b < 7; ++b) bits.push_back((cw >> b) & 1);
    }
  }
  const std::size_t coded = bits.size();
  bits.resize((coded + 3) / 4 * 4, 0);
  channel::SymbolBlock x(static_cast<Eigen::Index>(bits.size() / 4));
  for (Eigen::Index s = 0; s < x.size(); ++s) {
    const std::size_t o = static_cast<std::size_t>(s) * 4;
    x[s] = qam16_modulate(bits[o] << 3 | bits[o + 1] << 2 | bits[o + 2] << 1 | bits[o + 3]);
  }
  const auto [y, realization] = channel::apply_channel(x, ch, block_index);
  const channel::SymbolBlock z = channel::equalize(y, realization);
  for (Eigen::Index s = 0; s < z.size(); ++s) {
    const unsigned nib = qam16_demodulate(z[s]);
    const std::size_t o = static_cast<std::size_t>(s) * 4;
    for (int b = 0; b < 4; ++b) bits[o + b] = (nib >> (3 - b)) & 1;
  }
  data::FrameMatrix out(frames.rows(), frames.cols());
  for (Eigen::Index i = 0; i < frames.size(); ++i) {
    std::uint8_t q = 0;
    for (int half = 0; half < 2; ++half) {
      std::uint8_t cw = 0;
      const std::size_t o = (static_cast<std::size_t>(i) * 2 + half) * 7;
      for (int b = 0; b < 7; ++b) cw |= static_cast<std::uint8_t>(bits[o + b] << b);
      q |= static_cast<std::uint8_t>(hamming74_decode(cw) << (4 * half));
    }
    out.data()[i] = quant.decode(q);
  }
  return out;
}

std::vector<int> baseline_digital(const pipeline::Bundle& bundle, const data::FrameMatrix& frames,
                                  const channel::ChannelConfig& ch, std::uint64_t block_index) {
  const data::FrameMatrix received = digital_link(frames, ch, block_index);
  channel::ChannelConfig local;
  local.snr_db = std::numeric_limits<double>::infinity();
  return pipeline::infer(bundle, received, pipeline::InferMode::bypass, local, 0).tokens;
}

System parse_system(const std::string& name) {
  if (name == "ross_full") return System::ross_full;
  if (name == "generator_only") return System::generator_only;
  if (name == "deepsc_s2t_clean_encoder") return System::deepsc_s2t_clean_encoder;
  if (name == "baseline_digital") return System::baseline_digital;
  throw std::invalid_argument("unknown system '" + name +
                              "' (ross_full, generator_only, deepsc_s2t_clean_encoder, baseline_digital)");
}

std::string system_name(System s) {
  switch (s) {
    case System::ross_full: return "ross_full";
    case System::generator_only: return "generator_only";
    case System::deepsc_s2t_clean_encoder: return "deepsc_s2t_clean_encoder";
    case System::baseline_digital: return "baseline_digital";
  }
  return "?";
}

void SweepConfig::validate() const {
  if (snrs.empty()) throw std::invalid_argument("sweep: SNR list is empty");
  if (channels.empty()) throw std::invalid_argument("sweep: channel list is empty");
  if (systems.empty()) throw std::invalid_argument("sweep: system list is empty");
  if (count < 1) throw std::invalid_argument("sweep: count must be >= 1");
  for (double s : snrs) {
    if (std::isnan(s) || s == -std::numeric_limits<double>::infinity()) {
      throw std::invalid_argument("sweep: SNR values must be numbers or +inf");
    }
  }
  corruption.validate();
}

std::uint64_t sweep_channel_seed(std::uint64_t master, channel::ChannelKind kind, double snr_db) {
  return derive_seed(master, {fnv1a("sweep"), fnv1a(channel::channel_name(kind)), std::bit_cast<std::uint64_t>(snr_db)});
}

MetricReport evaluate_point(const pipeline::Bundle& bundle, System system, const channel::ChannelConfig& ch,
                            const std::vector<data::Utterance>& inputs, std::uint64_t sts_seed) {
  MetricReport r;
  r.system = system_name(system);
  r.channel = std::string(channel::channel_name(ch.kind));
  r.snr_db = ch.snr_db;
  r.seed = ch.seed;
  double acc = 0.0, ngram = 0.0, sts = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& u = inputs[i];
    std::vector<int> hyp;
    try {
      switch (system) {
        case System::ross_full:
          hyp = pipeline::infer(bundle, u.frames, pipeline::InferMode::full, ch, i).tokens;
          break;
        case System::generator_only:
          hyp = pipeline::infer(bundle, u.frames, pipeline::InferMode::generator_only, ch, i).tokens;
          break;
        case System::deepsc_s2t_clean_encoder:
          hyp = pipeline::infer(bundle, u.frames, pipeline::InferMode::bypass, ch, i).tokens;
          break;
        case System::baseline_digital:
          hyp = baseline_digital(bundle, u.frames, ch, i);
          break;
      }
    } catch (const channel::DeepFadeError&) {
      ++r.failures;
      continue;
    }
    acc += token_accuracy(u.target, hyp);
    ngram += ngram_score(u.target, hyp).value;
    sts += sts_proxy(u.target, hyp, sts_seed).value;
    ++r.n;
  }
  if (r.n > 0) {
    r.token_acc = acc / r.n;
    r.ngram = ngram / r.n;
    r.sts_proxy = sts / r.n;
  } else {
    r.token_acc = r.ngram = r.sts_proxy = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

std::vector<data::Utterance> sweep_inputs(const data::Corpus& corpus, const SweepConfig& cfg) {
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.count), corpus.test.size());
  std::vector<data::Utterance> out;
  out.reserve(count);
  const std::uint64_t seed = derive_seed(cfg.seed, {fnv1a("sweep-corruption")});
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(cfg.corrupted ? data::corrupt_in_split(corpus, data::Split::test, i, cfg.corruption, seed)
                                : corpus.test[i]);
  }
  return out;
}

std::vector<MetricReport> snr_sweep(const SweepConfig& cfg, const pipeline::Bundle& bundle, const data::Corpus& corpus) {
  cfg.validate();
  const auto inputs = sweep_inputs(corpus, cfg);
  std::vector<MetricReport> rows;
  for (System s : cfg.systems) {
    for (auto kind : cfg.channels) {
      for (double snr : cfg.snrs) {
        channel::ChannelConfig ch;
        ch.kind = kind;
        ch.snr_db = snr;
        ch.seed = sweep_channel_seed(cfg.seed, kind, snr);
        try {
          rows.push_back(evaluate_point(bundle, s, ch, inputs, cfg.sts_seed));
        } catch (const std::exception&) {
          // A system that cannot run at all (e.g. its stage is missing) yields a flagged row.
          MetricReport r;
          r.system = system_name(s);
          r.channel = std::string(channel::channel_name(kind));
          r.snr_db = snr;
          r.seed = ch.seed;
          r.failures = static_cast<int>(inputs.size());
          r.token_acc = r.ngram = r.sts_proxy = std::numeric_limits<double>::quiet_NaN();
          rows.push_back(r);
        }
      }
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const MetricReport& a, const MetricReport& b) {
    if (a.system != b.system) return a.system < b.system;
    if (a.channel != b.channel) return a.channel < b.channel;
    return a.snr_db < b.snr_db;
  });
  return rows;
}

std::string sweep_csv_header() { return "system,channel,snr_db,token_acc,ngram,sts_proxy,n,seed"; }

std::string sweep_csv_row(const MetricReport& r) {
  auto fixed = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    if (std::isinf(v)) return std::string(v > 0 ? "inf" : "-inf");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  return r.system + ',' + r.channel + ',' + fixed(r.snr_db) + ',' + fixed(r.token_acc) + ',' + fixed(r.ngram) + ',' +
         fixed(r.sts_proxy) + ',' + std::to_string(r.n) + ',' + std::to_string(r.seed);
}

void write_sweep_csv(const std::vector<MetricReport>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << sweep_csv_header() << '\n';
    for (const auto& r : rows) os << sweep_csv_row(r) << '\n';
    if (!os) throw std::runtime_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace rosslink::eval
