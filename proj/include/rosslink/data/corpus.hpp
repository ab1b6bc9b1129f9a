#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace rosslink::data {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kReserved = 3;

using FrameMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Ordered token names; ids 0..2 are PAD, BOS, EOS.
struct Vocabulary {
  std::vector<std::string> tokens;

  static Vocabulary make(int content_tokens, const std::string& prefix);
  int size() const { return static_cast<int>(tokens.size()); }
  int id(const std::string& token) const;
  std::string render(const std::vector<int>& ids) const;
};

struct CorpusSpec {
  int content_tokens = 24;  // both languages; vocabulary size is content_tokens + 3
  int frames_per_token = 4;
  int frame_dim = 16;
  double frame_noise = 0.2;
  std::uint64_t rule_seed = 7;
  int min_len = 4;
  int max_len = 8;
  int max_target_len = 16;  // L~, including BOS and EOS
  int successors = 2;       // allowed next tokens per source token
  int train_size = 2000;
  int test_size = 200;
  std::uint64_t seed = 2024;

  int vocab_size() const { return content_tokens + kReserved; }
  /// Longest frame sequence an utterance can have: r * L~.
  int max_frames() const { return frames_per_token * max_target_len; }
  void validate() const;
  std::string to_header() const;
  static CorpusSpec from_header(const std::string& line);
};

enum class Split { train, test };

struct Utterance {
  int id = 0;
  Split split = Split::train;
  FrameMatrix frames;           // (r * source length, frame_dim)
  std::vector<int> source;      // content ids, no BOS/EOS
  std::vector<int> target;      // BOS ... EOS, PAD-filled to L~
  std::vector<std::uint8_t> mask;  // per frame, empty when clean

  bool corrupted() const { return !mask.empty(); }
};

/// Source-to-target rule: token bijection, then swap of each adjacent pair of positions.
struct TranslationRule {
  std::vector<int> forward;  // indexed by source id, identity on reserved ids
  std::vector<int> inverse;

  static TranslationRule make(const CorpusSpec& spec);
  std::vector<int> translate(const std::vector<int>& source) const;  // content only
  std::vector<int> invert(const std::vector<int>& target) const;     // content only
};

struct Corpus {
  CorpusSpec spec;
  FrameMatrix prototypes;                // (vocab, frame_dim); reserved rows unused
  std::vector<std::vector<int>> chain;   // successors of each content id
  TranslationRule rule;
  std::vector<Utterance> train;
  std::vector<Utterance> test;

  const std::vector<Utterance>& split(Split s) const { return s == Split::train ? train : test; }
  /// RMS of all clean frame values.
  double frame_rms() const;
};

/// Everything derivable from the spec alone: prototypes, chain and rule.
Corpus corpus_skeleton(const CorpusSpec& spec);
Corpus generate_corpus(const CorpusSpec& spec);

/// Nearest-prototype accuracy over every clean frame.
double nearest_prototype_accuracy(const Corpus& corpus);

/// BOS + translated content + EOS, PAD-filled to L~.
std::vector<int> make_target(const TranslationRule& rule, const std::vector<int>& source, int max_target_len);

enum class CorruptionKind { noise_burst, interference };

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::interference;
  double fraction = 0.25;   // rho_c
  int spans = 1;
  double burst_sigma = 0.0; // 0 selects 3x the corpus frame RMS

  void validate() const;
};

CorruptionKind parse_corruption_kind(const std::string& name);
std::string corruption_kind_name(CorruptionKind kind);

/// Replaces round(fraction * frames) frames, in `spans` contiguous runs, with burst
/// noise or with frames of `interferer` read from a random offset (wrapping).
Utterance corrupt(const Utterance& u, const CorruptionSpec& spec, double burst_sigma, const Utterance* interferer,
                  std::mt19937_64& rng);

/// Corrupts utterance `index` of a split with a stream derived from (seed, id); the
/// interferer is another utterance of the same split chosen from the same stream.
Utterance corrupt_in_split(const Corpus& corpus, Split split, std::size_t index, const CorruptionSpec& spec,
                           std::uint64_t seed);

/// Token slot l is 1 iff any frame in [l r, (l+1) r) is corrupted. Length L~.
std::vector<int> frame_mask_to_probe_truth(const std::vector<std::uint8_t>& mask, int frames_per_token,
                                           int max_target_len);

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);
/// Writes utterances (possibly corrupted) in the same record format.
void save_utterances(const CorpusSpec& spec, const std::vector<Utterance>& utts, const std::filesystem::path& path);

}  // namespace rosslink::data
