#include "rosslink/data/corpus.hpp"

#include "rosslink/common/seeding.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rosslink::data {

namespace {

constexpr std::uint64_t kTagPrototypes = 0x70726F746FULL;
constexpr std::uint64_t kTagChain = 0x636861696EULL;
constexpr std::uint64_t kTagUtterance = 0x757474ULL;

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace

Vocabulary Vocabulary::make(int content_tokens, const std::string& prefix) {
  Vocabulary v;
  v.tokens = {"<pad>", "<bos>", "<eos>"};
  for (int i = 0; i < content_tokens; ++i) {
    v.tokens.push_back(prefix + (i < 10 ? "0" : "") + std::to_string(i));
  }
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = std::find(tokens.begin(), tokens.end(), token);
  if (it == tokens.end()) throw std::out_of_range("unknown token: " + token);
  return static_cast<int>(it - tokens.begin());
}

std::string Vocabulary::render(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPad) break;
    if (!out.empty()) out += ' ';
    out += (id >= 0 && id < size()) ? tokens[id] : "<unk>";
  }
  return out;
}

void CorpusSpec::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("corpus spec: " + what);
  };
  need(content_tokens >= 1, "vocabulary needs at least one content token beyond PAD, BOS, EOS");
  need(frames_per_token >= 1, "frames_per_token must be >= 1");
  need(frame_dim >= 1, "frame_dim must be >= 1");
  need(frame_noise >= 0.0, "frame_noise must be >= 0");
  need(min_len >= 1 && min_len <= max_len, "utterance length range is empty");
  need(max_len + 2 <= max_target_len, "max_len + 2 must fit in max_target_len");
  need(successors >= 1 && successors <= content_tokens, "successors must lie in [1, content_tokens]");
  need(train_size >= 1 && test_size >= 1, "splits must be non-empty");
}

std::string CorpusSpec::to_header() const {
  std::ostringstream os;
  os << "#rosslink-corpus v1"
     << " content_tokens=" << content_tokens << " frames_per_token=" << frames_per_token << " frame_dim=" << frame_dim
     << " frame_noise=" << std::hexfloat << frame_noise << std::defaultfloat << " rule_seed=" << rule_seed
     << " min_len=" << min_len << " max_len=" << max_len << " max_target_len=" << max_target_len
     << " successors=" << successors << " train_size=" << train_size << " test_size=" << test_size
     << " seed=" << seed;
  return os.str();
}

CorpusSpec CorpusSpec::from_header(const std::string& line) {
  std::istringstream is(line);
  std::string magic, version;
  is >> magic >> version;
  if (magic != "#rosslink-corpus" || version != "v1") throw std::runtime_error("not a rosslink corpus header");
  std::map<std::string, std::string> kv;
  std::string item;
  while (is >> item) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::runtime_error("malformed header field: " + item);
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(std::string("corpus header lacks ") + key);
    return it->second;
  };
  CorpusSpec s;
  s.content_tokens = std::stoi(get("content_tokens"));
  s.frames_per_token = std::stoi(get("frames_per_token"));
  s.frame_dim = std::stoi(get("frame_dim"));
  s.frame_noise = std::strtod(get("frame_noise").c_str(), nullptr);
  s.rule_seed = std::stoull(get("rule_seed"));
  s.min_len = std::stoi(get("min_len"));
  s.max_len = std::stoi(get("max_len"));
  s.max_target_len = std::stoi(get("max_target_len"));
  s.successors = std::stoi(get("successors"));
  s.train_size = std::stoi(get("train_size"));
  s.test_size = std::stoi(get("test_size"));
  s.seed = std::stoull(get("seed"));
  s.validate();
  return s;
}

TranslationRule TranslationRule::make(const CorpusSpec& spec) {
  TranslationRule r;
  const int v = spec.vocab_size();
  std::vector<int> content(spec.content_tokens);
  std::iota(content.begin(), content.end(), kReserved);
  std::mt19937_64 rng(derive_seed(spec.rule_seed, {}));
  std::shuffle(content.begin(), content.end(), rng);
  r.forward.resize(v);
  r.inverse.resize(v);
  for (int i = 0; i < kReserved; ++i) r.forward[i] = r.inverse[i] = i;
  for (int i = 0; i < spec.content_tokens; ++i) {
    r.forward[kReserved + i] = content[i];
    r.inverse[content[i]] = kReserved + i;
  }
  return r;
}

namespace {

void swap_pairs(std::vector<int>& seq) {
  for (std::size_t i = 0; i + 1 < seq.size(); i += 2) std::swap(seq[i], seq[i + 1]);
}

}  // namespace

std::vector<int> TranslationRule::translate(const std::vector<int>& source) const {
  std::vector<int> out;
  out.reserve(source.size());
  for (int s : source) out.push_back(forward.at(s));
  swap_pairs(out);
  return out;
}

std::vector<int> TranslationRule::invert(const std::vector<int>& target) const {
  std::vector<int> out = target;
  swap_pairs(out);
  for (int& t : out) t = inverse.at(t);
  return out;
}

std::vector<int> make_target(const TranslationRule& rule, const std::vector<int>& source, int max_target_len) {
  if (static_cast<int>(source.size()) + 2 > max_target_len) {
    throw std::invalid_argument("source of length " + std::to_string(source.size()) + " does not fit target length " +
                                std::to_string(max_target_len));
  }
  std::vector<int> t{kBos};
  for (int x : rule.translate(source)) t.push_back(x);
  t.push_back(kEos);
  t.resize(max_target_len, kPad);
  return t;
}

double Corpus::frame_rms() const {
  double ss = 0.0;
  double n = 0.0;
  for (const auto* part : {&train, &test}) {
    for (const auto& u : *part) {
      ss += u.frames.squaredNorm();
      n += static_cast<double>(u.frames.size());
    }
  }
  return n > 0 ? std::sqrt(ss / n) : 0.0;
}

Corpus corpus_skeleton(const CorpusSpec& spec) {
  spec.validate();
  Corpus c;
  c.spec = spec;
  c.rule = TranslationRule::make(spec);

  std::mt19937_64 prng(derive_seed(spec.seed, {kTagPrototypes}));
  std::normal_distribution<double> gauss(0.0, 1.0);
  c.prototypes = FrameMatrix::Zero(spec.vocab_size(), spec.frame_dim);
  for (int t = kReserved; t < spec.vocab_size(); ++t) {
    for (int d = 0; d < spec.frame_dim; ++d) c.prototypes(t, d) = gauss(prng);
  }
  double min_dist = std::numeric_limits<double>::infinity();
  for (int a = kReserved; a < spec.vocab_size(); ++a) {
    for (int b = a + 1; b < spec.vocab_size(); ++b) {
      min_dist = std::min(min_dist, (c.prototypes.row(a) - c.prototypes.row(b)).norm());
    }
  }
  if (spec.content_tokens > 1 && spec.frame_noise > 0.3 * min_dist) {
    throw std::invalid_argument("corpus spec: frame_noise exceeds 0.3 of the minimum prototype distance (" +
                                std::to_string(min_dist) + ")");
  }

  std::mt19937_64 crng(derive_seed(spec.seed, {kTagChain}));
  c.chain.assign(spec.vocab_size(), {});
  for (int t = kReserved; t < spec.vocab_size(); ++t) {
    std::vector<int> all(spec.content_tokens);
    std::iota(all.begin(), all.end(), kReserved);
    std::shuffle(all.begin(), all.end(), crng);
    c.chain[t].assign(all.begin(), all.begin() + spec.successors);
  }
  return c;
}

Corpus generate_corpus(const CorpusSpec& spec) {
  Corpus c = corpus_skeleton(spec);
  const int total = spec.train_size + spec.test_size;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int id = 0; id < total; ++id) {
    std::mt19937_64 rng(derive_seed(spec.seed, {kTagUtterance, static_cast<std::uint64_t>(id)}));
    Utterance u;
    u.id = id;
    u.split = id < spec.train_size ? Split::train : Split::test;
    const int len = uniform_int(rng, spec.min_len, spec.max_len);
    u.source.push_back(uniform_int(rng, kReserved, spec.vocab_size() - 1));
    while (static_cast<int>(u.source.size()) < len) {
      const auto& next = c.chain[u.source.back()];
      u.source.push_back(next[uniform_int(rng, 0, static_cast<int>(next.size()) - 1)]);
    }
    u.target = make_target(c.rule, u.source, spec.max_target_len);
    u.frames.resize(static_cast<Eigen::Index>(len) * spec.frames_per_token, spec.frame_dim);
    for (int k = 0; k < len; ++k) {
      for (int j = 0; j < spec.frames_per_token; ++j) {
        const Eigen::Index row = static_cast<Eigen::Index>(k) * spec.frames_per_token + j;
        for (int d = 0; d < spec.frame_dim; ++d) {
          u.frames(row, d) = c.prototypes(u.source[k], d) + spec.frame_noise * gauss(rng);
        }
      }
    }
    (u.split == Split::train ? c.train : c.test).push_back(std::move(u));
  }
  if (const double acc = nearest_prototype_accuracy(c); acc < 1.0) {
    throw std::runtime_error("generated corpus fails the nearest-prototype check (accuracy " + std::to_string(acc) +
                             "); lower frame_noise");
  }
  return c;
}

double nearest_prototype_accuracy(const Corpus& corpus) {
  const int v = corpus.spec.vocab_size();
  std::size_t right = 0, total = 0;
  for (const auto* part : {&corpus.train, &corpus.test}) {
    for (const auto& u : *part) {
      for (Eigen::Index row = 0; row < u.frames.rows(); ++row) {
        int best = -1;
        double best_d = std::numeric_limits<double>::infinity();
        for (int t = kReserved; t < v; ++t) {
          const double d = (u.frames.row(row) - corpus.prototypes.row(t)).squaredNorm();
          if (d < best_d) {
            best_d = d;
            best = t;
          }
        }
        right += best == u.source[row / corpus.spec.frames_per_token];
        ++total;
      }
    }
  }
  return total == 0 ? 1.0 : static_cast<double>(right) / static_cast<double>(total);
}

void CorruptionSpec::validate() const {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("corruption fraction must lie in [0, 1]");
  if (spans < 0) throw std::invalid_argument("corruption spans must be >= 0");
  if (fraction == 0.0 && spans > 0) throw std::invalid_argument("corruption fraction 0 with spans > 0");
  if (fraction > 0.0 && spans == 0) throw std::invalid_argument("corruption fraction > 0 needs spans >= 1");
  if (burst_sigma < 0.0) throw std::invalid_argument("burst sigma must be >= 0");
}

CorruptionKind parse_corruption_kind(const std::string& name) {
  if (name == "interference") return CorruptionKind::interference;
  if (name == "noise_burst" || name == "noise-burst") return CorruptionKind::noise_burst;
  throw std::invalid_argument("unknown corruption kind: " + name);
}

std::string corruption_kind_name(CorruptionKind kind) {
  return kind == CorruptionKind::interference ? "interference" : "noise_burst";
}

Utterance corrupt(const Utterance& u, const CorruptionSpec& spec, double burst_sigma, const Utterance* interferer,
                  std::mt19937_64& rng) {
  spec.validate();
  Utterance out = u;
  const int frames = static_cast<int>(u.frames.rows());
  out.mask.assign(frames, 0);
  if (spec.spans == 0) return out;
  const int corrupted = std::clamp(static_cast<int>(std::lround(spec.fraction * frames)), 0, frames);
  if (corrupted < spec.spans) {
    throw std::invalid_argument("corruption: " + std::to_string(corrupted) + " corrupted frames cannot form " +
                                std::to_string(spec.spans) + " spans");
  }
  if (spec.kind == CorruptionKind::interference && (interferer == nullptr || interferer->frames.rows() == 0)) {
    throw std::invalid_argument("interference corruption needs a non-empty interfering utterance");
  }
  // Span lengths as even as possible; the free frames are split into spans + 1 gaps
  // by sorted uniform cut points (interior gaps may be empty, merging adjacent spans).
  std::vector<int> lengths(spec.spans, corrupted / spec.spans);
  for (int i = 0; i < corrupted % spec.spans; ++i) ++lengths[i];
  const int free = frames - corrupted;
  std::vector<int> cuts(spec.spans);
  for (int& c : cuts) c = uniform_int(rng, 0, free);
  std::sort(cuts.begin(), cuts.end());
  int pos = 0, prev_cut = 0;
  for (int s = 0; s < spec.spans; ++s) {
    pos += cuts[s] - prev_cut;
    prev_cut = cuts[s];
    for (int k = 0; k < lengths[s]; ++k) out.mask[pos + k] = 1;
    pos += lengths[s];
  }

  std::normal_distribution<double> gauss(0.0, burst_sigma);
  const int offset = interferer != nullptr ? uniform_int(rng, 0, static_cast<int>(interferer->frames.rows()) - 1) : 0;
  int taken = 0;
  for (int f = 0; f < frames; ++f) {
    if (!out.mask[f]) continue;
    if (spec.kind == CorruptionKind::noise_burst) {
      for (Eigen::Index d = 0; d < out.frames.cols(); ++d) out.frames(f, d) = gauss(rng);
    } else {
      const auto src = (offset + taken) % interferer->frames.rows();
      out.frames.row(f) = interferer->frames.row(src);
    }
    ++taken;
  }
  return out;
}

Utterance corrupt_in_split(const Corpus& corpus, Split split, std::size_t index, const CorruptionSpec& spec,
                           std::uint64_t seed) {
  const auto& utts = corpus.split(split);
  const Utterance& u = utts.at(index);
  std::mt19937_64 rng(derive_seed(seed, {static_cast<std::uint64_t>(u.id)}));
  const Utterance* other = nullptr;
  if (utts.size() > 1) {
    auto j = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(utts.size()) - 2));
    if (j >= index) ++j;
    other = &utts[j];
  }
  const double sigma = spec.burst_sigma > 0.0 ? spec.burst_sigma : 3.0 * corpus.frame_rms();
  return corrupt(u, spec, sigma, other, rng);
}

std::vector<int> frame_mask_to_probe_truth(const std::vector<std::uint8_t>& mask, int frames_per_token,
                                           int max_target_len) {
  if (frames_per_token <= 0 || mask.size() % frames_per_token != 0) {
    throw std::invalid_argument("probe truth: mask length " + std::to_string(mask.size()) +
                                " is not a multiple of frames_per_token " + std::to_string(frames_per_token));
  }
  std::vector<int> truth(max_target_len, 0);
  const std::size_t slots = std::min<std::size_t>(mask.size() / frames_per_token, max_target_len);
  for (std::size_t l = 0; l < slots; ++l) {
    for (int j = 0; j < frames_per_token; ++j) truth[l] |= mask[l * frames_per_token + j] ? 1 : 0;
  }
  return truth;
}

namespace {

constexpr char kHex[] = "0123456789abcdef";

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(v[i]);
  }
  return out;
}

std::string record_line(const Utterance& u) {
  std::string line = std::to_string(u.id);
  line += u.split == Split::train ? "\ttrain\t" : "\ttest\t";
  line += join_ints(u.source);
  line += '\t';
  line += join_ints(u.target);
  line += '\t';
  line += std::to_string(u.frames.rows()) + ":";
  const auto* bytes = reinterpret_cast<const unsigned char*>(u.frames.data());
  for (Eigen::Index i = 0; i < u.frames.size() * static_cast<Eigen::Index>(sizeof(double)); ++i) {
    line += kHex[bytes[i] >> 4];
    line += kHex[bytes[i] & 15];
  }
  line += '\t';
  if (u.mask.empty()) {
    line += '-';
  } else {
    for (auto m : u.mask) line += m ? '1' : '0';
  }
  return line;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument("bad integer '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  throw std::invalid_argument(std::string("bad hex digit '") + c + "'");
}

Utterance parse_record(const std::string& line, const CorpusSpec& spec) {
  const auto f = split_tabs(line);
  if (f.size() != 6) throw std::invalid_argument("expected 6 tab-separated fields, got " + std::to_string(f.size()));
  Utterance u;
  u.id = std::stoi(f[0]);
  if (f[1] == "train") {
    u.split = Split::train;
  } else if (f[1] == "test") {
    u.split = Split::test;
  } else {
    throw std::invalid_argument("unknown split '" + f[1] + "'");
  }
  u.source = parse_ints(f[2]);
  u.target = parse_ints(f[3]);
  const auto colon = f[4].find(':');
  if (colon == std::string::npos) throw std::invalid_argument("frame field lacks row count");
  const int rows = std::stoi(f[4].substr(0, colon));
  const std::string hex = f[4].substr(colon + 1);
  const std::size_t bytes = static_cast<std::size_t>(rows) * spec.frame_dim * sizeof(double);
  if (rows <= 0 || hex.size() != 2 * bytes) throw std::invalid_argument("frame dump has the wrong length");
  u.frames.resize(rows, spec.frame_dim);
  auto* out = reinterpret_cast<unsigned char*>(u.frames.data());
  for (std::size_t i = 0; i < bytes; ++i) {
    out[i] = static_cast<unsigned char>(hex_value(hex[2 * i]) << 4 | hex_value(hex[2 * i + 1]));
  }
  if (f[5] != "-") {
    for (char c : f[5]) {
      if (c != '0' && c != '1') throw std::invalid_argument("mask must be a 0/1 string");
      u.mask.push_back(c == '1');
    }
    if (static_cast<int>(u.mask.size()) != rows) throw std::invalid_argument("mask length differs from frame count");
  }
  if (static_cast<int>(u.target.size()) != spec.max_target_len) throw std::invalid_argument("target length mismatch");
  if (rows != static_cast<int>(u.source.size()) * spec.frames_per_token) {
    throw std::invalid_argument("frame count differs from frames_per_token x source length");
  }
  return u;
}

void write_records(const CorpusSpec& spec, const std::vector<const Utterance*>& utts, const std::filesystem::path& path) {
  std::uint64_t checksum = fnv1a("");
  std::string body;
  for (const auto* u : utts) {
    std::string line = record_line(*u);
    checksum = splitmix64(checksum ^ fnv1a(line));
    body += line;
    body += '\n';
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  char sum[17];
  for (int i = 0; i < 16; ++i) sum[i] = kHex[(checksum >> (60 - 4 * i)) & 15];
  sum[16] = '\0';
  os << spec.to_header() << " records=" << utts.size() << " checksum=" << sum << '\n' << body;
  if (!os.flush()) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::vector<const Utterance*> all;
  for (const auto& u : corpus.train) all.push_back(&u);
  for (const auto& u : corpus.test) all.push_back(&u);
  write_records(corpus.spec, all, path);
}

void save_utterances(const CorpusSpec& spec, const std::vector<Utterance>& utts, const std::filesystem::path& path) {
  std::vector<const Utterance*> all;
  for (const auto& u : utts) all.push_back(&u);
  write_records(spec, all, path);
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open corpus " + path.string());
  std::string header;
  if (!std::getline(is, header)) throw std::runtime_error(path.string() + ":1: empty file");

  auto take = [&](const std::string& key) {
    const auto at = header.rfind(" " + key + "=");
    if (at == std::string::npos) throw std::runtime_error(path.string() + ":1: header lacks " + key);
    std::string value = header.substr(at + key.size() + 2);
    header.erase(at);
    return value;
  };
  const std::string checksum_text = take("checksum");
  const std::uint64_t records = std::stoull(take("records"));
  CorpusSpec spec;
  try {
    spec = CorpusSpec::from_header(header);
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ":1: " + e.what());
  }
  Corpus c = corpus_skeleton(spec);

  std::uint64_t checksum = fnv1a("");
  std::string line;
  std::uint64_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    try {
      Utterance u = parse_record(line, spec);
      (u.split == Split::train ? c.train : c.test).push_back(std::move(u));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(n + 1) + ": " + e.what());
    }
    checksum = splitmix64(checksum ^ fnv1a(line));
  }
  if (n != records) {
    throw std::runtime_error(path.string() + ":" + std::to_string(n + 1) + ": header announces " +
                             std::to_string(records) + " records, found " + std::to_string(n));
  }
  char sum[17];
  for (int i = 0; i < 16; ++i) sum[i] = kHex[(checksum >> (60 - 4 * i)) & 15];
  sum[16] = '\0';
  if (checksum_text != sum) throw std::runtime_error(path.string() + ": checksum mismatch");
  return c;
}

}  // namespace rosslink::data
