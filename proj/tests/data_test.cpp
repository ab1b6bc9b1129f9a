#include <gtest/gtest.h>

#include "rosslink/data/corpus.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rosslink::data;

namespace {

CorpusSpec small_spec() {
  CorpusSpec s;
  s.train_size = 40;
  s.test_size = 10;
  return s;
}

bool same_utterance(const Utterance& a, const Utterance& b) {
  return a.id == b.id && a.split == b.split && a.source == b.source && a.target == b.target && a.mask == b.mask &&
         a.frames.rows() == b.frames.rows() &&
         std::memcmp(a.frames.data(), b.frames.data(), a.frames.size() * sizeof(double)) == 0;
}

bool same_corpus(const Corpus& a, const Corpus& b) {
  if (a.train.size() != b.train.size() || a.test.size() != b.test.size()) return false;
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    if (!same_utterance(a.train[i], b.train[i])) return false;
  }
  for (std::size_t i = 0; i < a.test.size(); ++i) {
    if (!same_utterance(a.test[i], b.test[i])) return false;
  }
  return true;
}

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST(Corpus, ZeroNoiseGivesIdenticalFramesForEqualTokens) {
  CorpusSpec s = small_spec();
  s.frame_noise = 0.0;
  const Corpus c = generate_corpus(s);
  for (const auto& u : c.train) {
    for (std::size_t k = 0; k < u.source.size(); ++k) {
      for (int j = 0; j < s.frames_per_token; ++j) {
        EXPECT_TRUE(u.frames.row(k * s.frames_per_token + j) == c.prototypes.row(u.source[k]));
      }
    }
  }
}

TEST(Corpus, Deterministic) {
  EXPECT_TRUE(same_corpus(generate_corpus(small_spec()), generate_corpus(small_spec())));
  CorpusSpec other = small_spec();
  other.seed += 1;
  EXPECT_FALSE(same_corpus(generate_corpus(small_spec()), generate_corpus(other)));
}

TEST(Corpus, InverseRuleRecoversSources) {
  const Corpus c = generate_corpus(small_spec());
  for (const auto* part : {&c.train, &c.test}) {
    for (const auto& u : *part) {
      ASSERT_EQ(u.target.front(), kBos);
      std::vector<int> content;
      for (std::size_t i = 1; i < u.target.size() && u.target[i] != kEos; ++i) content.push_back(u.target[i]);
      EXPECT_EQ(c.rule.invert(content), u.source);
    }
  }
}

TEST(Corpus, ShapesAndPrototypeCheck) {
  const Corpus c = generate_corpus(small_spec());
  EXPECT_EQ(nearest_prototype_accuracy(c), 1.0);
  for (const auto& u : c.train) {
    EXPECT_EQ(u.frames.rows(), static_cast<Eigen::Index>(u.source.size()) * 4);
    EXPECT_EQ(u.target.size(), 16u);
    EXPECT_GE(u.source.size(), 4u);
    EXPECT_LE(u.source.size(), 8u);
    for (std::size_t k = 1; k < u.source.size(); ++k) {
      const auto& next = c.chain[u.source[k - 1]];
      EXPECT_NE(std::find(next.begin(), next.end(), u.source[k]), next.end());
    }
  }
}

TEST(Corpus, RejectsTinyVocabulary) {
  CorpusSpec s = small_spec();
  s.content_tokens = 0;
  EXPECT_THROW(generate_corpus(s), std::invalid_argument);
}

TEST(Corrupt, ZeroFractionLeavesUtteranceUnchanged) {
  const Corpus c = generate_corpus(small_spec());
  std::mt19937_64 rng(1);
  const Utterance out = corrupt(c.train[0], {.fraction = 0.0, .spans = 0}, 1.0, &c.train[1], rng);
  EXPECT_TRUE(out.frames == c.train[0].frames);
  EXPECT_EQ(std::count(out.mask.begin(), out.mask.end(), 1), 0);
  EXPECT_EQ(out.mask.size(), static_cast<std::size_t>(out.frames.rows()));
}

TEST(Corrupt, FullFractionCorruptsEverything) {
  const Corpus c = generate_corpus(small_spec());
  std::mt19937_64 rng(2);
  const Utterance out =
      corrupt(c.train[0], {.kind = CorruptionKind::noise_burst, .fraction = 1.0, .spans = 2}, 3.0, nullptr, rng);
  EXPECT_EQ(std::count(out.mask.begin(), out.mask.end(), 1), out.frames.rows());
  EXPECT_EQ(out.target, c.train[0].target);
}

TEST(Corrupt, ZeroFractionWithSpansRejected) {
  const Corpus c = generate_corpus(small_spec());
  std::mt19937_64 rng(3);
  EXPECT_THROW(corrupt(c.train[0], {.fraction = 0.0, .spans = 1}, 1.0, &c.train[1], rng), std::invalid_argument);
}

TEST(Corrupt, MaskPopcountNearFraction) {
  const Corpus c = generate_corpus(small_spec());
  for (int spans : {1, 2, 3}) {
    for (std::size_t i = 0; i < c.train.size(); ++i) {
      const CorruptionSpec cs{.fraction = 0.25, .spans = spans};
      const Utterance out = corrupt_in_split(c, Split::train, i, cs, 77);
      const double frames = static_cast<double>(out.frames.rows());
      const double rate = static_cast<double>(std::count(out.mask.begin(), out.mask.end(), 1)) / frames;
      const double span_len = std::ceil(0.25 * frames / spans);
      EXPECT_LE(std::abs(rate - 0.25), span_len / frames);
      // Frames outside the mask are untouched; targets never change.
      for (Eigen::Index f = 0; f < out.frames.rows(); ++f) {
        if (!out.mask[f]) EXPECT_TRUE(out.frames.row(f) == c.train[i].frames.row(f));
      }
      EXPECT_EQ(out.target, c.train[i].target);
    }
  }
}

TEST(Corrupt, InterferenceCopiesOtherUtteranceFrames) {
  const Corpus c = generate_corpus(small_spec());
  const Utterance out = corrupt_in_split(c, Split::test, 3, {.fraction = 0.5, .spans = 1}, 5);
  int found = 0;
  for (Eigen::Index f = 0; f < out.frames.rows(); ++f) {
    if (!out.mask[f]) continue;
    for (const auto& other : c.test) {
      if (other.id == out.id) continue;
      for (Eigen::Index g = 0; g < other.frames.rows(); ++g) found += other.frames.row(g) == out.frames.row(f);
    }
  }
  EXPECT_GE(found, std::count(out.mask.begin(), out.mask.end(), 1));
  const Utterance again = corrupt_in_split(c, Split::test, 3, {.fraction = 0.5, .spans = 1}, 5);
  EXPECT_TRUE(same_utterance(out, again));
}

TEST(ProbeTruth, Oracles) {
  EXPECT_EQ(frame_mask_to_probe_truth(std::vector<std::uint8_t>(12, 0), 4, 6), std::vector<int>(6, 0));
  std::vector<std::uint8_t> one(12, 0);
  one[5] = 1;
  EXPECT_EQ(frame_mask_to_probe_truth(one, 4, 6), (std::vector<int>{0, 1, 0, 0, 0, 0}));
  EXPECT_THROW(frame_mask_to_probe_truth(std::vector<std::uint8_t>(10, 0), 4, 6), std::invalid_argument);

  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const int slots = 1 + static_cast<int>(rng() % 8);
    std::vector<std::uint8_t> m(slots * 4);
    for (auto& b : m) b = (rng() % 5) == 0;
    const auto truth = frame_mask_to_probe_truth(m, 4, 16);
    for (int l = 0; l < 16; ++l) {
      int any = 0;
      for (int f = 0; f < static_cast<int>(m.size()); ++f) any |= (f / 4 == l) && m[f];
      EXPECT_EQ(truth[l], any);
    }
  }
}

TEST(CorpusIo, RoundTripIsBitExact) {
  const Corpus c = generate_corpus(small_spec());
  const auto path = temp_file("rosslink_corpus_rt.tsv");
  save_corpus(c, path);
  const Corpus back = load_corpus(path);
  EXPECT_TRUE(same_corpus(c, back));
  EXPECT_TRUE(back.prototypes == c.prototypes);

  std::vector<Utterance> corrupted;
  for (std::size_t i = 0; i < c.test.size(); ++i) corrupted.push_back(corrupt_in_split(c, Split::test, i, {}, 3));
  save_utterances(c.spec, corrupted, path);
  const Corpus back2 = load_corpus(path);
  ASSERT_EQ(back2.test.size(), corrupted.size());
  for (std::size_t i = 0; i < corrupted.size(); ++i) EXPECT_TRUE(same_utterance(back2.test[i], corrupted[i]));
  std::filesystem::remove(path);
}

TEST(CorpusIo, TruncatedFileNamesLine) {
  const Corpus c = generate_corpus(small_spec());
  const auto path = temp_file("rosslink_corpus_trunc.tsv");
  save_corpus(c, path);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 100);
  try {
    load_corpus(path);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(":51:"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
}

TEST(CorpusIo, RecordCountMismatchRejected) {
  const Corpus c = generate_corpus(small_spec());
  const auto path = temp_file("rosslink_corpus_count.tsv");
  save_corpus(c, path);
  std::ifstream is(path);
  std::string header, first, rest;
  std::getline(is, header);
  std::getline(is, first);
  std::ostringstream body;
  body << is.rdbuf();
  is.close();
  std::ofstream os(path, std::ios::trunc);
  os << header << '\n' << body.str();
  os.close();
  EXPECT_THROW(load_corpus(path), std::runtime_error);
  std::filesystem::remove(path);
}
