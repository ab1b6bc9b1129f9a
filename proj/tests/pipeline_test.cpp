#include <gtest/gtest.h>

#include "tiny_setup.hpp"

#include <cmath>
#include <limits>

using namespace rosslink;
using namespace rosslink::fixtures;
using pipeline::Bundle;
using pipeline::InferMode;

namespace {

const data::Corpus& tiny_corpus() {
  static const data::Corpus c = data::generate_corpus(tiny_corpus_spec());
  return c;
}

channel::ChannelConfig noiseless() {
  channel::ChannelConfig ch;
  ch.snr_db = std::numeric_limits<double>::infinity();
  return ch;
}

}  // namespace

TEST(TrainConfig, Validation) {
  pipeline::TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  t.stage = 4;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = {};
  t.snr_min_db = 5;
  t.snr_max_db = 1;
  EXPECT_THROW(t.validate(), std::invalid_argument);
  t = {};
  t.k_g = 0;
  EXPECT_THROW(t.validate(), std::invalid_argument);
}

TEST(Stage1, WritesCheckpointAndLossCsv) {
  const auto dir = scratch_dir("s1_basic");
  const auto rep = pipeline::train(tiny_train(dir, 1, 3), tiny_model(), tiny_corpus());
  EXPECT_EQ(rep.steps_run, 3);
  EXPECT_TRUE(std::filesystem::exists(pipeline::stage_checkpoint(dir, 1)));
  const std::string csv = read_file(pipeline::loss_csv(dir, 1));
  EXPECT_EQ(csv.rfind("step,stage,loss_name,value\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 3 * 2);
  EXPECT_NE(csv.find("2,1,lsr_ce,"), std::string::npos);
}

TEST(Stage1, UntrainedLossNearLogE) {
  // Default model: the first-step cross-entropy per position sits near log E.
  const auto dir = scratch_dir("s1_untrained");
  data::CorpusSpec spec;
  spec.train_size = 64;
  spec.test_size = 4;
  const data::Corpus corpus = data::generate_corpus(spec);
  pipeline::TrainConfig t;
  t.steps = 1;
  t.run_dir = dir;
  const auto rep = pipeline::train(t, models::ModelConfig{}, corpus);
  const double log_e = std::log(27.0);
  EXPECT_NEAR(rep.metrics.at("ce_first"), log_e, 0.1 * log_e);
  EXPECT_LE(rep.metrics.at("lsr_ce_first"), 2.0 * log_e);
  EXPECT_GE(rep.metrics.at("lsr_ce_first"), 0.5 * log_e);
}

TEST(Stage1, DeterministicAcrossRuns) {
  const auto a = scratch_dir("s1_det_a"), b = scratch_dir("s1_det_b");
  pipeline::train(tiny_train(a, 1, 4), tiny_model(), tiny_corpus());
  pipeline::train(tiny_train(b, 1, 4), tiny_model(), tiny_corpus());
  EXPECT_EQ(read_file(pipeline::stage_checkpoint(a, 1)), read_file(pipeline::stage_checkpoint(b, 1)));
  EXPECT_EQ(read_file(pipeline::loss_csv(a, 1)), read_file(pipeline::loss_csv(b, 1)));
}

TEST(Stage1, ResumeIsBitExact) {
  const auto full = scratch_dir("s1_full"), part = scratch_dir("s1_part");
  pipeline::train(tiny_train(full, 1, 5), tiny_model(), tiny_corpus());
  pipeline::train(tiny_train(part, 1, 3), tiny_model(), tiny_corpus());
  auto resumed = tiny_train(part, 1, 5);
  resumed.resume = true;
  const auto rep = pipeline::train(resumed, tiny_model(), tiny_corpus());
  EXPECT_EQ(rep.start_step, 3);
  EXPECT_EQ(rep.steps_run, 2);
  EXPECT_EQ(read_file(pipeline::stage_checkpoint(full, 1)), read_file(pipeline::stage_checkpoint(part, 1)));
  EXPECT_EQ(read_file(pipeline::loss_csv(full, 1)), read_file(pipeline::loss_csv(part, 1)));
}

TEST(Stage1, DivergenceKeepsLastGoodCheckpoint) {
  const auto dir = scratch_dir("s1_diverge");
  data::Corpus bad = tiny_corpus();
  for (auto& u : bad.train) u.frames(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    pipeline::train(tiny_train(dir, 1, 3), tiny_model(), bad);
    FAIL() << "expected divergence";
  } catch (const pipeline::DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos) << e.what();
    const auto ck = nn::Checkpoint::load(e.checkpoint);
    EXPECT_EQ(ck.meta.at("train/step"), 0u);
  }
}

TEST(Stage2, RequiresStage1) {
  const auto dir = scratch_dir("s2_missing");
  try {
    pipeline::train(tiny_train(dir, 2, 1), tiny_model(), tiny_corpus());
    FAIL();
  } catch (const pipeline::MissingStageError& e) {
    EXPECT_NE(std::string(e.what()).find("stage 1"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("stage1.ckpt"), std::string::npos) << e.what();
  }
}

TEST(Stage2, FreezesEncoderAndResumes) {
  const auto dir = scratch_dir("s2_freeze");
  pipeline::train(tiny_train(dir, 1, 2), tiny_model(), tiny_corpus());
  const std::string stage1 = read_file(pipeline::stage_checkpoint(dir, 1));
  const auto rep = pipeline::train(tiny_train(dir, 2, 4), tiny_model(), tiny_corpus());
  EXPECT_EQ(read_file(pipeline::stage_checkpoint(dir, 1)), stage1);
  EXPECT_GT(rep.metrics.at("val_mse_untrained"), 0.0);
  EXPECT_GT(rep.metrics.at("d_real"), 0.0);
  EXPECT_LT(rep.metrics.at("d_fake"), 1.0);
  const std::string full = read_file(pipeline::stage_checkpoint(dir, 2));

  const auto part = scratch_dir("s2_resume");
  std::filesystem::copy_file(pipeline::stage_checkpoint(dir, 1), pipeline::stage_checkpoint(part, 1));
  pipeline::train(tiny_train(part, 2, 2), tiny_model(), tiny_corpus());
  auto resumed = tiny_train(part, 2, 4);
  resumed.resume = true;
  pipeline::train(resumed, tiny_model(), tiny_corpus());
  EXPECT_EQ(read_file(pipeline::stage_checkpoint(part, 2)), full);
  EXPECT_EQ(read_file(pipeline::loss_csv(part, 2)), read_file(pipeline::loss_csv(dir, 2)));
}

TEST(Stage2, CollapseGuardHalts) {
  const auto dir = scratch_dir("s2_collapse");
  pipeline::train(tiny_train(dir, 1, 1), tiny_model(), tiny_corpus());
  auto t = tiny_train(dir, 2, 6);
  t.collapse_patience = 1;
  t.collapse_ratio = 1e-9;  // unreachable
  EXPECT_THROW(pipeline::train(t, tiny_model(), tiny_corpus()), pipeline::CollapseError);
}

TEST(Stage3, TrainsAndReportsProbeScore) {
  const auto dir = scratch_dir("s3_basic");
  pipeline::train(tiny_train(dir, 1, 2), tiny_model(), tiny_corpus());
  pipeline::train(tiny_train(dir, 2, 2), tiny_model(), tiny_corpus());
  const std::string s1 = read_file(pipeline::stage_checkpoint(dir, 1)), s2 = read_file(pipeline::stage_checkpoint(dir, 2));
  const auto rep = pipeline::train(tiny_train(dir, 3, 3), tiny_model(), tiny_corpus());
  EXPECT_EQ(read_file(pipeline::stage_checkpoint(dir, 1)), s1);
  EXPECT_EQ(read_file(pipeline::stage_checkpoint(dir, 2)), s2);
  for (const char* k : {"probe_precision", "probe_recall", "probe_f1"}) {
    EXPECT_GE(rep.metrics.at(k), 0.0);
    EXPECT_LE(rep.metrics.at(k), 1.0);
  }
  const std::string csv = read_file(pipeline::loss_csv(dir, 3));
  EXPECT_NE(csv.find(",3,probe_net,"), std::string::npos);
  EXPECT_NE(csv.find(",3,probe_comp,"), std::string::npos);
}

TEST(Stage3, OracleProbeRunsDeterministically) {
  const auto a = scratch_dir("s3_oracle_a"), b = scratch_dir("s3_oracle_b");
  for (const auto& dir : {a, b}) {
    pipeline::train(tiny_train(dir, 1, 2), tiny_model(), tiny_corpus());
    pipeline::train(tiny_train(dir, 2, 2), tiny_model(), tiny_corpus());
    auto t = tiny_train(dir, 3, 3);
    t.oracle_probe = true;
    pipeline::train(t, tiny_model(), tiny_corpus());
  }
  EXPECT_EQ(read_file(pipeline::stage_checkpoint(a, 3)), read_file(pipeline::stage_checkpoint(b, 3)));
}

TEST(Infer, BypassMatchesStage1Path) {
  const auto dir = scratch_dir("infer_bypass");
  pipeline::train(tiny_train(dir, 1, 3), tiny_model(), tiny_corpus());
  const Bundle b = Bundle::load(dir, 1);
  const auto& m = b.model;
  for (std::size_t i = 0; i < tiny_corpus().test.size(); ++i) {
    const auto& u = tiny_corpus().test[i];
    ad::Tape tape;
    nn::Binder pe(tape, b.encoder, false), pc(tape, b.codec, false);
    const auto f = models::deep_semantic_encode(m, pe, tape.constant(models::pad_frames(u.frames, m)));
    const auto sent = models::channel_encode(m, pc, f).value();
    const auto back = models::channel_decode(m, pc, tape.constant(channel::transmit(sent, noiseless(), i))).value();
    EXPECT_EQ(pipeline::infer(b, u.frames, InferMode::bypass, noiseless(), i).tokens,
              models::greedy_decode(m, b.decoder, back));
  }
}

TEST(Infer, ZeroProbeEqualsGeneratorOnly) {
  const auto dir = scratch_dir("infer_zero_probe");
  train_all(dir, tiny_corpus(), 2);
  const Bundle b = Bundle::load(dir, 3);
  channel::ChannelConfig ch;
  ch.kind = channel::ChannelKind::rayleigh;
  ch.snr_db = 6.0;
  ch.seed = 3;
  const std::vector<int> zero(b.model.max_target_len, 0);
  for (std::size_t i = 0; i < tiny_corpus().test.size(); ++i) {
    const auto& frames = tiny_corpus().test[i].frames;
    const auto full = pipeline::infer(b, frames, InferMode::full, ch, i, &zero);
    EXPECT_EQ(full.tokens, pipeline::infer(b, frames, InferMode::generator_only, ch, i).tokens);
    EXPECT_EQ(full.probe, zero);
    // Same seeds, same answer.
    EXPECT_EQ(pipeline::infer(b, frames, InferMode::full, ch, i).tokens,
              pipeline::infer(b, frames, InferMode::full, ch, i).tokens);
  }
}

TEST(Infer, MissingStageNamed) {
  const auto dir = scratch_dir("infer_missing");
  pipeline::train(tiny_train(dir, 1, 1), tiny_model(), tiny_corpus());
  const Bundle b = Bundle::load(dir, 1);
  try {
    pipeline::infer(b, tiny_corpus().test[0].frames, InferMode::full, noiseless(), 0);
    FAIL();
  } catch (const pipeline::MissingStageError& e) {
    EXPECT_NE(std::string(e.what()).find("stage 3"), std::string::npos);
  }
  EXPECT_THROW(Bundle::load(dir, 2), pipeline::MissingStageError);
}

TEST(ProbeScore, Oracle) {
  const auto s = pipeline::score_probe({{1, 1, 0, 0}, {0, 1, 1, 0}}, {{1, 0, 0, 0}, {0, 1, 0, 1}});
  EXPECT_EQ(s.tp, 2);
  EXPECT_EQ(s.fp, 2);
  EXPECT_EQ(s.fn, 1);
  EXPECT_DOUBLE_EQ(s.precision, 0.5);
  EXPECT_DOUBLE_EQ(s.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.f1, 4.0 / 7.0);
}
