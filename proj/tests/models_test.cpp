#include <gtest/gtest.h>

#include "rosslink/models/networks.hpp"
#include "rosslink/nn/netcheck.hpp"

#include <cstring>
#include <random>

using namespace rosslink;
using namespace rosslink::models;
using ad::Shape;
using ad::Tensor;
using ad::Var;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t{std::move(shape)};
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data[i] = n(rng);
  return t;
}

ModelConfig tiny() {
  ModelConfig c;
  c.frame_dim = 3;
  c.frames_per_token = 2;
  c.width = 8;
  c.heads = 2;
  c.ff_width = 12;
  c.extractor_depth = 1;
  c.converter_depth = 1;
  c.converter_conv_depth = 2;
  c.decoder_depth = 1;
  c.feature_width = 4;
  c.codec_hidden = 6;
  c.vocab = 6;
  c.max_target_len = 5;
  c.disc_channels = 2;
  c.disc_depth = 2;
  c.probe_hidden = 5;
  c.comp_channels = 3;
  c.comp_depth = 2;
  return c;
}

struct Bound {
  ad::Tape tape;
  nn::ParamStore store;
  nn::Binder p;
  Bound(Network n, const ModelConfig& c, std::uint64_t seed)
      : store(init_network(n, c, seed)), p(tape, store, false) {}
};

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape && std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

void expect_fd(const nn::ParamStore& store, const std::vector<Tensor>& inputs, const nn::NetworkFn& body) {
  const auto report = nn::grad_check_network(store, inputs, body, {.max_coords_per_input = 6, .seed = 3});
  EXPECT_TRUE(report.passed) << report.failure;
  EXPECT_GT(report.coords_checked, 0u);
}

}  // namespace

TEST(ModelConfig, DefaultsValidate) {
  const ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.extractor_strides(), (std::vector<int>{2, 2}));
  EXPECT_EQ(c.max_frames(), 64);
  ModelConfig bad = c;
  bad.heads = 3;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.frames_per_token = 3;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Shapes, DefaultPipelineContracts) {
  const ModelConfig c;
  std::mt19937_64 rng(1);
  data::FrameMatrix frames = random_tensor({24, 16}, rng).matrix();
  const Tensor padded = pad_frames(frames, c);
  EXPECT_EQ(padded.shape, (Shape{64, 16}));
  EXPECT_TRUE(padded.matrix().bottomRows(40).isZero(0.0));

  ad::Tape tape;
  const auto enc = init_network(Network::encoder, c, 1), codec = init_network(Network::channel_codec, c, 2),
             dec = init_network(Network::decoder, c, 3), gen = init_network(Network::generator, c, 4),
             disc = init_network(Network::discriminator, c, 5), probe = init_network(Network::probe, c, 6),
             comp = init_network(Network::compensator, c, 7);
  nn::Binder pe(tape, enc, false), pc(tape, codec, false), pd(tape, dec, false), pg(tape, gen, false),
      pz(tape, disc, false), pp(tape, probe, false), pk(tape, comp, false);
  Var x = tape.constant(padded);
  Var f = deep_semantic_encode(c, pe, x);
  EXPECT_EQ(f.shape(), (Shape{16, 32}));
  Var y = channel_encode(c, pc, f);
  EXPECT_EQ(y.shape(), (Shape{16, 32}));
  EXPECT_EQ(channel_decode(c, pc, y).shape(), (Shape{16, 32}));
  const std::vector<int> teacher{1, 5, 6, 7, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
  Var dist = decode_teacher(c, pd, f, teacher);
  EXPECT_EQ(dist.shape(), (Shape{15, 27}));
  const auto g = generator_forward(c, pg, x);
  EXPECT_EQ(g.f_tilde.shape(), (Shape{16, 32}));
  EXPECT_EQ(g.intermediate.shape(), (Shape{16, 64}));
  Var score = discriminate(c, pz, g.f_tilde);
  EXPECT_EQ(score.shape(), Shape{});
  Var cprobe = probe_forward(c, pp, g.intermediate);
  EXPECT_EQ(cprobe.shape(), Shape{16});
  const auto bits = binarize(cprobe.value());
  EXPECT_EQ(probe_compensate(c, pk, g.f_tilde, bits).shape(), (Shape{16, 32}));
}

TEST(Shapes, PadFramesRejectsBadInput) {
  const ModelConfig c;
  EXPECT_THROW(pad_frames(data::FrameMatrix(0, 16), c), std::invalid_argument);
  EXPECT_THROW(pad_frames(data::FrameMatrix::Zero(65, 16), c), std::invalid_argument);
  EXPECT_THROW(pad_frames(data::FrameMatrix::Zero(8, 15), c), ad::ShapeError);
  EXPECT_NO_THROW(pad_frames(data::FrameMatrix::Zero(64, 16), c));
}

TEST(Shapes, RandomConfigs) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 12; ++trial) {
    ModelConfig c = tiny();
    c.heads = 1 + static_cast<int>(rng() % 3);
    c.width = c.heads * (2 + static_cast<int>(rng() % 3));
    c.extractor_depth = 1 + static_cast<int>(rng() % 3);
    c.frames_per_token = 1 << (rng() % (c.extractor_depth + 1));
    c.feature_width = 2 * (1 + static_cast<int>(rng() % 3));
    c.max_target_len = 3 + static_cast<int>(rng() % 5);
    c.disc_depth = 1 + static_cast<int>(rng() % 3);
    ASSERT_NO_THROW(c.validate());
    ad::Tape tape;
    const auto enc = init_network(Network::encoder, c, trial), gen = init_network(Network::generator, c, trial),
               disc = init_network(Network::discriminator, c, trial), probe = init_network(Network::probe, c, trial),
               comp = init_network(Network::compensator, c, trial), dec = init_network(Network::decoder, c, trial);
    nn::Binder pe(tape, enc, false), pg(tape, gen, false), pz(tape, disc, false), pp(tape, probe, false),
        pk(tape, comp, false), pd(tape, dec, false);
    Var x = tape.constant(random_tensor({c.max_frames(), c.frame_dim}, rng));
    const Shape feat{c.max_target_len, c.feature_width};
    Var f = deep_semantic_encode(c, pe, x);
    EXPECT_EQ(f.shape(), feat);
    const auto g = generator_forward(c, pg, x);
    EXPECT_EQ(g.f_tilde.shape(), feat);
    EXPECT_EQ(g.intermediate.shape(), (Shape{c.max_target_len, c.width}));
    const double s = discriminate(c, pz, f).item();
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
    Var pr = probe_forward(c, pp, g.intermediate);
    std::vector<int> bits(c.max_target_len);
    for (auto& b : bits) b = static_cast<int>(rng() % 2);
    EXPECT_EQ(probe_compensate(c, pk, f, bits).shape(), feat);
    EXPECT_EQ(pr.shape(), Shape{c.max_target_len});
    std::vector<int> teacher(c.max_target_len, 0);
    teacher[0] = data::kBos;
    EXPECT_EQ(decode_teacher(c, pd, f, teacher).shape(), (Shape{c.max_target_len, c.vocab}));
  }
}

TEST(Decoder, DistributionsSumToOne) {
  const ModelConfig c;
  Bound r(Network::decoder, c, 9);
  std::mt19937_64 rng(2);
  Var f = r.tape.constant(random_tensor({16, 32}, rng));
  const std::vector<int> teacher{1, 3, 4, 5, 6, 2, 0};
  const Tensor d = decode_teacher(c, r.p, f, teacher).value();
  for (Eigen::Index i = 0; i < d.matrix().rows(); ++i) {
    EXPECT_NEAR(d.matrix().row(i).sum(), 1.0, 1e-12);
    EXPECT_GT(d.matrix().row(i).minCoeff(), 0.0);
  }
}

TEST(Decoder, CausalPrefixConsistency) {
  // Position i depends only on tokens 0..i, so a prefix gives the same leading rows.
  const ModelConfig c;
  Bound r(Network::decoder, c, 10);
  std::mt19937_64 rng(3);
  Var f = r.tape.constant(random_tensor({16, 32}, rng));
  const std::vector<int> full{1, 7, 8, 9, 2, 0};
  const std::vector<int> prefix{1, 7, 8};
  const auto a = decode_teacher(c, r.p, f, full).value().matrix();
  const auto b = decode_teacher(c, r.p, f, prefix).value().matrix();
  EXPECT_LE((a.topRows(3) - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Decoder, RejectsLongTeacher) {
  const ModelConfig c;
  Bound r(Network::decoder, c, 11);
  Var f = r.tape.constant(Tensor({16, 32}));
  EXPECT_THROW(decode_teacher(c, r.p, f, std::vector<int>(17, 3)), std::invalid_argument);
  EXPECT_THROW(decode_teacher(c, r.p, f, std::vector<int>{}), std::invalid_argument);
  EXPECT_THROW(decode_teacher(c, r.p, f, std::vector<int>{1, 27}), std::out_of_range);
  Var wrong = r.tape.constant(Tensor({16, 31}));
  EXPECT_THROW(decode_teacher(c, r.p, wrong, std::vector<int>{1}), ad::ShapeError);
}

TEST(Decoder, GreedyIsDeterministicAndHalts) {
  const ModelConfig c;
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const auto store = init_network(Network::decoder, c, 100 + trial);
    const Tensor f = random_tensor({16, 32}, rng);
    const auto a = greedy_decode(c, store, f);
    EXPECT_EQ(a, greedy_decode(c, store, f));
    ASSERT_GE(a.size(), 2u);
    EXPECT_LE(a.size(), 16u);
    EXPECT_EQ(a.front(), data::kBos);
    const auto eos = std::find(a.begin(), a.end(), data::kEos);
    if (eos != a.end()) EXPECT_EQ(eos + 1, a.end());
  }
}

TEST(Decoder, GreedyStopsAtEos) {
  // Output bias that makes EOS dominant everywhere: BOS, EOS.
  const ModelConfig c;
  auto store = init_network(Network::decoder, c, 12);
  store.at("out/w").data.setZero();
  store.at("out/b").data.setZero();
  store.at("out/b").data[data::kEos] = 100.0;
  EXPECT_EQ(greedy_decode(c, store, Tensor({16, 32})), (std::vector<int>{data::kBos, data::kEos}));
  // No EOS ever: stops at L~ tokens.
  store.at("out/b").data.setZero();
  store.at("out/b").data[5] = 100.0;
  const auto seq = greedy_decode(c, store, Tensor({16, 32}));
  EXPECT_EQ(seq.size(), 16u);
}

TEST(Codec, ZeroWeightsGiveZeroOutput) {
  const ModelConfig c;
  auto store = init_network(Network::channel_codec, c, 13);
  for (auto& [name, t] : store) t.data.setZero();
  ad::Tape tape;
  nn::Binder p(tape, store, false);
  std::mt19937_64 rng(5);
  Var f = tape.constant(random_tensor({16, 32}, rng));
  EXPECT_TRUE(channel_encode(c, p, f).value().data.isZero(0.0));
  EXPECT_TRUE(channel_decode(c, p, f).value().data.isZero(0.0));
}

TEST(Compensator, UnprobedRowsPassThroughBitExact) {
  const ModelConfig c;
  auto store = init_network(Network::compensator, c, 14);
  std::mt19937_64 rng(6);
  // Non-zero output weights so probed rows really change.
  store.at("out/w") = random_tensor(store.at("out/w").shape, rng, 0.5);
  ad::Tape tape;
  nn::Binder p(tape, store, false);
  const Tensor x = random_tensor({16, 32}, rng);
  Var in = tape.constant(x);
  EXPECT_TRUE(bit_equal(probe_compensate(c, p, in, std::vector<int>(16, 0)).value(), x));

  std::vector<int> bits(16, 0);
  bits[0] = bits[5] = bits[6] = bits[15] = 1;
  const Tensor out = probe_compensate(c, p, in, bits).value();
  for (int l = 0; l < 16; ++l) {
    const bool same = out.matrix().row(l) == x.matrix().row(l);
    if (bits[l]) {
      EXPECT_FALSE(same) << "row " << l;
    } else {
      EXPECT_EQ(std::memcmp(out.matrix().row(l).data(), x.matrix().row(l).data(), 32 * sizeof(double)), 0)
          << "row " << l;
    }
  }
  EXPECT_THROW(probe_compensate(c, p, in, std::vector<int>(15, 0)), ad::ShapeError);
}

TEST(Compensator, FreshInitIsIdentity) {
  const ModelConfig c;
  Bound r(Network::compensator, c, 15);
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({16, 32}, rng);
  const Tensor out = probe_compensate(c, r.p, r.tape.constant(x), std::vector<int>(16, 1)).value();
  EXPECT_TRUE(out.data == x.data);
}

TEST(Probe, BinarizeTies) {
  const Tensor c({5}, {0.0, 0.4999999, 0.5, 0.5000001, 1.0});
  EXPECT_EQ(binarize(c), (std::vector<int>{0, 0, 1, 1, 1}));
}

TEST(Probe, OutputsInUnitInterval) {
  const ModelConfig c;
  Bound r(Network::probe, c, 16);
  std::mt19937_64 rng(8);
  const Tensor out = probe_forward(c, r.p, r.tape.constant(random_tensor({16, 64}, rng, 5.0))).value();
  EXPECT_GT(out.data.minCoeff(), 0.0);
  EXPECT_LT(out.data.maxCoeff(), 1.0);
}

TEST(Init, NetworksAreSeedDeterministic) {
  const ModelConfig c;
  for (Network n : kAllNetworks) {
    EXPECT_TRUE(init_network(n, c, 77).bit_identical(init_network(n, c, 77))) << network_name(n);
    EXPECT_FALSE(init_network(n, c, 77).bit_identical(init_network(n, c, 78))) << network_name(n);
  }
}

TEST(ModelsFd, Encoder) {
  const ModelConfig c = tiny();
  std::mt19937_64 rng(20);
  const auto store = init_network(Network::encoder, c, 20);
  expect_fd(store, {random_tensor({c.max_frames(), c.frame_dim}, rng), random_tensor({5, 4}, rng)},
            [&](nn::Binder& p, std::span<const Var> in) {
              return ad::sum(ad::mul(deep_semantic_encode(c, p, in[0]), in[1]));
            });
}

TEST(ModelsFd, ChannelCodec) {
  const ModelConfig c = tiny();
  std::mt19937_64 rng(21);
  const auto store = init_network(Network::channel_codec, c, 21);
  expect_fd(store, {random_tensor({5, 4}, rng), random_tensor({5, 4}, rng)},
            [&](nn::Binder& p, std::span<const Var> in) {
              return ad::sum(ad::mul(channel_decode(c, p, channel_encode(c, p, in[0])), in[1]));
            });
}

TEST(ModelsFd, Decoder) {
  const ModelConfig c = tiny();
  std::mt19937_64 rng(22);
  const auto store = init_network(Network::decoder, c, 22);
  const std::vector<int> teacher{1, 3, 4, 2};
  expect_fd(store, {random_tensor({5, 4}, rng), random_tensor({4, 6}, rng)},
            [&](nn::Binder& p, std::span<const Var> in) {
              return ad::sum(ad::mul(ad::log(decode_teacher(c, p, in[0], teacher)), in[1]));
            });
}

TEST(ModelsFd, Generator) {
  const ModelConfig c = tiny();
  std::mt19937_64 rng(23);
  const auto store = init_network(Network::generator, c, 23);
  expect_fd(store, {random_tensor({c.max_frames(), c.frame_dim}, rng), random_tensor({5, 4}, rng)},
            [&](nn::Binder& p, std::span<const Var> in) {
              const auto g = generator_forward(c, p, in[0]);
              return ad::add(ad::sum(ad::mul(g.f_tilde, in[1])), ad::mean(ad::square(g.intermediate)));
            });
}

TEST(ModelsFd, Discriminator) {
  const ModelConfig c = tiny();
  std::mt19937_64 rng(24);
  const auto store = init_network(Network::discriminator, c, 24);
  expect_fd(store, {random_tensor({5, 4}, rng)}, [&](nn::Binder& p, std::span<const Var> in) {
    return ad::log(discriminate(c, p, in[0]));
  });
}

TEST(ModelsFd, Probe) {
  const ModelConfig c = tiny();
  std::mt19937_64 rng(25);
  const auto store = init_network(Network::probe, c, 25);
  expect_fd(store, {random_tensor({5, 8}, rng), random_tensor({5}, rng)},
            [&](nn::Binder& p, std::span<const Var> in) {
              return ad::sum(ad::mul(probe_forward(c, p, in[0]), in[1]));
            });
}

TEST(ModelsFd, Compensator) {
  const ModelConfig c = tiny();
  std::mt19937_64 rng(26);
  auto store = init_network(Network::compensator, c, 26);
  store.at("out/w") = random_tensor(store.at("out/w").shape, rng, 0.5);
  const std::vector<int> bits{1, 0, 1, 1, 0};
  expect_fd(store, {random_tensor({5, 4}, rng), random_tensor({5, 4}, rng)},
            [&](nn::Binder& p, std::span<const Var> in) {
              return ad::sum(ad::mul(probe_compensate(c, p, in[0], bits), in[1]));
            });
}
