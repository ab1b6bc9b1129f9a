#include "rosslink/diagnostics/gradsuite.hpp"

#include "rosslink/common/seeding.hpp"
#include "rosslink/losses/losses.hpp"
#include "rosslink/models/networks.hpp"
#include "rosslink/nn/layers.hpp"
#include "rosslink/nn/netcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>

namespace rosslink::diagnostics {

using ad::GradCheckOptions;
using ad::GradCheckReport;
using ad::OpKind;
using ad::Shape;
using ad::Tensor;
using ad::Var;
using Rng = std::mt19937_64;

namespace {

Tensor normal(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t{std::move(shape)};
  for (auto& x : t.data) x = n(rng);
  return t;
}

Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t{std::move(shape)};
  for (auto& x : t.data) x = u(rng);
  return t;
}

// Bounded away from zero, either sign.
Tensor nonzero(Shape shape, Rng& rng) {
  Tensor t = uniform(std::move(shape), rng, 0.5, 2.0);
  std::bernoulli_distribution flip(0.5);
  for (auto& x : t.data) x = flip(rng) ? -x : x;
  return t;
}

Tensor distributions(int rows, int cols, Rng& rng) {
  Tensor t = normal({rows, cols}, rng);
  auto m = t.matrix();
  for (int r = 0; r < rows; ++r) {
    m.row(r) = m.row(r).array().exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
  return t;
}

int pick(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// BOS-free label row of length n: a random run of non-PAD ids, then PAD.
std::vector<int> labels(int n, int vocab, Rng& rng) {
  std::vector<int> out(n, losses::kPad);
  const int active = pick(rng, 1, n);
  for (int i = 0; i < active; ++i) out[i] = pick(rng, 1, vocab - 1);
  return out;
}

std::vector<int> bits(int n, Rng& rng) {
  std::vector<int> out(n);
  for (auto& b : out) b = pick(rng, 0, 1);
  return out;
}

// Projects a tensor output onto fixed random weights so every coordinate matters.
Var project(Var out, const Tensor& w) { return ad::sum(ad::mul(out, out.tape->constant(w))); }

GradCheckReport check_op(OpKind kind, int point, Rng& rng, const GradCheckOptions& gc) {
  ad::OpAttrs attrs;
  std::vector<Tensor> in;
  Tensor mask;
  const bool odd = point % 2 == 1;
  switch (kind) {
    case OpKind::matmul: in = {normal({3, 4}, rng), normal({4, 2}, rng)}; break;
    case OpKind::add:
    case OpKind::sub:
    case OpKind::mul:
      in = {normal({3, 4}, rng), odd ? normal({}, rng) : normal({3, 4}, rng)};
      break;
    case OpKind::div: in = {normal({3, 4}, rng), odd ? nonzero({}, rng) : nonzero({3, 4}, rng)}; break;
    case OpKind::conv1d:
      in = {normal({7, 3}, rng), normal({3, 3, 4}, rng, 0.5), normal({4}, rng)};
      attrs.stride = odd ? 2 : 1;
      break;
    case OpKind::conv2d:
      in = {normal({5, 4, 2}, rng), normal({3, 3, 2, 3}, rng, 0.5), normal({3}, rng)};
      attrs.stride = odd ? 2 : 1;
      attrs.stride_w = odd ? 1 : 2;
      break;
    case OpKind::layernorm: in = {normal({3, 5}, rng), normal({5}, rng), normal({5}, rng)}; break;
    case OpKind::softmax:
      in = {normal({3, 5}, rng)};
      if (odd) {
        // Mask some entries, always leaving one open per row.
        mask = Tensor(Shape{3, 5});
        for (int r = 0; r < 3; ++r) {
          const int keep = pick(rng, 0, 4);
          for (int c = 0; c < 5; ++c) {
            if (c != keep && pick(rng, 0, 2) == 0) mask.data[r * 5 + c] = -std::numeric_limits<double>::infinity();
          }
        }
        attrs.mask = &mask;
      }
      break;
    case OpKind::log:
    case OpKind::sqrt: in = {uniform({3, 4}, rng, 0.5, 2.0)}; break;
    case OpKind::exp:
    case OpKind::gelu:
    case OpKind::relu:
    case OpKind::sigmoid:
    case OpKind::square:
    case OpKind::transpose: in = {normal({3, 4}, rng)}; break;
    case OpKind::gather:
      in = {normal({5, 3}, rng)};
      attrs.ids = {pick(rng, 0, 4), pick(rng, 0, 4), pick(rng, 0, 4), pick(rng, 0, 4)};
      break;
    case OpKind::concat:
      attrs.axis = odd ? 0 : -1;
      in = odd ? std::vector<Tensor>{normal({2, 3}, rng), normal({4, 3}, rng), normal({1, 3}, rng)}
               : std::vector<Tensor>{normal({3, 2}, rng), normal({3, 4}, rng)};
      break;
    case OpKind::slice:
      in = {normal({4, 5}, rng)};
      attrs.axis = odd ? 0 : 1;
      attrs.begin = 1;
      attrs.end = odd ? 3 : 4;
      break;
    case OpKind::mean:
    case OpKind::sum:
      in = {normal({3, 4}, rng)};
      attrs.reduce_all = odd;
      break;
    case OpKind::masked_fill:
      in = {normal({3, 4}, rng)};
      mask = Tensor(Shape{3, 4});
      for (auto& m : mask.data) m = pick(rng, 0, 1);
      attrs.mask = &mask;
      attrs.value = -2.5;
      break;
    case OpKind::expand:
      in = {odd ? normal({}, rng) : normal({4}, rng)};
      attrs.shape = {3, 4};
      break;
    case OpKind::reshape:
      in = {normal({3, 4}, rng)};
      attrs.shape = {2, 6};
      break;
  }
  Tensor w;
  {
    ad::Tape dry;
    std::vector<Var> vars;
    for (const auto& t : in) vars.push_back(dry.constant(t));
    w = normal(ad::forward_op(kind, vars, attrs).shape(), rng);
  }
  return ad::grad_check(
      [&](ad::Tape&, std::span<const Var> v) { return project(ad::forward_op(kind, v, attrs), w); }, in, gc);
}

// Fresh parameters at every point: default init plus noise, so zero biases and unit
// gains do not pin the check to one special configuration.
nn::ParamStore jitter(nn::ParamStore store, Rng& rng) {
  for (auto& [name, t] : store) {
    std::normal_distribution<double> n(0.0, 0.2);
    for (auto& x : t.data) x += n(rng);
  }
  return store;
}

nn::ParamStore layer_store(const std::vector<nn::NamedLayer>& layers, Rng& rng) {
  return jitter(nn::init_params(layers, rng()), rng);
}

using nn::Activation;
using nn::LayerKind;
using nn::LayerSpec;

nn::LayerSpec block(int width, int heads, int ff, int memory = 0) {
  LayerSpec s;
  s.kind = memory > 0 ? LayerKind::decoder_block : LayerKind::transformer_block;
  s.input_width = width;
  s.heads = heads;
  s.ff_width = ff;
  s.memory_width = memory;
  return s;
}

const Activation kActivations[] = {Activation::identity, Activation::relu, Activation::gelu, Activation::sigmoid};

struct Item {
  std::string group;
  std::string name;
  std::function<GradCheckReport(int point, Rng&, const GradCheckOptions&)> run;
  bool sampled = true;  // false: small inputs, every coordinate is checked
};

std::vector<Item> block_items() {
  std::vector<Item> items;
  items.push_back({"block", "dense", [](int point, Rng& rng, const GradCheckOptions& gc) {
                     const LayerSpec s{.kind = LayerKind::dense, .input_width = 4, .output_width = 3,
                                       .activation = kActivations[point % 4]};
                     const auto store = layer_store({{"d", s}}, rng);
                     const std::vector<Tensor> in{normal({3, 4}, rng), normal({3, 3}, rng)};
                     return nn::grad_check_network(store, in, [&](nn::Binder& p, std::span<const Var> v) {
                       return ad::sum(ad::mul(nn::dense_forward(s, p, "d", v[0]), v[1]));
                     }, gc);
                   }});
  items.push_back({"block", "conv1d", [](int point, Rng& rng, const GradCheckOptions& gc) {
                     const LayerSpec s{.kind = LayerKind::conv1d, .input_width = 3,
                                       .activation = kActivations[point % 4], .channels = 4, .kernel = 3,
                                       .stride = 1 + point % 2, .normalize = point % 3 != 0};
                     const auto store = layer_store({{"c", s}}, rng);
                     const std::vector<Tensor> in{normal({7, 3}, rng), normal({7 / s.stride + 7 % s.stride, 4}, rng)};
                     return nn::grad_check_network(store, in, [&](nn::Binder& p, std::span<const Var> v) {
                       return ad::sum(ad::mul(nn::conv1d_forward(s, p, "c", v[0]), v[1]));
                     }, gc);
                   }});
  items.push_back({"block", "conv2d", [](int point, Rng& rng, const GradCheckOptions& gc) {
                     const LayerSpec s{.kind = LayerKind::conv2d, .input_width = 2,
                                       .activation = kActivations[point % 4], .channels = 3, .kernel = 3,
                                       .stride = 1 + point % 2, .normalize = point % 3 != 0};
                     const auto store = layer_store({{"c", s}}, rng);
                     const std::int64_t h = s.stride == 1 ? 5 : 3, w = s.stride == 1 ? 4 : 2;
                     const std::vector<Tensor> in{normal({5, 4, 2}, rng), normal({h, w, 3}, rng)};
                     return nn::grad_check_network(store, in, [&](nn::Binder& p, std::span<const Var> v) {
                       return ad::sum(ad::mul(nn::conv2d_forward(s, p, "c", v[0]), v[1]));
                     }, gc);
                   }});
  items.push_back({"block", "layernorm", [](int, Rng& rng, const GradCheckOptions& gc) {
                     const LayerSpec s{.kind = LayerKind::layernorm, .input_width = 5};
                     const auto store = layer_store({{"ln", s}}, rng);
                     const std::vector<Tensor> in{normal({3, 5}, rng), normal({3, 5}, rng)};
                     return nn::grad_check_network(store, in, [&](nn::Binder& p, std::span<const Var> v) {
                       return ad::sum(ad::mul(nn::layernorm_forward(p, "ln", v[0]), v[1]));
                     }, gc);
                   }});
  items.push_back({"block", "embedding", [](int, Rng& rng, const GradCheckOptions& gc) {
                     const LayerSpec s{.kind = LayerKind::embedding, .input_width = 6, .output_width = 4};
                     const auto store = layer_store({{"emb", s}}, rng);
                     const std::vector<int> ids{pick(rng, 0, 5), pick(rng, 0, 5), pick(rng, 0, 5)};
                     const std::vector<Tensor> in{normal({3, 4}, rng)};
                     return nn::grad_check_network(store, in, [&](nn::Binder& p, std::span<const Var> v) {
                       return ad::sum(ad::mul(nn::embedding_forward(s, p, "emb", ids), v[0]));
                     }, gc);
                   }});
  items.push_back({"block", "attention", [](int point, Rng& rng, const GradCheckOptions& gc) {
                     // Cross-attention weights of a decoder block, used on their own.
                     const auto full = layer_store({{"dec", block(8, 2, 12, 6)}}, rng);
                     nn::ParamStore store;
                     for (const auto& [name, t] : full) {
                       if (name.rfind("dec/cross/", 0) == 0) store.add(name, t);
                     }
                     const int n = 4;
                     const Tensor mask = nn::causal_mask(n);
                     const bool self = point % 2 == 1;
                     const std::vector<Tensor> in{normal({n, 8}, rng), normal({n, 6}, rng), normal({n, 8}, rng)};
                     return nn::grad_check_network(store, in, [&](nn::Binder& p, std::span<const Var> v) {
                       return ad::sum(ad::mul(
                           nn::attention_forward(p, "dec/cross", v[0], v[1], 2, self ? &mask : nullptr), v[2]));
                     }, gc);
                   }});
  items.push_back({"block", "transformer_block", [](int point, Rng& rng, const GradCheckOptions& gc) {
                     const LayerSpec s = block(8, 2, 12);
                     const auto store = layer_store({{"blk", s}}, rng);
                     const Tensor mask = nn::causal_mask(5);
                     const bool masked = point % 2 == 1;
                     const std::vector<Tensor> in{normal({5, 8}, rng), normal({5, 8}, rng)};
                     return nn::grad_check_network(store, in, [&](nn::Binder& p, std::span<const Var> v) {
                       return ad::sum(
                           ad::mul(nn::transformer_block_forward(s, p, "blk", v[0], masked ? &mask : nullptr), v[1]));
                     }, gc);
                   }});
  items.push_back({"block", "decoder_block", [](int, Rng& rng, const GradCheckOptions& gc) {
                     const LayerSpec s = block(8, 2, 12, 6);
                     const auto store = layer_store({{"dec", s}}, rng);
                     const Tensor mask = nn::causal_mask(4);
                     const std::vector<Tensor> in{normal({4, 8}, rng), normal({3, 6}, rng), normal({4, 8}, rng)};
                     return nn::grad_check_network(store, in, [&](nn::Binder& p, std::span<const Var> v) {
                       return ad::sum(ad::mul(nn::decoder_block_forward(s, p, "dec", v[0], v[1], &mask), v[2]));
                     }, gc);
                   }});
  return items;
}

models::ModelConfig tiny_model() {
  models::ModelConfig c;
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

GradCheckReport check_network(models::Network net, Rng& rng, const GradCheckOptions& gc) {
  using models::Network;
  const models::ModelConfig c = tiny_model();
  const auto store = jitter(models::init_network(net, c, rng()), rng);
  const std::int64_t L = c.max_target_len, fw = c.feature_width;
  const Tensor frames = normal({c.max_frames(), c.frame_dim}, rng);
  auto run = [&](std::vector<Tensor> in, const nn::NetworkFn& body) {
    return nn::grad_check_network(store, in, body, gc);
  };
  switch (net) {
    case Network::encoder:
      return run({frames, normal({L, fw}, rng)}, [&](nn::Binder& p, std::span<const Var> v) {
        return ad::sum(ad::mul(models::deep_semantic_encode(c, p, v[0]), v[1]));
      });
    case Network::channel_codec:
      return run({normal({L, fw}, rng), normal({L, fw}, rng)}, [&](nn::Binder& p, std::span<const Var> v) {
        return ad::sum(ad::mul(models::channel_decode(c, p, models::channel_encode(c, p, v[0])), v[1]));
      });
    case Network::decoder: {
      std::vector<int> teacher{1};
      const int n = pick(rng, 1, c.decode_len() - 1);
      for (int i = 0; i < n; ++i) teacher.push_back(pick(rng, 3, c.vocab - 1));
      return run({normal({L, fw}, rng), normal({static_cast<std::int64_t>(teacher.size()), c.vocab}, rng)},
                 [&, teacher](nn::Binder& p, std::span<const Var> v) {
                   return ad::sum(ad::mul(ad::log(models::decode_teacher(c, p, v[0], teacher)), v[1]));
                 });
    }
    case Network::generator:
      return run({frames, normal({L, fw}, rng), normal({L, c.width}, rng)},
                 [&](nn::Binder& p, std::span<const Var> v) {
                   const auto g = models::generator_forward(c, p, v[0]);
                   return ad::add(ad::sum(ad::mul(g.f_tilde, v[1])), ad::sum(ad::mul(g.intermediate, v[2])));
                 });
    case Network::discriminator:
      return run({normal({L, fw}, rng)},
                 [&](nn::Binder& p, std::span<const Var> v) { return ad::log(models::discriminate(c, p, v[0])); });
    case Network::probe:
      return run({normal({L, c.width}, rng), normal({L}, rng)}, [&](nn::Binder& p, std::span<const Var> v) {
        return ad::sum(ad::mul(models::probe_forward(c, p, v[0]), v[1]));
      });
    case Network::compensator: {
      std::vector<int> probe = bits(static_cast<int>(L), rng);
      probe[pick(rng, 0, static_cast<int>(L) - 1)] = 1;
      return run({normal({L, fw}, rng), normal({L, fw}, rng)}, [&, probe](nn::Binder& p, std::span<const Var> v) {
        return ad::sum(ad::mul(models::probe_compensate(c, p, v[0], probe), v[1]));
      });
    }
  }
  throw std::logic_error("unknown network");
}

std::vector<Item> loss_items() {
  constexpr int L = 5, E = 6;
  std::vector<Item> items;
  items.push_back({"loss", "lsr_ce", [](int point, Rng& rng, const GradCheckOptions& gc) {
                     losses::LossConfig cfg;
                     cfg.rule = point % 2 ? losses::SmoothingRule::standard : losses::SmoothingRule::paper_literal;
                     cfg.kappa = std::uniform_real_distribution<double>(0.5, 1.0)(rng);
                     const auto y = labels(L, E, rng);
                     return ad::grad_check([&](ad::Tape&, std::span<const Var> v) { return losses::lsr_ce(v[0], y, cfg); },
                                           std::vector<Tensor>{distributions(L, E, rng)}, gc);
                   }});
  items.push_back({"loss", "cross_entropy", [](int, Rng& rng, const GradCheckOptions& gc) {
                     const auto y = labels(L, E, rng);
                     return ad::grad_check([&](ad::Tape&, std::span<const Var> v) { return losses::cross_entropy(v[0], y); },
                                           std::vector<Tensor>{distributions(L, E, rng)}, gc);
                   }});
  items.push_back({"loss", "disc_loss", [](int, Rng& rng, const GradCheckOptions& gc) {
                     return ad::grad_check(
                         [](ad::Tape&, std::span<const Var> v) { return losses::disc_loss(v[0], v[1]); },
                         std::vector<Tensor>{uniform({}, rng, 0.05, 0.95), uniform({}, rng, 0.05, 0.95)}, gc);
                   }});
  items.push_back({"loss", "gen_loss", [](int, Rng& rng, const GradCheckOptions& gc) {
                     losses::LossConfig cfg;
                     cfg.xi = std::uniform_real_distribution<double>(0.5, 20.0)(rng);
                     return ad::grad_check(
                         [&](ad::Tape&, std::span<const Var> v) { return losses::gen_loss(v[0], v[1], v[2], cfg); },
                         std::vector<Tensor>{normal({L, 4}, rng), normal({L, 4}, rng), uniform({}, rng, 0.05, 0.95)},
                         gc);
                   }});
  items.push_back({"loss", "probe_net_loss", [](int, Rng& rng, const GradCheckOptions& gc) {
                     // Row norms of (I~ - I) and I~ as the probe stage feeds them.
                     return ad::grad_check(
                         [](ad::Tape&, std::span<const Var> v) {
                           return losses::probe_net_loss(losses::row_norms(ad::sub(v[1], v[0])),
                                                         losses::row_norms(v[1]), v[2]);
                         },
                         std::vector<Tensor>{normal({L, 4}, rng), normal({L, 4}, rng), uniform({L}, rng, 0.05, 0.95)},
                         gc);
                   }});
  items.push_back({"loss", "probe_comp_loss", [](int, Rng& rng, const GradCheckOptions& gc) {
                     const auto y = labels(L, E, rng);
                     const auto c = bits(L, rng);
                     return ad::grad_check(
                         [&](ad::Tape&, std::span<const Var> v) { return losses::probe_comp_loss(v[0], y, c); },
                         std::vector<Tensor>{distributions(L, E, rng)}, gc);
                   }});
  return items;
}

std::vector<Item> all_items() {
  std::vector<Item> items;
  for (OpKind k : ad::all_op_kinds()) {
    items.push_back({"op", std::string(ad::op_name(k)), [k](int point, Rng& rng, const GradCheckOptions& gc) {
                       return check_op(k, point, rng, gc);
                     }, false});
  }
  for (auto& i : block_items()) items.push_back(std::move(i));
  for (models::Network n : models::kAllNetworks) {
    items.push_back({"network", std::string(models::network_name(n)),
                     [n](int, Rng& rng, const GradCheckOptions& gc) { return check_network(n, rng, gc); }});
  }
  for (auto& i : loss_items()) {
    i.sampled = false;
    items.push_back(std::move(i));
  }
  return items;
}

struct FaultGuard {
  explicit FaultGuard(const GradSuiteOptions& o) {
    if (o.fault) ad::inject_backward_fault(*o.fault, o.fault_scale);
  }
  ~FaultGuard() { ad::clear_backward_faults(); }
  FaultGuard(const FaultGuard&) = delete;
  FaultGuard& operator=(const FaultGuard&) = delete;
};

double since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

bool GradSuiteResult::passed() const {
  return !items.empty() && std::all_of(items.begin(), items.end(), [](const auto& i) { return i.passed; });
}

std::vector<std::string> grad_suite_items() {
  std::vector<std::string> out;
  for (const auto& i : all_items()) out.push_back(i.group + "/" + i.name);
  return out;
}

GradSuiteResult run_grad_suite(const GradSuiteOptions& opts, const GradProgress& progress) {
  if (opts.points < 1) throw std::invalid_argument("grad suite: points must be >= 1");
  const FaultGuard guard(opts);
  const auto t0 = std::chrono::steady_clock::now();
  GradSuiteResult result;
  for (const auto& item : all_items()) {
    if (!opts.groups.empty() &&
        std::find(opts.groups.begin(), opts.groups.end(), item.group) == opts.groups.end()) {
      continue;
    }
    const auto t_item = std::chrono::steady_clock::now();
    GradItemResult r;
    r.group = item.group;
    r.name = item.name;
    for (int point = 0; point < opts.points; ++point) {
      Rng rng(derive_seed(opts.seed, {fnv1a(item.group), fnv1a(item.name), static_cast<std::uint64_t>(point)}));
      const GradCheckOptions gc{.eps = opts.eps,
                                .tol = opts.tol,
                                .max_coords_per_input = item.sampled ? opts.coords_per_input : 0,
                                .seed = rng(),
                                .checked_inputs = {}};
      GradCheckReport rep;
      try {
        rep = item.run(point, rng, gc);
      } catch (const std::exception& e) {
        rep.passed = false;
        rep.failure = e.what();
      }
      ++r.points;
      r.coords += rep.coords_checked;
      r.kinks += rep.kinks_skipped;
      r.max_rel_error = std::max(r.max_rel_error, rep.max_rel_error);
      if (!rep.passed && r.passed) {
        r.passed = false;
        r.failure = "point " + std::to_string(point) + ": " + rep.failure;
      }
    }
    r.seconds = since(t_item);
    if (progress) progress(r);
    result.items.push_back(std::move(r));
  }
  result.seconds = since(t0);
  return result;
}

}  // namespace rosslink::diagnostics
