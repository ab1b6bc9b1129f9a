#include "rosslink/nn/layers.hpp"

#include "rosslink/common/seeding.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace rosslink::nn {

using ad::Shape;
using ad::Tensor;
using ad::Var;

Activation parse_activation(const std::string& name) {
  if (name == "identity" || name == "linear") return Activation::identity;
  if (name == "relu") return Activation::relu;
  if (name == "gelu") return Activation::gelu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation: " + name);
}

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

Var activate(Activation a, Var x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::relu: return ad::relu(x);
    case Activation::gelu: return ad::gelu(x);
    case Activation::sigmoid: return ad::sigmoid(x);
  }
  return x;
}

void LayerSpec::validate() const {
  auto need = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("LayerSpec: ") + what);
  };
  need(input_width > 0, "input width must be positive");
  switch (kind) {
    case LayerKind::dense:
    case LayerKind::embedding:
      need(output_width > 0, "output width must be positive");
      break;
    case LayerKind::conv1d:
    case LayerKind::conv2d:
      need(channels > 0, "channel count must be positive");
      need(kernel > 0 && stride > 0, "kernel and stride must be positive");
      break;
    case LayerKind::layernorm:
      break;
    case LayerKind::decoder_block:
      need(memory_width > 0, "memory width must be positive");
      [[fallthrough]];
    case LayerKind::transformer_block:
      need(heads > 0 && input_width % heads == 0, "heads must divide model width");
      need(ff_width > 0, "feed-forward width must be positive");
      break;
  }
}

namespace {

// Portable uniform draw: the top 53 bits of the engine output.
class UniformStream {
 public:
  UniformStream(std::uint64_t seed, const std::string& name) : rng_(derive_seed(seed, {fnv1a(name)})) {}
  double operator()(double lo, double hi) {
    const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

 private:
  std::mt19937_64 rng_;
};

Tensor uniform_tensor(Shape shape, double limit, std::uint64_t seed, const std::string& name) {
  Tensor t{std::move(shape)};
  UniformStream u(seed, name);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data[i] = u(-limit, limit);
  return t;
}

Tensor xavier(int fan_in, int fan_out, std::uint64_t seed, const std::string& name) {
  return uniform_tensor({fan_in, fan_out}, std::sqrt(6.0 / (fan_in + fan_out)), seed, name);
}

Tensor ones(int n) {
  Tensor t{Shape{n}};
  t.data.setOnes();
  return t;
}

void add_layernorm(ParamStore& s, const std::string& name, int width) {
  s.add(name + "/gamma", ones(width));
  s.add(name + "/beta", Tensor(Shape{width}));
}

void add_dense(ParamStore& s, const std::string& name, int in, int out, std::uint64_t seed) {
  s.add(name + "/w", xavier(in, out, seed, name + "/w"));
  s.add(name + "/b", Tensor(Shape{out}));
}

void add_attention(ParamStore& s, const std::string& name, int width, int kv_width, std::uint64_t seed) {
  add_dense(s, name + "/q", width, width, seed);
  add_dense(s, name + "/k", kv_width, width, seed);
  add_dense(s, name + "/v", kv_width, width, seed);
  add_dense(s, name + "/o", width, width, seed);
}

void add_feed_forward(ParamStore& s, const std::string& name, int width, int ff, std::uint64_t seed) {
  add_dense(s, name + "/ff1", width, ff, seed);
  add_dense(s, name + "/ff2", ff, width, seed);
}

Var affine(Binder& p, const std::string& name, Var x) {
  Var w = p(name + "/w");
  Var y = ad::matmul(x, w);
  return ad::add(y, ad::expand(p(name + "/b"), y.shape()));
}

void require_width(const char* what, const Var& x, int width) {
  if (x.shape().empty() || x.shape().back() != width) {
    throw ad::ShapeError(std::string(what) + ": expected last-axis width " + std::to_string(width) + ", got " +
                         ad::shape_string(x.shape()));
  }
}

Var feed_forward(Binder& p, const std::string& name, Var x) {
  return affine(p, name + "/ff2", ad::gelu(affine(p, name + "/ff1", x)));
}

}  // namespace

void add_layer_params(ParamStore& s, const NamedLayer& layer, std::uint64_t seed) {
  const auto& [name, spec] = layer;
  spec.validate();
  switch (spec.kind) {
    case LayerKind::dense:
      add_dense(s, name, spec.input_width, spec.output_width, seed);
      break;
    case LayerKind::conv1d:
    case LayerKind::conv2d: {
      const bool two_d = spec.kind == LayerKind::conv2d;
      const int fan_in = spec.kernel * (two_d ? spec.kernel : 1) * spec.input_width;
      Shape shape = two_d ? Shape{spec.kernel, spec.kernel, spec.input_width, spec.channels}
                          : Shape{spec.kernel, spec.input_width, spec.channels};
      s.add(name + "/w", uniform_tensor(std::move(shape), std::sqrt(6.0 / fan_in), seed, name + "/w"));
      s.add(name + "/b", Tensor(Shape{spec.channels}));
      if (spec.normalize) add_layernorm(s, name + "/ln", spec.channels);
      break;
    }
    case LayerKind::layernorm:
      add_layernorm(s, name, spec.input_width);
      break;
    case LayerKind::embedding:
      s.add(name + "/table", xavier(spec.input_width, spec.output_width, seed, name + "/table"));
      break;
    case LayerKind::transformer_block:
      add_layernorm(s, name + "/ln1", spec.input_width);
      add_attention(s, name + "/attn", spec.input_width, spec.input_width, seed);
      add_layernorm(s, name + "/ln2", spec.input_width);
      add_feed_forward(s, name, spec.input_width, spec.ff_width, seed);
      break;
    case LayerKind::decoder_block:
      add_layernorm(s, name + "/ln1", spec.input_width);
      add_attention(s, name + "/self", spec.input_width, spec.input_width, seed);
      add_layernorm(s, name + "/ln2", spec.input_width);
      add_attention(s, name + "/cross", spec.input_width, spec.memory_width, seed);
      add_layernorm(s, name + "/ln3", spec.input_width);
      add_feed_forward(s, name, spec.input_width, spec.ff_width, seed);
      break;
  }
}

ParamStore init_params(std::span<const NamedLayer> layers, std::uint64_t seed) {
  ParamStore store(seed);
  for (const auto& layer : layers) add_layer_params(store, layer, seed);
  return store;
}

Var dense_forward(const LayerSpec& spec, Binder& p, const std::string& name, Var x) {
  require_width("dense", x, spec.input_width);
  if (x.shape().size() == 1) {
    Var y = dense_forward(spec, p, name, ad::reshape(x, {1, spec.input_width}));
    return ad::reshape(y, {spec.output_width});
  }
  return activate(spec.activation, affine(p, name, x));
}

Var conv1d_forward(const LayerSpec& spec, Binder& p, const std::string& name, Var x) {
  require_width("conv1d", x, spec.input_width);
  Var y = activate(spec.activation, ad::conv1d(x, p(name + "/w"), p(name + "/b"), spec.stride));
  return spec.normalize ? layernorm_forward(p, name + "/ln", y) : y;
}

Var conv2d_forward(const LayerSpec& spec, Binder& p, const std::string& name, Var x) {
  require_width("conv2d", x, spec.input_width);
  Var y = activate(spec.activation, ad::conv2d(x, p(name + "/w"), p(name + "/b"), spec.stride, spec.stride));
  return spec.normalize ? layernorm_forward(p, name + "/ln", y) : y;
}

Var layernorm_forward(Binder& p, const std::string& name, Var x) {
  return ad::layernorm(x, p(name + "/gamma"), p(name + "/beta"));
}

Var embedding_forward(const LayerSpec& spec, Binder& p, const std::string& name, std::span<const int> ids) {
  for (int id : ids) {
    if (id < 0 || id >= spec.input_width) {
      throw std::out_of_range("embedding " + name + ": token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(spec.input_width));
    }
  }
  return ad::gather(p(name + "/table"), ids);
}

Var attention_forward(Binder& p, const std::string& name, Var query_src, Var kv_src, int heads, const Tensor* mask,
                      std::vector<Var>* weights) {
  Var q = affine(p, name + "/q", query_src);
  Var k = affine(p, name + "/k", kv_src);
  Var v = affine(p, name + "/v", kv_src);
  const std::int64_t width = q.cols();
  if (heads <= 0 || width % heads != 0) throw std::invalid_argument("attention: heads must divide model width");
  if (mask != nullptr && mask->shape != Shape{q.rows(), k.rows()}) {
    throw ad::ShapeError("attention " + name + ": mask shape " + ad::shape_string(mask->shape) + " does not match " +
                         ad::shape_string({q.rows(), k.rows()}));
  }
  const std::int64_t dh = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Var qh = ad::slice(q, 1, h * dh, (h + 1) * dh);
    Var kh = ad::slice(k, 1, h * dh, (h + 1) * dh);
    Var vh = ad::slice(v, 1, h * dh, (h + 1) * dh);
    Var a = ad::softmax(scale * ad::matmul(qh, ad::transpose(kh)), mask);
    if (weights != nullptr) weights->push_back(a);
    outs.push_back(ad::matmul(a, vh));
  }
  Var o = heads == 1 ? outs.front() : ad::concat(outs, 1);
  return affine(p, name + "/o", o);
}

Var transformer_block_forward(const LayerSpec& spec, Binder& p, const std::string& name, Var x, const Tensor* mask,
                              std::vector<Var>* weights) {
  require_width("transformer block", x, spec.input_width);
  Var n1 = layernorm_forward(p, name + "/ln1", x);
  Var h = ad::add(x, attention_forward(p, name + "/attn", n1, n1, spec.heads, mask, weights));
  return ad::add(h, feed_forward(p, name, layernorm_forward(p, name + "/ln2", h)));
}

Var decoder_block_forward(const LayerSpec& spec, Binder& p, const std::string& name, Var x, Var memory,
                          const Tensor* self_mask) {
  require_width("decoder block", x, spec.input_width);
  require_width("decoder block memory", memory, spec.memory_width);
  Var n1 = layernorm_forward(p, name + "/ln1", x);
  Var h = ad::add(x, attention_forward(p, name + "/self", n1, n1, spec.heads, self_mask));
  Var n2 = layernorm_forward(p, name + "/ln2", h);
  h = ad::add(h, attention_forward(p, name + "/cross", n2, memory, spec.heads, nullptr));
  return ad::add(h, feed_forward(p, name, layernorm_forward(p, name + "/ln3", h)));
}

Tensor causal_mask(int n) {
  Tensor m{Shape{n, n}};
  const double inf = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) m.data[i * n + j] = -inf;
  }
  return m;
}

Tensor sinusoidal_positions(int n, int width) {
  Tensor pe{Shape{n, width}};
  for (int pos = 0; pos < n; ++pos) {
    for (int i = 0; i < width; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / width);
      pe.data[pos * width + i] = std::sin(angle);
      if (i + 1 < width) pe.data[pos * width + i + 1] = std::cos(angle);
    }
  }
  return pe;
}

}  // namespace rosslink::nn
