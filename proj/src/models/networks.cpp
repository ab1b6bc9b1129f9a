#include "rosslink/models/networks.hpp"

#include <cmath>
#include <stdexcept>

namespace rosslink::models {

using ad::Shape;
using ad::Tensor;
using ad::Var;
using nn::Activation;
using nn::LayerKind;
using nn::LayerSpec;
using nn::NamedLayer;

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("model config: " + what);
  };
  need(frame_dim > 0 && width > 0 && ff_width > 0 && feature_width > 0 && codec_hidden > 0, "widths must be positive");
  need(heads > 0 && width % heads == 0, "heads must divide width");
  need(extractor_depth >= 1 && converter_depth >= 1 && converter_conv_depth >= 1 && decoder_depth >= 1,
       "depths must be >= 1");
  need(disc_depth >= 1 && comp_depth >= 1, "discriminator and compensator depths must be >= 1");
  need(disc_channels > 0 && probe_hidden > 0 && comp_channels > 0, "channel counts must be positive");
  need(vocab >= data::kReserved + 1, "vocabulary needs PAD, BOS, EOS and at least one content token");
  need(max_target_len >= 2, "max_target_len must be >= 2");
  need(feature_width % 2 == 0, "feature width must be even to form complex symbols");
  int r = 1;
  for (int s : extractor_strides()) r *= s;
  need(r == frames_per_token, "frames_per_token must be a power of two reachable in extractor_depth halvings");
}

std::vector<int> ModelConfig::extractor_strides() const {
  std::vector<int> s;
  int product = 1;
  for (int i = 0; i < extractor_depth; ++i) {
    const int stride = product < frames_per_token ? 2 : 1;
    product *= stride;
    s.push_back(stride);
  }
  return s;
}

std::span<const ModelField> model_fields() {
  static constexpr ModelField fields[] = {
      {"frame_dim", &ModelConfig::frame_dim},
      {"frames_per_token", &ModelConfig::frames_per_token},
      {"width", &ModelConfig::width},
      {"heads", &ModelConfig::heads},
      {"ff_width", &ModelConfig::ff_width},
      {"extractor_depth", &ModelConfig::extractor_depth},
      {"converter_depth", &ModelConfig::converter_depth},
      {"converter_conv_depth", &ModelConfig::converter_conv_depth},
      {"decoder_depth", &ModelConfig::decoder_depth},
      {"feature_width", &ModelConfig::feature_width},
      {"codec_hidden", &ModelConfig::codec_hidden},
      {"vocab", &ModelConfig::vocab},
      {"max_target_len", &ModelConfig::max_target_len},
      {"disc_channels", &ModelConfig::disc_channels},
      {"disc_depth", &ModelConfig::disc_depth},
      {"probe_hidden", &ModelConfig::probe_hidden},
      {"comp_channels", &ModelConfig::comp_channels},
      {"comp_depth", &ModelConfig::comp_depth},
  };
  return fields;
}

std::string_view network_name(Network n) {
  switch (n) {
    case Network::encoder: return "encoder";
    case Network::channel_codec: return "channel_codec";
    case Network::decoder: return "decoder";
    case Network::generator: return "generator";
    case Network::discriminator: return "discriminator";
    case Network::probe: return "probe";
    case Network::compensator: return "compensator";
  }
  return "?";
}

namespace {

LayerSpec dense(int in, int out, Activation act = Activation::identity) {
  return {.kind = LayerKind::dense, .input_width = in, .output_width = out, .activation = act};
}

LayerSpec conv1(int in, int out, int kernel, int stride, bool hidden) {
  return {.kind = LayerKind::conv1d,
          .input_width = in,
          .activation = hidden ? Activation::gelu : Activation::identity,
          .channels = out,
          .kernel = kernel,
          .stride = stride,
          .normalize = hidden};
}

LayerSpec conv2(int in, int out, int stride, bool hidden, bool normalize) {
  return {.kind = LayerKind::conv2d,
          .input_width = in,
          .activation = hidden ? Activation::gelu : Activation::identity,
          .channels = out,
          .kernel = 3,
          .stride = stride,
          .normalize = normalize};
}

LayerSpec block(const ModelConfig& c) {
  return {.kind = LayerKind::transformer_block, .input_width = c.width, .heads = c.heads, .ff_width = c.ff_width};
}

// Kernel equals stride, so each token slot sees only its own frames.
void add_extractor(std::vector<NamedLayer>& out, const ModelConfig& c) {
  const auto strides = c.extractor_strides();
  for (int i = 0; i < c.extractor_depth; ++i) {
    out.push_back({"ext" + std::to_string(i), conv1(i == 0 ? c.frame_dim : c.width, c.width, strides[i], strides[i], true)});
  }
}

void add_converter(std::vector<NamedLayer>& out, const ModelConfig& c) {
  for (int i = 0; i < c.converter_depth; ++i) out.push_back({"blk" + std::to_string(i), block(c)});
  out.push_back({"ln_f", {.kind = LayerKind::layernorm, .input_width = c.width}});
  for (int i = 0; i < c.converter_conv_depth; ++i) {
    const bool last = i + 1 == c.converter_conv_depth;
    out.push_back({"conv" + std::to_string(i), conv1(c.width, last ? c.feature_width : c.width, 3, 1, !last)});
  }
}

// Spatial extents after the discriminator's stride-2 convs.
std::int64_t disc_flat(const ModelConfig& c) {
  std::int64_t h = c.max_target_len, w = c.feature_width;
  for (int i = 0; i < c.disc_depth; ++i) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  }
  return h * w * (static_cast<std::int64_t>(c.disc_channels) << (c.disc_depth - 1));
}

const LayerSpec& spec_of(const std::vector<NamedLayer>& layers, const std::string& name) {
  for (const auto& l : layers) {
    if (l.name == name) return l.spec;
  }
  throw std::logic_error("no layer named " + name);
}

Var run_extractor(const ModelConfig& c, const std::vector<NamedLayer>& layers, nn::Binder& p, Var frames) {
  if (frames.shape() != Shape{c.max_frames(), c.frame_dim}) {
    throw ad::ShapeError("frames must be padded to " + ad::shape_string({c.max_frames(), c.frame_dim}) + ", got " +
                         ad::shape_string(frames.shape()));
  }
  Var x = frames;
  for (int i = 0; i < c.extractor_depth; ++i) {
    const std::string name = "ext" + std::to_string(i);
    x = nn::conv1d_forward(spec_of(layers, name), p, name, x);
  }
  return x;
}

Var run_converter(const ModelConfig& c, const std::vector<NamedLayer>& layers, nn::Binder& p, Var x) {
  x = ad::add(x, p.tape().constant(nn::sinusoidal_positions(c.max_target_len, c.width)));
  for (int i = 0; i < c.converter_depth; ++i) {
    const std::string name = "blk" + std::to_string(i);
    x = nn::transformer_block_forward(spec_of(layers, name), p, name, x, nullptr);
  }
  x = nn::layernorm_forward(p, "ln_f", x);
  for (int i = 0; i < c.converter_conv_depth; ++i) {
    const std::string name = "conv" + std::to_string(i);
    x = nn::conv1d_forward(spec_of(layers, name), p, name, x);
  }
  return x;
}

}  // namespace

std::vector<NamedLayer> network_layers(Network n, const ModelConfig& c) {
  c.validate();
  std::vector<NamedLayer> out;
  switch (n) {
    case Network::encoder:
      add_extractor(out, c);
      add_converter(out, c);
      break;
    case Network::channel_codec:
      out.push_back({"enc0", dense(c.feature_width, c.codec_hidden, Activation::relu)});
      out.push_back({"enc1", dense(c.codec_hidden, c.feature_width)});
      out.push_back({"dec0", dense(c.feature_width, c.codec_hidden, Activation::relu)});
      out.push_back({"dec1", dense(c.codec_hidden, c.feature_width)});
      break;
    case Network::decoder:
      out.push_back({"emb", {.kind = LayerKind::embedding, .input_width = c.vocab, .output_width = c.width}});
      for (int i = 0; i < c.decoder_depth; ++i) {
        LayerSpec s = block(c);
        s.kind = LayerKind::decoder_block;
        s.memory_width = c.feature_width;
        out.push_back({"blk" + std::to_string(i), s});
      }
      out.push_back({"ln_f", {.kind = LayerKind::layernorm, .input_width = c.width}});
      out.push_back({"out", dense(c.width, c.vocab)});
      break;
    case Network::generator:
      add_extractor(out, c);
      out.push_back({"mix0", dense(c.width, c.width, Activation::relu)});
      out.push_back({"mix1", dense(c.width, c.width)});
      add_converter(out, c);
      break;
    case Network::discriminator:
      for (int i = 0; i < c.disc_depth; ++i) {
        const int in = i == 0 ? 1 : c.disc_channels << (i - 1);
        out.push_back({"conv" + std::to_string(i), conv2(in, c.disc_channels << i, 2, true, false)});
      }
      out.push_back({"out", dense(static_cast<int>(disc_flat(c)), 1, Activation::sigmoid)});
      break;
    case Network::probe:
      out.push_back({"fc0", dense(c.width, c.probe_hidden, Activation::sigmoid)});
      out.push_back({"fc1", dense(c.probe_hidden, c.probe_hidden, Activation::sigmoid)});
      out.push_back({"fc2", dense(c.probe_hidden, 1, Activation::sigmoid)});
      break;
    case Network::compensator:
      for (int i = 0; i < c.comp_depth; ++i) {
        out.push_back({"conv" + std::to_string(i), conv2(i == 0 ? 2 : c.comp_channels, c.comp_channels, 1, true, true)});
      }
      out.push_back({"out", conv2(c.comp_channels, 1, 1, false, false)});
      break;
  }
  return out;
}

nn::ParamStore init_network(Network n, const ModelConfig& cfg, std::uint64_t seed) {
  const auto layers = network_layers(n, cfg);
  nn::ParamStore store = nn::init_params(layers, seed);
  // The compensator starts as the identity on probed rows (zero correction).
  if (n == Network::compensator) store.at("out/w").data.setZero();
  return store;
}

Tensor pad_frames(const data::FrameMatrix& frames, const ModelConfig& cfg) {
  if (frames.cols() != cfg.frame_dim) {
    throw ad::ShapeError("frames have " + std::to_string(frames.cols()) + " columns, expected " +
                         std::to_string(cfg.frame_dim));
  }
  if (frames.rows() < cfg.frames_per_token) {
    throw std::invalid_argument("input has " + std::to_string(frames.rows()) + " frames; at least " +
                                std::to_string(cfg.frames_per_token) + " are needed");
  }
  if (frames.rows() > cfg.max_frames()) {
    throw std::invalid_argument("input has " + std::to_string(frames.rows()) + " frames; at most " +
                                std::to_string(cfg.max_frames()) + " fit");
  }
  Tensor t{Shape{cfg.max_frames(), cfg.frame_dim}};
  t.matrix().topRows(frames.rows()) = frames;
  return t;
}

Var deep_semantic_encode(const ModelConfig& cfg, nn::Binder& p, Var frames) {
  const auto layers = network_layers(Network::encoder, cfg);
  return run_converter(cfg, layers, p, run_extractor(cfg, layers, p, frames));
}

Var channel_encode(const ModelConfig& cfg, nn::Binder& p, Var f) {
  const auto layers = network_layers(Network::channel_codec, cfg);
  return nn::dense_forward(layers[1].spec, p, "enc1", nn::dense_forward(layers[0].spec, p, "enc0", f));
}

Var channel_decode(const ModelConfig& cfg, nn::Binder& p, Var y) {
  const auto layers = network_layers(Network::channel_codec, cfg);
  return nn::dense_forward(layers[3].spec, p, "dec1", nn::dense_forward(layers[2].spec, p, "dec0", y));
}

Var decode_teacher(const ModelConfig& cfg, nn::Binder& p, Var f_hat, std::span<const int> teacher) {
  const int n = static_cast<int>(teacher.size());
  if (n < 1 || n > cfg.max_target_len) {
    throw std::invalid_argument("teacher sequence of length " + std::to_string(n) + " exceeds L~ = " +
                                std::to_string(cfg.max_target_len));
  }
  if (f_hat.shape() != Shape{cfg.max_target_len, cfg.feature_width}) {
    throw ad::ShapeError("decoder memory must be " + ad::shape_string({cfg.max_target_len, cfg.feature_width}) +
                         ", got " + ad::shape_string(f_hat.shape()));
  }
  const auto layers = network_layers(Network::decoder, cfg);
  ad::Tape& tape = p.tape();
  Var x = std::sqrt(static_cast<double>(cfg.width)) * nn::embedding_forward(layers[0].spec, p, "emb", teacher);
  x = ad::add(x, tape.constant(nn::sinusoidal_positions(n, cfg.width)));
  const Tensor mask = nn::causal_mask(n);
  for (int i = 0; i < cfg.decoder_depth; ++i) {
    const std::string name = "blk" + std::to_string(i);
    x = nn::decoder_block_forward(spec_of(layers, name), p, name, x, f_hat, &mask);
  }
  x = nn::layernorm_forward(p, "ln_f", x);
  // Logits shrink by 1/sqrt(width) so an untrained decoder starts near uniform.
  Var logits = (1.0 / std::sqrt(static_cast<double>(cfg.width))) * nn::dense_forward(spec_of(layers, "out"), p, "out", x);
  return ad::softmax(logits);
}

std::vector<int> greedy_decode(const ModelConfig& cfg, const nn::ParamStore& decoder, const Tensor& f_hat) {
  ad::Tape tape;
  nn::Binder p(tape, decoder, false);
  Var memory = tape.constant(f_hat);
  std::vector<int> tokens{data::kBos};
  while (static_cast<int>(tokens.size()) < cfg.max_target_len) {
    Var dist = decode_teacher(cfg, p, memory, tokens);
    const auto m = dist.value().matrix();
    Eigen::Index best = 0;
    m.row(m.rows() - 1).maxCoeff(&best);
    tokens.push_back(static_cast<int>(best));
    if (best == data::kEos) break;
  }
  return tokens;
}

Var generator_intermediate(const ModelConfig& cfg, nn::Binder& p, Var frames) {
  const auto layers = network_layers(Network::generator, cfg);
  return run_extractor(cfg, layers, p, frames);
}

GeneratorOutput generator_forward(const ModelConfig& cfg, nn::Binder& p, Var frames) {
  const auto layers = network_layers(Network::generator, cfg);
  Var inter = run_extractor(cfg, layers, p, frames);
  Var h = nn::dense_forward(spec_of(layers, "mix0"), p, "mix0", inter);
  h = nn::dense_forward(spec_of(layers, "mix1"), p, "mix1", h);
  return {run_converter(cfg, layers, p, h), inter};
}

Var discriminate(const ModelConfig& cfg, nn::Binder& p, Var f) {
  if (f.shape() != Shape{cfg.max_target_len, cfg.feature_width}) {
    throw ad::ShapeError("discriminator input must be " + ad::shape_string({cfg.max_target_len, cfg.feature_width}) +
                         ", got " + ad::shape_string(f.shape()));
  }
  const auto layers = network_layers(Network::discriminator, cfg);
  Var x = ad::reshape(f, {cfg.max_target_len, cfg.feature_width, 1});
  for (int i = 0; i < cfg.disc_depth; ++i) {
    const std::string name = "conv" + std::to_string(i);
    x = nn::conv2d_forward(spec_of(layers, name), p, name, x);
  }
  x = ad::reshape(x, {1, x.numel()});
  return ad::reshape(nn::dense_forward(spec_of(layers, "out"), p, "out", x), {});
}

Var probe_forward(const ModelConfig& cfg, nn::Binder& p, Var intermediate) {
  if (intermediate.shape() != Shape{cfg.max_target_len, cfg.width}) {
    throw ad::ShapeError("probe input must be " + ad::shape_string({cfg.max_target_len, cfg.width}) + ", got " +
                         ad::shape_string(intermediate.shape()));
  }
  const auto layers = network_layers(Network::probe, cfg);
  Var h = nn::dense_forward(layers[0].spec, p, "fc0", intermediate);
  h = nn::dense_forward(layers[1].spec, p, "fc1", h);
  return ad::reshape(nn::dense_forward(layers[2].spec, p, "fc2", h), {cfg.max_target_len});
}

std::vector<int> binarize(const Tensor& c, double threshold) {
  std::vector<int> out(c.numel());
  for (Eigen::Index i = 0; i < c.data.size(); ++i) out[i] = c.data[i] >= threshold ? 1 : 0;
  return out;
}

Var probe_compensate(const ModelConfig& cfg, nn::Binder& p, Var f_hat_tilde, std::span<const int> probe) {
  const std::int64_t rows = cfg.max_target_len;
  if (f_hat_tilde.shape() != Shape{rows, cfg.feature_width}) {
    throw ad::ShapeError("compensator input must be " + ad::shape_string({rows, cfg.feature_width}) + ", got " +
                         ad::shape_string(f_hat_tilde.shape()));
  }
  if (static_cast<std::int64_t>(probe.size()) != rows) {
    throw ad::ShapeError("probe length " + std::to_string(probe.size()) + " differs from L~ = " + std::to_string(rows));
  }
  bool any = false;
  for (int c : probe) any |= c != 0;
  if (!any) return f_hat_tilde;

  const auto layers = network_layers(Network::compensator, cfg);
  ad::Tape& tape = p.tape();
  Tensor cmap{Shape{rows, cfg.feature_width, 1}};
  for (std::int64_t l = 0; l < rows; ++l) {
    if (probe[l]) cmap.data.segment(l * cfg.feature_width, cfg.feature_width).setOnes();
  }
  const std::array<Var, 2> channels{ad::reshape(f_hat_tilde, {rows, cfg.feature_width, 1}), tape.constant(cmap)};
  Var x = ad::concat(channels, 2);
  for (int i = 0; i < cfg.comp_depth; ++i) {
    const std::string name = "conv" + std::to_string(i);
    x = nn::conv2d_forward(spec_of(layers, name), p, name, x);
  }
  Var corrected = ad::add(f_hat_tilde, ad::reshape(nn::conv2d_forward(spec_of(layers, "out"), p, "out", x),
                                                   {rows, cfg.feature_width}));
  // Stitch runs of equal C so unprobed rows are the input rows themselves.
  std::vector<Var> parts;
  std::int64_t start = 0;
  for (std::int64_t l = 1; l <= rows; ++l) {
    if (l == rows || (probe[l] != 0) != (probe[start] != 0)) {
      parts.push_back(ad::slice(probe[start] ? corrected : f_hat_tilde, 0, start, l));
      start = l;
    }
  }
  return parts.size() == 1 ? parts.front() : ad::concat(parts, 0);
}

}  // namespace rosslink::models
