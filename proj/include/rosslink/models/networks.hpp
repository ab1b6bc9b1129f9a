#pragma once

#include "rosslink/data/corpus.hpp"
#include "rosslink/nn/layers.hpp"

#include <array>
#include <span>
#include <string_view>
#include <vector>

namespace rosslink::models {

/// Sizes of all seven networks. Defaults are the desk-scale configuration.
struct ModelConfig {
  int frame_dim = 16;
  int frames_per_token = 4;  // extractor downsampling factor r
  int width = 64;            // transformer model width
  int heads = 4;
  int ff_width = 128;
  int extractor_depth = 2;
  int converter_depth = 2;
  int converter_conv_depth = 1;
  int decoder_depth = 2;
  int feature_width = 32;  // columns of F
  int codec_hidden = 64;
  int vocab = 27;           // E, shared by both languages
  int max_target_len = 16;  // L~ = L'
  int disc_channels = 8;
  int disc_depth = 2;
  int probe_hidden = 32;
  int comp_channels = 8;
  int comp_depth = 4;         // hidden conv layers; with the output layer, five

  void validate() const;
  int max_frames() const { return frames_per_token * max_target_len; }
  /// Length of teacher input and of the per-position outputs used in training.
  int decode_len() const { return max_target_len - 1; }
  /// Stride of each extractor layer: 2 until the product reaches r, then 1.
  std::vector<int> extractor_strides() const;
};

/// Every ModelConfig field by name, for config files and checkpoint metadata.
struct ModelField {
  std::string_view name;
  int ModelConfig::*member;
};
std::span<const ModelField> model_fields();

enum class Network { encoder, channel_codec, decoder, generator, discriminator, probe, compensator };
inline constexpr std::array<Network, 7> kAllNetworks{Network::encoder,   Network::channel_codec, Network::decoder,
                                                      Network::generator, Network::discriminator, Network::probe,
                                                      Network::compensator};

std::string_view network_name(Network n);
std::vector<nn::NamedLayer> network_layers(Network n, const ModelConfig& cfg);
nn::ParamStore init_network(Network n, const ModelConfig& cfg, std::uint64_t seed);

/// Frames zero-padded to r L~ rows. Rejects empty input and input longer than r L~.
ad::Tensor pad_frames(const data::FrameMatrix& frames, const ModelConfig& cfg);

/// Frames -> F of shape (L~, feature_width).
ad::Var deep_semantic_encode(const ModelConfig& cfg, nn::Binder& p, ad::Var frames);

ad::Var channel_encode(const ModelConfig& cfg, nn::Binder& p, ad::Var f);
ad::Var channel_decode(const ModelConfig& cfg, nn::Binder& p, ad::Var y);

/// Teacher-forced decoding: per-position distributions (n, E) for the n input tokens.
ad::Var decode_teacher(const ModelConfig& cfg, nn::Binder& p, ad::Var f_hat, std::span<const int> teacher);
/// Greedy decoding: BOS followed by argmax tokens until EOS or L~ tokens in total.
std::vector<int> greedy_decode(const ModelConfig& cfg, const nn::ParamStore& decoder, const ad::Tensor& f_hat);

struct GeneratorOutput {
  ad::Var f_tilde;       // (L~, feature_width)
  ad::Var intermediate;  // I~, (L', width)
};

/// Conv stack alone: the intermediate representation of the generator.
ad::Var generator_intermediate(const ModelConfig& cfg, nn::Binder& p, ad::Var frames);
GeneratorOutput generator_forward(const ModelConfig& cfg, nn::Binder& p, ad::Var frames);

/// Realness score in (0, 1) for a (L~, feature_width) feature matrix.
ad::Var discriminate(const ModelConfig& cfg, nn::Binder& p, ad::Var f);

/// Per-position probe values c in (0,1)^L'.
ad::Var probe_forward(const ModelConfig& cfg, nn::Binder& p, ad::Var intermediate);
/// c >= 0.5 maps to 1.
std::vector<int> binarize(const ad::Tensor& c, double threshold = 0.5);

/// Rows with C = 1 become F^~ + Delta where Delta comes from a 2-D conv stack over
/// [F^~, C]; rows with C = 0 are F^~ bit for bit.
ad::Var probe_compensate(const ModelConfig& cfg, nn::Binder& p, ad::Var f_hat_tilde, std::span<const int> probe);

}  // namespace rosslink::models
