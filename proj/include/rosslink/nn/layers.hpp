#pragma once

#include "rosslink/autodiff/ops.hpp"
#include "rosslink/nn/param_store.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rosslink::nn {

enum class LayerKind { dense, conv1d, conv2d, layernorm, embedding, transformer_block, decoder_block };
enum class Activation { identity, relu, gelu, sigmoid };

Activation parse_activation(const std::string& name);
std::string_view activation_name(Activation a);
ad::Var activate(Activation a, ad::Var x);

/// Hyperparameters of one layer. Widths mean:
///   dense        in -> out
///   conv1d/2d    input channels -> output channels (`channels`), kernel, stride
///   layernorm    input_width
///   embedding    vocabulary (input_width) -> width (output_width)
///   blocks       model width (input_width), heads, ff_width; decoder also memory_width
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  int input_width = 0;
  int output_width = 0;
  int heads = 1;
  Activation activation = Activation::identity;
  int channels = 0;
  int kernel = 1;
  int stride = 1;
  int ff_width = 0;
  int memory_width = 0;
  bool normalize = false;  // conv modules: layernorm over channels after the activation

  void validate() const;
};

struct NamedLayer {
  std::string name;
  LayerSpec spec;
};

/// Xavier-uniform for dense, attention and embedding weights, He-uniform for conv
/// kernels, zero biases, unit layernorm gains. Each tensor draws from its own stream
/// derived from (seed, name), so adding a layer does not disturb the others.
ParamStore init_params(std::span<const NamedLayer> layers, std::uint64_t seed);
void add_layer_params(ParamStore& store, const NamedLayer& layer, std::uint64_t seed);

/// y = act(x W + b). x is (rows, in) or a rank-1 (in) vector.
ad::Var dense_forward(const LayerSpec& spec, Binder& p, const std::string& name, ad::Var x);
/// act(conv1d(x)) then optional layernorm. x: (T, Cin).
ad::Var conv1d_forward(const LayerSpec& spec, Binder& p, const std::string& name, ad::Var x);
/// act(conv2d(x)) then optional layernorm. x: (H, W, Cin).
ad::Var conv2d_forward(const LayerSpec& spec, Binder& p, const std::string& name, ad::Var x);
ad::Var layernorm_forward(Binder& p, const std::string& name, ad::Var x);
ad::Var embedding_forward(const LayerSpec& spec, Binder& p, const std::string& name, std::span<const int> ids);

/// Multi-head attention with projections under `name`. `weights`, if given, receives
/// each head's attention matrix.
ad::Var attention_forward(Binder& p, const std::string& name, ad::Var query_src, ad::Var kv_src, int heads,
                          const ad::Tensor* mask, std::vector<ad::Var>* weights = nullptr);

/// Pre-norm encoder block. `mask` is additive (0 / -inf), shape (seq, seq), or null.
ad::Var transformer_block_forward(const LayerSpec& spec, Binder& p, const std::string& name, ad::Var x,
                                  const ad::Tensor* mask, std::vector<ad::Var>* weights = nullptr);
/// Pre-norm decoder block: masked self-attention, cross-attention over `memory`, feed-forward.
ad::Var decoder_block_forward(const LayerSpec& spec, Binder& p, const std::string& name, ad::Var x,
                              ad::Var memory, const ad::Tensor* self_mask);

/// (n, n) additive mask: 0 on and below the diagonal, -inf above.
ad::Tensor causal_mask(int n);
/// pe[pos, 2i] = sin(pos / 10000^(2i/d)), pe[pos, 2i+1] = cos(same)
ad::Tensor sinusoidal_positions(int n, int width);

}  // namespace rosslink::nn
