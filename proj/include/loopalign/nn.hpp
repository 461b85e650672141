#pragma once

// Parameter registry and the transformer building blocks shared by the model
// and the alignment head. Layers are plain structs of parameter handles, so a
// detached copy of a layer is just a copy with every handle detached.

#include <map>
#include <random>
#include <string>
#include <vector>

#include "loopalign/config.hpp"
#include "loopalign/tensor.hpp"

namespace loopalign {

using Rng = std::mt19937_64;

struct Parameter {
  std::string name;
  Tensor value;
  /// Weight decay applies to matrices only.
  bool decay = false;
};

/// Ordered, name-addressed set of trainable leaves.
class ParameterSet {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<double> init, bool decay);
  Tensor xavier(const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng);
  Tensor zeros(const std::string& name, Shape shape);
  Tensor ones(const std::string& name, Shape shape);

  const std::vector<Parameter>& all() const { return params_; }
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  /// Total number of trainable scalars.
  std::size_t scalar_count() const;
  void zero_grad() const;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

Tensor gelu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor activate(Activation a, const Tensor& x);
Tensor sigmoid(const Tensor& x);

struct Linear {
  Tensor weight;  // (in, out)
  Tensor bias;    // (out,), undefined when the layer has no bias

  static Linear make(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out,
                     Rng& rng, bool with_bias = true);
  Tensor operator()(const Tensor& x) const;
  Linear detached() const;
};

struct LayerNorm {
  Tensor gain;
  Tensor shift;

  static LayerNorm make(ParameterSet& ps, const std::string& name, std::size_t dim);
  Tensor operator()(const Tensor& x) const;
  LayerNorm detached() const;
};

/// Additive mask convention: `keep` holds 1 for visible and 0 for hidden
/// keys; it broadcasts against (B, heads, Tq, Tk).
Tensor masked_logits(const Tensor& logits, const Tensor& keep);

struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  static MultiHeadAttention make(ParameterSet& ps, const std::string& name, std::size_t d_model,
                                 std::size_t heads, Rng& rng);
  /// query (B, Tq, d), memory (B, Tk, d), keep broadcastable to (B, 1, Tq, Tk).
  Tensor operator()(const Tensor& query, const Tensor& memory, const Tensor& keep) const;
  MultiHeadAttention detached() const;
};

struct FeedForward {
  Linear in, out;
  Activation activation = Activation::gelu;

  static FeedForward make(ParameterSet& ps, const std::string& name, std::size_t d_model,
                          std::size_t d_ff, Activation act, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  FeedForward detached() const;
};

/// Pre-norm self-attention block.
struct EncoderLayer {
  LayerNorm norm1, norm2;
  MultiHeadAttention attn;
  FeedForward ffn;

  static EncoderLayer make(ParameterSet& ps, const std::string& name, const ModelConfig& m, Rng& rng);
  Tensor operator()(const Tensor& x, const Tensor& keep) const;
};

/// Pre-norm causal self-attention, cross-attention and feed-forward block.
struct DecoderLayer {
  LayerNorm norm1, norm2, norm3;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;

  static DecoderLayer make(ParameterSet& ps, const std::string& name, const ModelConfig& m, Rng& rng);
  Tensor operator()(const Tensor& x, const Tensor& self_keep, const Tensor& memory,
                    const Tensor& cross_keep) const;
  DecoderLayer detached() const;
};

struct EncoderStack {
  std::vector<EncoderLayer> layers;
  LayerNorm final_norm;

  static EncoderStack make(ParameterSet& ps, const std::string& name, int count,
                           const ModelConfig& m, Rng& rng);
  Tensor operator()(const Tensor& x, const Tensor& keep) const;
};

struct DecoderStack {
  std::vector<DecoderLayer> layers;
  LayerNorm final_norm;

  static DecoderStack make(ParameterSet& ps, const std::string& name, int count,
                           const ModelConfig& m, Rng& rng);
  Tensor operator()(const Tensor& x, const Tensor& self_keep, const Tensor& memory,
                    const Tensor& cross_keep) const;
  /// Same computation with every parameter behind a gradient barrier.
  DecoderStack detached() const;
};

/// Sinusoidal position table (length, dim).
Tensor sinusoidal_positions(std::size_t length, std::size_t dim);

/// Lower-triangular (T, T) visibility matrix.
Tensor causal_keep(std::size_t length);

}  // namespace loopalign
