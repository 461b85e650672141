#pragma once

// Part-wise skeleton encoder, feature fusion, the weight-shared toy
// encoder-decoder and its three looping variants.
//
// Loop counting: `loop.loops` = L is the number of refinement iterations that
// follow the base pass, so the stack runs L + 1 times and L snapshots
// H_1 .. H_L are recorded (H_0 never is). L = 0 is the plain Base(U x 1)
// model. Ablation labels "(U x P)" count passes, P = L + 1.
//
// Causality. Under teacher forcing the decoder output at text position t
// must depend on tokens <= t only, at every iteration. Concatenation keeps
// this with a block mask: sign queries in the re-encoder see sign keys only,
// an injected text query p sees sign keys and text keys <= p, and decoder
// position t cross-attends sign keys plus injected text keys <= t. The `add`
// and `attention` injections mix text into every frame, so they run once
// per text prefix (the batch is expanded B -> B * T_text) and keep the
// output row of the matching prefix.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "loopalign/batch.hpp"
#include "loopalign/config.hpp"
#include "loopalign/nn.hpp"

namespace loopalign {

/// Symmetric-normalised adjacency with self-loops, D^-1/2 (A + I) D^-1/2.
/// Throws ConfigError for an unknown part name.
Tensor part_adjacency(const std::string& part);

struct PartEncoder {
  Tensor adjacency;        // (N, N), constant
  Linear spatial;          // 3 -> d_gcn
  Tensor temporal_weight;  // (3, d_gcn, d_gcn)
  Tensor temporal_bias;    // (d_gcn,)
  Activation activation = Activation::gelu;

  static PartEncoder make(ParameterSet& ps, const std::string& part, const ModelConfig& m, Rng& rng);
  /// Frame-local graph convolution, (B, T, N, 3) -> (B, T, N, d_gcn).
  Tensor spatial_features(const Tensor& x, const Tensor& frame_keep) const;
  /// Full part encoding, (B, T, N, 3) -> (B, T, d_gcn): spatial layer, node
  /// mean, temporal convolution over frames, activation.
  Tensor operator()(const Tensor& x, const Tensor& frame_keep) const;
};

struct LoopState {
  /// Fused sign features S (B, T_frames, d_model).
  Tensor sign;
  /// Final cross-modal state H_L (B, T_text, d_model).
  Tensor final;
  /// H_1 .. H_L; the last entry is `final` whenever L >= 1.
  std::vector<Tensor> snapshots;
  int encoder_calls = 0;
  int decoder_calls = 0;
  /// Sequence length of every encoder input, in call order.
  std::vector<std::size_t> encoder_lengths;
};

class SignModel {
 public:
  SignModel(const RunConfig& cfg, std::size_t vocab_size, ParameterSet& ps, Rng& rng);

  const RunConfig& config() const { return cfg_; }
  std::size_t vocab_size() const { return vocab_size_; }

  const PartEncoder& part_encoder(std::size_t p) const { return parts_[p]; }
  /// Four (B, T, d_gcn) part features -> S (B, T, d_model).
  Tensor fuse(const std::array<Tensor, 4>& features) const;
  Tensor sign_features(const SignInput& sign) const;
  /// Token embedding plus sinusoidal positions, (B, T_text, d_model).
  Tensor embed(const TextInput& text) const;
  /// (B, T_text, d_model) -> (B, T_text, vocab).
  Tensor logits(const Tensor& hidden) const;

  /// Runs the configured looping variant. Extra-feature noise is drawn from
  /// `noise_rng` and skipped when it is null (evaluation).
  LoopState forward(const SignInput& sign, const TextInput& text, Rng* noise_rng = nullptr) const;

  /// Greedy decoding from <bos>; returns token ids without <bos>/<eos>.
  std::vector<std::vector<int>> greedy_decode(const SignInput& sign) const;

  /// Encoder variant only: intermediate decodes use a copy of the decoder
  /// weights taken now instead of a fresh detached copy per forward pass, so
  /// finite differences see the same stop-gradient surrogate as backprop.
  void pin_intermediate_decoder();
  void unpin_intermediate_decoder() { pinned_decoder_.reset(); }

  const EncoderStack& encoder() const { return encoder_; }
  const DecoderStack& decoder() const { return decoder_; }
  Linear& fuse_projection() { return fuse_; }

 private:
  Tensor with_extra_features(const Tensor& s, Rng* noise_rng) const;
  Tensor loop_encoder_decoder(const Tensor& s, const Tensor& frame_keep, const Tensor& ctx,
                              const Tensor& text_keep, Rng* noise_rng, LoopState& st) const;
  Tensor loop_encoder(const Tensor& s, const Tensor& frame_keep, const Tensor& ctx,
                      const Tensor& text_keep, Rng* noise_rng, LoopState& st) const;
  Tensor loop_decoder(const Tensor& s, const Tensor& frame_keep, const Tensor& ctx,
                      const Tensor& text_keep, Rng* noise_rng, LoopState& st) const;
  Tensor refine_per_prefix(const Tensor& s, const Tensor& frame_keep, const Tensor& ctx,
                           const Tensor& text_keep, const Tensor& previous, LoopState& st) const;

  RunConfig cfg_;
  std::size_t vocab_size_;
  std::array<PartEncoder, 4> parts_;
  Linear fuse_;
  EncoderStack encoder_;
  DecoderStack decoder_;
  Tensor token_embedding_;  // (vocab, d_model)
  LayerNorm head_norm_;
  Linear head_;             // untied output projection
  Tensor head_bias_;        // tied mode only
  Linear add_align_;        // `add` injection with length alignment
  MultiHeadAttention inject_attn_;  // `attention` injection, single head
  std::optional<DecoderStack> pinned_decoder_;
};

}  // namespace loopalign
