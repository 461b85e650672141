#include "loopalign/model.hpp"

#include <algorithm>
#include <cmath>

#include "loopalign/errors.hpp"

namespace loopalign {

Tensor TextInput::keep() const {
  const std::size_t B = batch(), T = length();
  std::vector<double> v(B * T);
  for (std::size_t b = 0; b < B; ++b) {
    if (tokens[b].size() != T) throw ShapeError("ragged token matrix");
    for (std::size_t t = 0; t < T; ++t) v[b * T + t] = tokens[b][t] == kPadId ? 0.0 : 1.0;
  }
  return Tensor::constant({B, T}, std::move(v));
}

namespace {

using Edge = std::pair<std::size_t, std::size_t>;

std::vector<Edge> chain(std::size_t n) {
  std::vector<Edge> e;
  for (std::size_t i = 0; i + 1 < n; ++i) e.emplace_back(i, i + 1);
  return e;
}

// Wrist 0; thumb 1-4, index 5-8, middle 9-12, ring 13-16, little 17-20.
std::vector<Edge> hand_tree() {
  std::vector<Edge> e;
  for (std::size_t finger = 0; finger < 5; ++finger) {
    const std::size_t base = 1 + 4 * finger;
    e.emplace_back(0, base);
    for (std::size_t j = 0; j < 3; ++j) e.emplace_back(base + j, base + j + 1);
  }
  return e;
}

Tensor normalized_adjacency(std::size_t n, const std::vector<Edge>& edges) {
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) a[i * n + i] = 1.0;
  for (const auto& [i, j] : edges) a[i * n + j] = a[j * n + i] = 1.0;
  std::vector<double> deg(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) deg[i] += a[i * n + j];
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a[i * n + j] /= std::sqrt(deg[i] * deg[j]);
  }
  return Tensor::constant({n, n}, std::move(a));
}

std::vector<double> noise_values(std::size_t n, double stddev, Rng& rng) {
  std::normal_distribution<double> d(0.0, stddev);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Visibility of the re-encoder over [S; H] (concat injection), (B, 1, Tf+Tt, Tf+Tt).
Tensor concat_encoder_keep(const Tensor& frame_keep, const Tensor& text_keep) {
  const std::size_t B = frame_keep.size(0), Tf = frame_keep.size(1), Tt = text_keep.size(1);
  const std::size_t n = Tf + Tt;
  const auto fk = frame_keep.values();
  const auto tk = text_keep.values();
  std::vector<double> v(B * n * n, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t r = 0; r < n; ++r) {
      double* row = &v[(b * n + r) * n];
      for (std::size_t c = 0; c < Tf; ++c) row[c] = fk[b * Tf + c];
      if (r < Tf) continue;
      for (std::size_t q = 0; q <= r - Tf; ++q) row[Tf + q] = tk[b * Tt + q];
    }
  }
  return Tensor::constant({B, 1, n, n}, std::move(v));
}

// Decoder cross-attention over [S; H]: position t sees sign frames and text <= t.
Tensor concat_cross_keep(const Tensor& frame_keep, const Tensor& text_keep) {
  const std::size_t B = frame_keep.size(0), Tf = frame_keep.size(1), Tt = text_keep.size(1);
  const std::size_t n = Tf + Tt;
  const auto fk = frame_keep.values();
  const auto tk = text_keep.values();
  std::vector<double> v(B * Tt * n, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < Tt; ++t) {
      double* row = &v[(b * Tt + t) * n];
      for (std::size_t c = 0; c < Tf; ++c) row[c] = fk[b * Tf + c];
      for (std::size_t q = 0; q <= t; ++q) row[Tf + q] = tk[b * Tt + q];
    }
  }
  return Tensor::constant({B, 1, Tt, n}, std::move(v));
}

// Repeats every batch row `times` times along a new second axis and merges
// it into the batch axis: (B, ...) -> (B * times, ...).
Tensor repeat_rows(const Tensor& x, std::size_t times) {
  Shape expanded = x.shape();
  expanded.insert(expanded.begin() + 1, 1);
  Shape ones(expanded.size(), 1);
  ones[1] = times;
  Tensor r = x.reshape(expanded) * Tensor::full(ones, 1.0);
  Shape merged = x.shape();
  merged[0] *= times;
  return r.reshape(merged);
}

}  // namespace

Tensor part_adjacency(const std::string& part) {
  if (part == "body") return normalized_adjacency(9, chain(9));
  if (part == "face") return normalized_adjacency(18, chain(18));
  if (part == "left" || part == "right") return normalized_adjacency(21, hand_tree());
  throw ConfigError("no adjacency defined for body part '" + part + "'");
}

PartEncoder PartEncoder::make(ParameterSet& ps, const std::string& part, const ModelConfig& m,
                              Rng& rng) {
  const auto d = static_cast<std::size_t>(m.d_gcn);
  PartEncoder e;
  e.adjacency = part_adjacency(part);
  const std::string name = "parts." + part;
  e.spatial = Linear::make(ps, name + ".spatial", kChannels, d, rng);
  const double limit = std::sqrt(6.0 / static_cast<double>(3 * d + d));
  std::uniform_real_distribution<double> u(-limit, limit);
  std::vector<double> w(3 * d * d);
  for (auto& x : w) x = u(rng);
  e.temporal_weight = ps.add(name + ".temporal.weight", {3, d, d}, std::move(w), true);
  e.temporal_bias = ps.zeros(name + ".temporal.bias", {d});
  e.activation = m.activation;
  return e;
}

Tensor PartEncoder::spatial_features(const Tensor& x, const Tensor& frame_keep) const {
  const std::size_t B = x.size(0), T = x.size(1);
  if (x.dim() != 4 || x.size(2) != adjacency.size(0) || x.size(3) != kChannels) {
    throw ShapeError("part input " + to_string(x.shape()) + " does not match " +
                     std::to_string(adjacency.size(0)) + " keypoints x 3 channels");
  }
  const Tensor keep = frame_keep.reshape({B, T, 1, 1});
  return activate(activation, spatial(matmul(adjacency, x * keep))) * keep;
}

Tensor PartEncoder::operator()(const Tensor& x, const Tensor& frame_keep) const {
  // The temporal convolution is linear, so it runs after the node mean.
  const Tensor h = spatial_features(x, frame_keep).mean(2);  // (B, T, d)
  const std::size_t B = h.size(0), T = h.size(1), d = h.size(2);
  const Tensor pad = Tensor::zeros({B, 1, d});
  const Tensor padded = concat({pad, h, pad}, 1);
  Tensor acc = temporal_bias;
  for (std::size_t k = 0; k < 3; ++k) {
    const Tensor wk = temporal_weight.slice(0, k, k + 1).reshape({d, d});
    acc = acc + matmul(padded.slice(1, k, k + T), wk);
  }
  return activate(activation, acc);
}

SignModel::SignModel(const RunConfig& cfg, std::size_t vocab_size, ParameterSet& ps, Rng& rng)
    : cfg_(cfg), vocab_size_(vocab_size) {
  cfg_.validate();
  if (vocab_size < 4) throw ConfigError("vocabulary must contain at least one gloss token");
  const ModelConfig& m = cfg_.model;
  const auto d = static_cast<std::size_t>(m.d_model);
  for (std::size_t p = 0; p < 4; ++p) parts_[p] = PartEncoder::make(ps, std::string(kPartNames[p]), m, rng);
  fuse_ = Linear::make(ps, "fuse", 4 * static_cast<std::size_t>(m.d_gcn), d, rng);
  encoder_ = EncoderStack::make(ps, "encoder", cfg_.loop.encoder_layers, m, rng);
  decoder_ = DecoderStack::make(ps, "decoder", cfg_.loop.decoder_layers, m, rng);

  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> emb(vocab_size * d);
  for (auto& x : emb) x = n01(rng);
  token_embedding_ = ps.add("text.embedding", {vocab_size, d}, std::move(emb), true);
  head_norm_ = LayerNorm::make(ps, "head.norm", d);
  if (m.tie_embeddings) {
    head_bias_ = ps.zeros("head.bias", {vocab_size});
  } else {
    head_ = Linear::make(ps, "head.proj", d, vocab_size, rng);
  }
  if (cfg_.loop.variant == Variant::encoder_decoder) {
    if (cfg_.loop.injection == Injection::add && cfg_.loop.add_length_align) {
      add_align_ = Linear::make(ps, "inject.align", d, d, rng);
    } else if (cfg_.loop.injection == Injection::attention) {
      inject_attn_ = MultiHeadAttention::make(ps, "inject.attn", d, 1, rng);
    }
  }
}

Tensor SignModel::fuse(const std::array<Tensor, 4>& features) const {
  const std::size_t T = features[0].size(1);
  for (const auto& f : features) {
    if (f.dim() != 3 || f.size(1) != T) {
      throw ShapeError("part features disagree on frame count: " + to_string(features[0].shape()) +
                       " vs " + to_string(f.shape()));
    }
  }
  return fuse_(concat({features[0], features[1], features[2], features[3]}, -1));
}

Tensor SignModel::sign_features(const SignInput& sign) const {
  std::array<Tensor, 4> feats;
  for (std::size_t p = 0; p < 4; ++p) feats[p] = parts_[p](sign.parts[p], sign.frame_keep);
  return fuse(feats);
}

Tensor SignModel::embed(const TextInput& text) const {
  const std::size_t B = text.batch(), T = text.length(), V = vocab_size_;
  std::vector<double> onehot(B * T * V, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    if (text.tokens[b].size() != T) throw ShapeError("ragged token matrix");
    for (std::size_t t = 0; t < T; ++t) {
      const int id = text.tokens[b][t];
      if (id < 0 || static_cast<std::size_t>(id) >= V) {
        throw DataError("token id " + std::to_string(id) + " outside vocabulary of size " +
                        std::to_string(V));
      }
      onehot[(b * T + t) * V + static_cast<std::size_t>(id)] = 1.0;
    }
  }
  const Tensor e = matmul(Tensor::constant({B, T, V}, std::move(onehot)), token_embedding_);
  return e + sinusoidal_positions(T, static_cast<std::size_t>(cfg_.model.d_model));
}

Tensor SignModel::logits(const Tensor& hidden) const {
  const Tensor h = head_norm_(hidden);
  if (cfg_.model.tie_embeddings) return matmul(h, token_embedding_.transpose(0, 1)) + head_bias_;
  return head_(h);
}

Tensor SignModel::with_extra_features(const Tensor& s, Rng* noise_rng) const {
  switch (cfg_.loop.extra_feature) {
    case ExtraFeature::none: return s;
    case ExtraFeature::noise:
      if (noise_rng == nullptr || cfg_.loop.noise_std == 0.0) return s;
      return s + Tensor::constant(s.shape(), noise_values(s.numel(), cfg_.loop.noise_std, *noise_rng));
    case ExtraFeature::temporal: return s + sinusoidal_positions(s.size(1), s.size(2));
  }
  return s;
}

LoopState SignModel::forward(const SignInput& sign, const TextInput& text, Rng* noise_rng) const {
  if (text.batch() != sign.batch()) {
    throw ShapeError("sign batch " + std::to_string(sign.batch()) + " vs text batch " +
                     std::to_string(text.batch()));
  }
  LoopState st;
  st.sign = sign_features(sign);
  const Tensor ctx = embed(text);
  const Tensor text_keep = text.keep();
  switch (cfg_.loop.variant) {
    case Variant::encoder_decoder:
      st.final = loop_encoder_decoder(st.sign, sign.frame_keep, ctx, text_keep, noise_rng, st);
      break;
    case Variant::encoder:
      st.final = loop_encoder(st.sign, sign.frame_keep, ctx, text_keep, noise_rng, st);
      break;
    case Variant::decoder:
      st.final = loop_decoder(st.sign, sign.frame_keep, ctx, text_keep, noise_rng, st);
      break;
  }
  return st;
}

namespace {

Tensor self_keep_of(const Tensor& text_keep) {
  const std::size_t B = text_keep.size(0), T = text_keep.size(1);
  return causal_keep(T).reshape({1, 1, T, T}) * text_keep.reshape({B, 1, 1, T});
}

Tensor sign_keep_of(const Tensor& frame_keep) {
  return frame_keep.reshape({frame_keep.size(0), 1, 1, frame_keep.size(1)});
}

}  // namespace

Tensor SignModel::loop_encoder_decoder(const Tensor& s, const Tensor& frame_keep, const Tensor& ctx,
                                       const Tensor& text_keep, Rng* noise_rng,
                                       LoopState& st) const {
  const Tensor sign_keep = sign_keep_of(frame_keep);
  const Tensor self_keep = self_keep_of(text_keep);
  Tensor h = decoder_(ctx, self_keep, encoder_(with_extra_features(s, noise_rng), sign_keep), sign_keep);
  ++st.encoder_calls;
  st.encoder_lengths.push_back(s.size(1));
  ++st.decoder_calls;
  if (cfg_.loop.loops == 0) return h;

  const bool concat_mode = cfg_.loop.injection == Injection::concat;
  const Tensor enc_keep = concat_mode ? concat_encoder_keep(frame_keep, text_keep) : Tensor();
  const Tensor cross_keep = concat_mode ? concat_cross_keep(frame_keep, text_keep) : Tensor();
  for (int i = 1; i <= cfg_.loop.loops; ++i) {
    const Tensor si = with_extra_features(s, noise_rng);
    if (concat_mode) {
      const Tensor memory = encoder_(concat({si, h}, 1), enc_keep);
      h = decoder_(ctx, self_keep, memory, cross_keep);
      ++st.encoder_calls;
      st.encoder_lengths.push_back(memory.size(1));
      ++st.decoder_calls;
    } else {
      h = refine_per_prefix(si, frame_keep, ctx, text_keep, h, st);
    }
    st.snapshots.push_back(h);
  }
  return h;
}

Tensor SignModel::refine_per_prefix(const Tensor& s, const Tensor& frame_keep, const Tensor& ctx,
                                    const Tensor& text_keep, const Tensor& previous,
                                    LoopState& st) const {
  const std::size_t B = s.size(0), Tf = s.size(1), d = s.size(2), Tt = ctx.size(1);
  // prefix[b, t, q] = 1 when token q is visible to prefix t.
  std::vector<double> pv(B * Tt * Tt, 0.0);
  const auto tk = text_keep.values();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < Tt; ++t) {
      for (std::size_t q = 0; q <= t; ++q) pv[(b * Tt + t) * Tt + q] = tk[b * Tt + q];
    }
  }
  const Tensor prefix = Tensor::constant({B, Tt, Tt}, pv);
  const Tensor s_rep = repeat_rows(s, Tt);  // (B*Tt, Tf, d)

  Tensor injected;
  if (cfg_.loop.injection == Injection::add) {
    if (cfg_.loop.add_length_align) {
      const Tensor counts = clamp(prefix.sum(-1, true), 1.0, 1e300);
      const Tensor pooled = matmul(prefix / counts, previous);  // (B, Tt, d)
      injected = s_rep + add_align_(pooled).reshape({B * Tt, 1, d});
    } else {
      if (Tf != Tt) {
        throw ConfigError("add injection without length alignment needs equal lengths, got " +
                          std::to_string(Tf) + " frames and " + std::to_string(Tt) + " tokens");
      }
      const Tensor masked = previous.reshape({B, 1, Tt, d}) * prefix.reshape({B, Tt, Tt, 1});
      injected = s_rep + masked.reshape({B * Tt, Tt, d});
    }
  } else {
    const Tensor h_rep = repeat_rows(previous, Tt);  // (B*Tt, Tt, d)
    injected = s_rep + inject_attn_(s_rep, h_rep, prefix.reshape({B * Tt, 1, 1, Tt}));
  }

  const Tensor sign_keep = sign_keep_of(repeat_rows(frame_keep, Tt));
  const Tensor memory = encoder_(injected, sign_keep);
  const Tensor out = decoder_(repeat_rows(ctx, Tt), self_keep_of(repeat_rows(text_keep, Tt)),
                              memory, sign_keep);  // (B*Tt, Tt, d)
  ++st.encoder_calls;
  st.encoder_lengths.push_back(memory.size(1));
  ++st.decoder_calls;
  // Row t of the prefix-t copy.
  std::vector<double> eye(Tt * Tt, 0.0);
  for (std::size_t t = 0; t < Tt; ++t) eye[t * Tt + t] = 1.0;
  return (out.reshape({B, Tt, Tt, d}) * Tensor::constant({1, Tt, Tt, 1}, std::move(eye))).sum(2);
}

void SignModel::pin_intermediate_decoder() { pinned_decoder_ = decoder_.detached(); }

Tensor SignModel::loop_encoder(const Tensor& s, const Tensor& frame_keep, const Tensor& ctx,
                               const Tensor& text_keep, Rng* noise_rng, LoopState& st) const {
  const Tensor sign_keep = sign_keep_of(frame_keep);
  const Tensor self_keep = self_keep_of(text_keep);
  Tensor hs = encoder_(with_extra_features(s, noise_rng), sign_keep);
  ++st.encoder_calls;
  st.encoder_lengths.push_back(hs.size(1));
  const int L = cfg_.loop.loops;
  if (L == 0) {
    ++st.decoder_calls;
    return decoder_(ctx, self_keep, hs, sign_keep);
  }
  const DecoderStack frozen = pinned_decoder_ ? *pinned_decoder_ : decoder_.detached();
  Tensor final;
  for (int i = 1; i <= L; ++i) {
    hs = encoder_(hs + with_extra_features(s, noise_rng), sign_keep);
    ++st.encoder_calls;
    st.encoder_lengths.push_back(hs.size(1));
    ++st.decoder_calls;
    if (i < L) {
      st.snapshots.push_back(frozen(ctx, self_keep, hs, sign_keep));
    } else {
      final = decoder_(ctx, self_keep, hs, sign_keep);
      st.snapshots.push_back(final);
    }
  }
  return final;
}

Tensor SignModel::loop_decoder(const Tensor& s, const Tensor& frame_keep, const Tensor& ctx,
                               const Tensor& text_keep, Rng* noise_rng, LoopState& st) const {
  const Tensor sign_keep = sign_keep_of(frame_keep);
  const Tensor self_keep = self_keep_of(text_keep);
  const Tensor hs = encoder_(with_extra_features(s, noise_rng), sign_keep);
  ++st.encoder_calls;
  st.encoder_lengths.push_back(hs.size(1));
  Tensor h = decoder_(ctx, self_keep, hs, sign_keep);
  ++st.decoder_calls;
  for (int i = 1; i <= cfg_.loop.loops; ++i) {
    h = decoder_(h, self_keep, hs, sign_keep);
    ++st.decoder_calls;
    st.snapshots.push_back(h);
  }
  return h;
}

std::vector<std::vector<int>> SignModel::greedy_decode(const SignInput& sign) const {
  NoGradGuard no_grad;
  const std::size_t B = sign.batch();
  TextInput prefix;
  prefix.tokens.assign(B, std::vector<int>{kBosId});
  std::vector<std::vector<int>> out(B);
  std::vector<bool> done(B, false);
  for (int step = 0; step < cfg_.model.max_decode_len; ++step) {
    const LoopState st = forward(sign, prefix);
    const Tensor lg = logits(st.final);
    const std::size_t T = prefix.length(), V = vocab_size_;
    const auto lv = lg.values();
    bool all_done = true;
    for (std::size_t b = 0; b < B; ++b) {
      int next = kEosId;
      if (!done[b]) {
        const double* row = &lv[(b * T + T - 1) * V];
        double best = -INFINITY;
        for (std::size_t v = 0; v < V; ++v) {
          if (v == static_cast<std::size_t>(kPadId) || v == static_cast<std::size_t>(kBosId)) continue;
          if (row[v] > best) best = row[v], next = static_cast<int>(v);
        }
        if (next == kEosId) {
          done[b] = true;
        } else {
          out[b].push_back(next);
        }
      }
      // Finished rows keep extending with <pad>; causality makes them inert.
      prefix.tokens[b].push_back(done[b] ? kPadId : next);
      all_done = all_done && done[b];
    }
    if (all_done) break;
  }
  return out;
}

}  // namespace loopalign
