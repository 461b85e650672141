#include "loopalign/nn.hpp"

#include <cmath>
#include <limits>

#include "loopalign/errors.hpp"

namespace loopalign {

Tensor ParameterSet::add(const std::string& name, Shape shape, std::vector<double> init,
                         bool decay) {
  if (contains(name)) throw ContractError("duplicate parameter name " + name);
  Tensor t = Tensor::parameter(std::move(shape), std::move(init));
  index_[name] = params_.size();
  params_.push_back({name, t, decay});
  return t;
}

Tensor ParameterSet::xavier(const std::string& name, std::size_t fan_in, std::size_t fan_out,
                            Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = u(rng);
  return add(name, {fan_in, fan_out}, std::move(v), true);
}

Tensor ParameterSet::zeros(const std::string& name, Shape shape) {
  std::vector<double> v(element_count(shape), 0.0);
  return add(name, std::move(shape), std::move(v), false);
}

Tensor ParameterSet::ones(const std::string& name, Shape shape) {
  std::vector<double> v(element_count(shape), 1.0);
  return add(name, std::move(shape), std::move(v), false);
}

const Parameter& ParameterSet::at(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named " + name);
  return params_[it->second];
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

void ParameterSet::zero_grad() const {
  for (const auto& p : params_) p.value.zero_grad();
}

// ---------------------------------------------------------------------------

Tensor gelu(const Tensor& x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + tanh(k * (x + 0.044715 * x * square(x))));
}

Tensor relu(const Tensor& x) { return clamp(x, 0.0, std::numeric_limits<double>::max()); }

Tensor activate(Activation a, const Tensor& x) { return a == Activation::gelu ? gelu(x) : relu(x); }

Tensor sigmoid(const Tensor& x) { return 1.0 / (1.0 + exp(-x)); }

Linear Linear::make(ParameterSet& ps, const std::string& name, std::size_t in, std::size_t out,
                    Rng& rng, bool with_bias) {
  Linear l;
  l.weight = ps.xavier(name + ".weight", in, out, rng);
  if (with_bias) l.bias = ps.zeros(name + ".bias", {out});
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  const Tensor y = matmul(x, weight);
  return bias.defined() ? y + bias : y;
}

Linear Linear::detached() const {
  Linear l;
  l.weight = weight.detach();
  if (bias.defined()) l.bias = bias.detach();
  return l;
}

LayerNorm LayerNorm::make(ParameterSet& ps, const std::string& name, std::size_t dim) {
  return {ps.ones(name + ".gain", {dim}), ps.zeros(name + ".shift", {dim})};
}

Tensor LayerNorm::operator()(const Tensor& x) const {
  const Tensor centered = x - x.mean(-1, true);
  const Tensor var = square(centered).mean(-1, true);
  return centered / sqrt(var + 1e-5) * gain + shift;
}

LayerNorm LayerNorm::detached() const { return {gain.detach(), shift.detach()}; }

Tensor masked_logits(const Tensor& logits, const Tensor& keep) {
  return logits * keep + (1.0 - keep) * -1e9;
}

MultiHeadAttention MultiHeadAttention::make(ParameterSet& ps, const std::string& name,
                                            std::size_t d_model, std::size_t heads, Rng& rng) {
  if (heads == 0 || d_model % heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  MultiHeadAttention a;
  a.q = Linear::make(ps, name + ".q", d_model, d_model, rng);
  a.k = Linear::make(ps, name + ".k", d_model, d_model, rng);
  a.v = Linear::make(ps, name + ".v", d_model, d_model, rng);
  a.o = Linear::make(ps, name + ".o", d_model, d_model, rng);
  a.heads = heads;
  return a;
}

Tensor MultiHeadAttention::operator()(const Tensor& query, const Tensor& memory,
                                      const Tensor& keep) const {
  const std::size_t B = query.size(0), Tq = query.size(1), Tk = memory.size(1);
  const std::size_t d = query.size(2), dh = d / heads;
  auto split = [&](const Tensor& x, std::size_t T) {
    return x.reshape({x.size(0), T, heads, dh}).transpose(1, 2);  // (B, h, T, dh)
  };
  const Tensor qh = split(q(query), Tq);
  const Tensor kh = split(k(memory), Tk);
  const Tensor vh = split(v(memory), Tk);
  const Tensor logits = matmul(qh, kh.transpose(2, 3)) * (1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor attn = masked_logits(logits, keep).softmax(-1);
  const Tensor ctx = matmul(attn, vh).transpose(1, 2).reshape({B, Tq, d});
  return o(ctx);
}

MultiHeadAttention MultiHeadAttention::detached() const {
  MultiHeadAttention a;
  a.q = q.detached();
  a.k = k.detached();
  a.v = v.detached();
  a.o = o.detached();
  a.heads = heads;
  return a;
}

FeedForward FeedForward::make(ParameterSet& ps, const std::string& name, std::size_t d_model,
                              std::size_t d_ff, Activation act, Rng& rng) {
  return {Linear::make(ps, name + ".in", d_model, d_ff, rng),
          Linear::make(ps, name + ".out", d_ff, d_model, rng), act};
}

Tensor FeedForward::operator()(const Tensor& x) const { return out(activate(activation, in(x))); }

FeedForward FeedForward::detached() const { return {in.detached(), out.detached(), activation}; }

EncoderLayer EncoderLayer::make(ParameterSet& ps, const std::string& name, const ModelConfig& m,
                                Rng& rng) {
  const auto d = static_cast<std::size_t>(m.d_model);
  return {LayerNorm::make(ps, name + ".norm1", d), LayerNorm::make(ps, name + ".norm2", d),
          MultiHeadAttention::make(ps, name + ".attn", d, static_cast<std::size_t>(m.heads), rng),
          FeedForward::make(ps, name + ".ffn", d, static_cast<std::size_t>(m.d_ff), m.activation, rng)};
}

Tensor EncoderLayer::operator()(const Tensor& x, const Tensor& keep) const {
  const Tensor n = norm1(x);
  const Tensor h = x + attn(n, n, keep);
  return h + ffn(norm2(h));
}

DecoderLayer DecoderLayer::make(ParameterSet& ps, const std::string& name, const ModelConfig& m,
                                Rng& rng) {
  const auto d = static_cast<std::size_t>(m.d_model);
  const auto h = static_cast<std::size_t>(m.heads);
  return {LayerNorm::make(ps, name + ".norm1", d),
          LayerNorm::make(ps, name + ".norm2", d),
          LayerNorm::make(ps, name + ".norm3", d),
          MultiHeadAttention::make(ps, name + ".self_attn", d, h, rng),
          MultiHeadAttention::make(ps, name + ".cross_attn", d, h, rng),
          FeedForward::make(ps, name + ".ffn", d, static_cast<std::size_t>(m.d_ff), m.activation, rng)};
}

Tensor DecoderLayer::operator()(const Tensor& x, const Tensor& self_keep, const Tensor& memory,
                                const Tensor& cross_keep) const {
  const Tensor n = norm1(x);
  const Tensor h1 = x + self_attn(n, n, self_keep);
  const Tensor h2 = h1 + cross_attn(norm2(h1), memory, cross_keep);
  return h2 + ffn(norm3(h2));
}

DecoderLayer DecoderLayer::detached() const {
  return {norm1.detached(),      norm2.detached(),      norm3.detached(),
          self_attn.detached(), cross_attn.detached(), ffn.detached()};
}

EncoderStack EncoderStack::make(ParameterSet& ps, const std::string& name, int count,
                                const ModelConfig& m, Rng& rng) {
  EncoderStack s;
  for (int i = 0; i < count; ++i) {
    s.layers.push_back(EncoderLayer::make(ps, name + ".layer" + std::to_string(i), m, rng));
  }
  s.final_norm = LayerNorm::make(ps, name + ".final_norm", static_cast<std::size_t>(m.d_model));
  return s;
}

Tensor EncoderStack::operator()(const Tensor& x, const Tensor& keep) const {
  Tensor h = x;
  for (const auto& layer : layers) h = layer(h, keep);
  return final_norm(h);
}

DecoderStack DecoderStack::make(ParameterSet& ps, const std::string& name, int count,
                                const ModelConfig& m, Rng& rng) {
  DecoderStack s;
  for (int i = 0; i < count; ++i) {
    s.layers.push_back(DecoderLayer::make(ps, name + ".layer" + std::to_string(i), m, rng));
  }
  s.final_norm = LayerNorm::make(ps, name + ".final_norm", static_cast<std::size_t>(m.d_model));
  return s;
}

Tensor DecoderStack::operator()(const Tensor& x, const Tensor& self_keep, const Tensor& memory,
                                const Tensor& cross_keep) const {
  Tensor h = x;
  for (const auto& layer : layers) h = layer(h, self_keep, memory, cross_keep);
  return final_norm(h);
}

DecoderStack DecoderStack::detached() const {
  DecoderStack s;
  for (const auto& layer : layers) s.layers.push_back(layer.detached());
  s.final_norm = final_norm.detached();
  return s;
}

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  std::vector<double> v(length * dim);
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      v[p * dim + i] = (i % 2 == 0) ? std::sin(static_cast<double>(p) * freq)
                                    : std::cos(static_cast<double>(p) * freq);
    }
  }
  return Tensor::constant({length, dim}, std::move(v));
}

Tensor causal_keep(std::size_t length) {
  std::vector<double> v(length * length, 0.0);
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t j = 0; j <= i; ++j) v[i * length + j] = 1.0;
  }
  return Tensor::constant({length, length}, std::move(v));
}

}  // namespace loopalign
