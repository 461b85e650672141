#include "loopalign/losses.hpp"

#include <algorithm>
#include <cmath>

#include "loopalign/batch.hpp"
#include "loopalign/errors.hpp"

namespace loopalign {

namespace bt = geo::batched;

bt::Geometry geometry_of(ManifoldKind m) {
  if (!is_hyperbolic(m)) return bt::Geometry::euclidean;
  return is_lorentz(m) ? bt::Geometry::lorentz : bt::Geometry::poincare;
}

AlignmentHead AlignmentHead::make(ParameterSet& ps, const RunConfig& cfg, Rng& rng) {
  AlignmentHead h;
  const auto d = static_cast<std::size_t>(cfg.model.d_model);
  h.project = Linear::make(ps, "align.project", d, static_cast<std::size_t>(cfg.model.d_hyp), rng,
                           /*with_bias=*/false);
  if (cfg.geometry.frechet_weights == FrechetWeighting::attention) {
    h.scorer.weight = ps.zeros("align.scorer.weight", {d, 1});
    h.scorer.bias = ps.zeros("align.scorer.bias", {1});
  }
  h.log_tau = ps.add("align.log_tau", {1}, {std::log(cfg.loss.tau)}, false);
  const double log_scale = std::log(cfg.geometry.scale);
  h.log_scale = is_adaptive(cfg.geometry.manifold) ? ps.add("align.log_scale", {1}, {log_scale}, false)
                                                   : Tensor::constant({1}, {log_scale});
  h.base_curvature = cfg.geometry.curvature;
  h.manifold = cfg.geometry.manifold;
  h.weighting = cfg.geometry.frechet_weights;
  h.frechet = geo::FrechetOptions{cfg.geometry.frechet_tol, cfg.geometry.frechet_max_iters};
  return h;
}

Tensor AlignmentHead::curvature() const { return base_curvature * exp(log_scale); }

Tensor AlignmentHead::frame_weights(const Tensor& sign, const Tensor& frame_keep) const {
  const std::size_t B = sign.size(0), T = sign.size(1);
  const Tensor scores = weighting == FrechetWeighting::attention
                            ? scorer(sign).reshape({B, T})
                            : Tensor::zeros({B, T});
  return masked_logits(scores, frame_keep).softmax(-1);
}

bt::FrechetTrace AlignmentHead::pool_sign(const Tensor& sign, const Tensor& frame_keep) const {
  const Tensor c = curvature();
  const Tensor points = bt::to_manifold(geometry(), project(sign), c);
  return bt::frechet_mean(geometry(), points, frame_weights(sign, frame_keep), c, frechet);
}

Tensor AlignmentHead::pool_text(const Tensor& hidden, const Tensor& text_keep) const {
  const std::size_t B = hidden.size(0), T = hidden.size(1);
  const Tensor keep = text_keep.reshape({B, T, 1});
  const Tensor pooled = (hidden * keep).sum(1) / keep.sum(1);
  return bt::to_manifold(geometry(), project(pooled), curvature());
}

namespace {

Tensor eye(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor::constant({n, n}, std::move(v));
}

// log(sum(exp(z))) over the last axis with a constant max shift.
Tensor logsumexp(const Tensor& z) {
  const std::size_t rows = z.numel() / z.size(-1), n = z.size(-1);
  const auto zv = z.values();
  Shape kept = z.shape();
  kept.back() = 1;
  std::vector<double> m(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    m[r] = *std::max_element(zv.begin() + static_cast<long>(r * n),
                             zv.begin() + static_cast<long>((r + 1) * n));
  }
  const Tensor shift = Tensor::constant(kept, std::move(m));
  return log(exp(z - shift).sum(-1, true)) + shift;
}

}  // namespace

Tensor ga_loss_rows(const Tensor& distances, const Tensor& tau, double margin, bool symmetric) {
  const std::size_t B = distances.size(0);
  if (distances.dim() != 2 || distances.size(1) != B) {
    throw ShapeError("ga_loss expects a square distance matrix, got " + to_string(distances.shape()));
  }
  const Tensor id = eye(B);
  const Tensor z = -(distances + margin * (1.0 - id)) / tau;
  const Tensor rows = (logsumexp(z) - (z * id).sum(-1, true)).reshape({B});
  if (!symmetric) return rows;
  const Tensor zt = z.transpose(0, 1);
  const Tensor cols = (logsumexp(zt) - (zt * id).sum(-1, true)).reshape({B});
  return 0.5 * (rows + cols);
}

Tensor ga_loss(bt::Geometry g, const Tensor& mu, const Tensor& text, const Tensor& c,
               const Tensor& tau, double margin, bool symmetric) {
  if (mu.shape() != text.shape() || mu.dim() != 2) {
    throw ShapeError("ga_loss: sign points " + to_string(mu.shape()) + " vs text points " +
                     to_string(text.shape()));
  }
  const std::size_t B = mu.size(0), D = mu.size(1);
  const Tensor d = bt::distance(g, mu.reshape({B, 1, D}), text.reshape({1, B, D}), c);
  return ga_loss_rows(d, tau, margin, symmetric).mean();
}

Tensor lm_loss(const Tensor& logits, const std::vector<std::vector<int>>& targets) {
  const std::size_t B = logits.size(0), T = logits.size(1), V = logits.size(2);
  if (targets.size() != B) throw ShapeError("lm_loss: target batch does not match logits");
  std::vector<double> onehot(B * T * V, 0.0), keep(B * T, 0.0);
  double count = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    if (targets[b].size() != T) {
      throw ShapeError("lm_loss: target length " + std::to_string(targets[b].size()) +
                       " does not match logits length " + std::to_string(T));
    }
    for (std::size_t t = 0; t < T; ++t) {
      const int id = targets[b][t];
      if (id == kPadId) continue;
      if (id < 0 || static_cast<std::size_t>(id) >= V) {
        throw DataError("target id " + std::to_string(id) + " outside vocabulary");
      }
      onehot[(b * T + t) * V + static_cast<std::size_t>(id)] = 1.0;
      keep[b * T + t] = 1.0;
      count += 1.0;
    }
  }
  if (count == 0.0) throw DataError("lm_loss: every target token is padding");
  const Tensor logp = logits - logsumexp(logits);
  const Tensor picked = (logp * Tensor::constant({B, T, V}, std::move(onehot))).sum(-1);
  return -(picked * Tensor::constant({B, T}, std::move(keep))).sum() / count;
}

JointObjective JointObjective::make(ParameterSet& ps, const LossConfig& cfg) {
  JointObjective j;
  j.learnable_ = cfg.alpha_mode == AlphaMode::learnable;
  j.fixed_alpha_ = cfg.alpha;
  j.w_aux_ = cfg.w_aux;
  if (j.learnable_) {
    j.alpha_logit_ = ps.add("joint.alpha_logit", {1}, {std::log(cfg.alpha / (1.0 - cfg.alpha))}, false);
  }
  return j;
}

Tensor JointObjective::alpha() const {
  return learnable_ ? sigmoid(alpha_logit_) : Tensor::constant({1}, {fixed_alpha_});
}

Tensor JointObjective::combine(const Tensor& lm, const Tensor& ga_final,
                               const std::vector<Tensor>& ga_aux, std::size_t expected_aux,
                               LossBreakdown* breakdown) const {
  if (ga_aux.size() != expected_aux) {
    throw ContractError("joint loss expects " + std::to_string(expected_aux) +
                        " auxiliary alignment terms, got " + std::to_string(ga_aux.size()));
  }
  Tensor ga = ga_final;
  if (!ga_aux.empty()) {
    Tensor aux = ga_aux.front();
    for (std::size_t i = 1; i < ga_aux.size(); ++i) aux = aux + ga_aux[i];
    ga = ga + w_aux_ * aux;
  }
  const Tensor a = alpha();
  const Tensor joint = (a * lm + (1.0 - a) * ga).reshape({1});
  if (breakdown != nullptr) {
    breakdown->lm = lm.item();
    breakdown->ga_final = ga_final.item();
    breakdown->ga_aux.clear();
    for (const auto& t : ga_aux) breakdown->ga_aux.push_back(t.item());
    breakdown->joint = joint.item();
    breakdown->alpha = a.item();
    breakdown->w_aux = w_aux_;
  }
  return joint;
}

}  // namespace loopalign
