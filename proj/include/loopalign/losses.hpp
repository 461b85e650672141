#pragma once

// Geometry-aware alignment, language-modelling loss and the joint objective.

#include <vector>

#include "loopalign/config.hpp"
#include "loopalign/manifold_batched.hpp"
#include "loopalign/nn.hpp"

namespace loopalign {

geo::batched::Geometry geometry_of(ManifoldKind m);

/// Projection into the (adaptive) hyperbolic space and pooling on both sides.
/// The Euclidean setting skips the exponential map and uses the L2 distance.
struct AlignmentHead {
  Linear project;   // d_model -> d_hyp, no bias
  Linear scorer;    // d_model -> 1, zero-initialised (uniform frame weights)
  Tensor log_tau;   // (1,)
  Tensor log_scale; // (1,); a parameter only for adaptive manifolds
  double base_curvature = 1.0;
  ManifoldKind manifold = ManifoldKind::adaptive_poincare;
  FrechetWeighting weighting = FrechetWeighting::attention;
  geo::FrechetOptions frechet;

  static AlignmentHead make(ParameterSet& ps, const RunConfig& cfg, Rng& rng);

  geo::batched::Geometry geometry() const { return geometry_of(manifold); }
  /// Effective curvature c * exp(log_scale), shape (1,).
  Tensor curvature() const;
  Tensor tau() const { return exp(log_tau); }

  /// Normalised frame weights (B, T): softmax of the learned score over
  /// real frames; padded frames get exactly zero.
  Tensor frame_weights(const Tensor& sign, const Tensor& frame_keep) const;
  /// Weighted Frechet mean of the projected frames, (B, D).
  geo::batched::FrechetTrace pool_sign(const Tensor& sign, const Tensor& frame_keep) const;
  /// Mean over real tokens, then projection, (B, D).
  Tensor pool_text(const Tensor& hidden, const Tensor& text_keep) const;
};

/// Contrastive alignment with sign anchors against all text candidates of
/// the batch. Returns the per-anchor losses (B,); `symmetric` averages in the
/// text-anchor direction.
Tensor ga_loss_rows(const Tensor& distances, const Tensor& tau, double margin, bool symmetric);
/// Mean of ga_loss_rows over the pairwise distances d(mu_i, text_k).
Tensor ga_loss(geo::batched::Geometry g, const Tensor& mu, const Tensor& text, const Tensor& c,
               const Tensor& tau, double margin, bool symmetric = false);

/// Mean negative log-likelihood over non-pad targets. logits (B, T, V),
/// targets (B, T). Throws DataError when every target is padding.
Tensor lm_loss(const Tensor& logits, const std::vector<std::vector<int>>& targets);

struct LossBreakdown {
  double lm = 0.0;
  double ga_final = 0.0;
  std::vector<double> ga_aux;
  double joint = 0.0;
  double alpha = 0.0;
  double w_aux = 0.0;
};

class JointObjective {
 public:
  static JointObjective make(ParameterSet& ps, const LossConfig& cfg);

  Tensor alpha() const;
  double w_aux() const { return w_aux_; }
  /// alpha * lm + (1 - alpha) * (ga_final + w_aux * sum(ga_aux)). Throws
  /// ContractError unless ga_aux has `expected_aux` entries.
  Tensor combine(const Tensor& lm, const Tensor& ga_final, const std::vector<Tensor>& ga_aux,
                 std::size_t expected_aux, LossBreakdown* breakdown = nullptr) const;

 private:
  Tensor alpha_logit_;
  double fixed_alpha_ = 0.5;
  bool learnable_ = true;
  double w_aux_ = 0.1;
};

}  // namespace loopalign
