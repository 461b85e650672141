#pragma once

// Differentiable counterparts of the geometry kernel. Every function acts on
// the last axis of its tensor arguments and broadcasts over leading axes; the
// curvature is a gradient-carrying scalar tensor of shape (1,).
//
// Numerical guards live here rather than in the tensor primitives: norms are
// floored at kNormFloor before division, atanh arguments are clamped to
// 1 - kAtanhMargin, arccosh arguments are lower-clamped at 1 and ball outputs
// are clipped to (1 - kBallMargin) / sqrt(c).

#include "loopalign/manifold.hpp"
#include "loopalign/tensor.hpp"

namespace loopalign::geo::batched {

inline constexpr double kNormFloor = 1e-15;

enum class Geometry { euclidean, poincare, lorentz };

Tensor dot(const Tensor& a, const Tensor& b);
Tensor safe_norm(const Tensor& x);

Tensor project_ball(const Tensor& x, const Tensor& c);
Tensor mobius_add(const Tensor& u, const Tensor& v, const Tensor& c);
Tensor exp0(const Tensor& v, const Tensor& c);
Tensor log0(const Tensor& y, const Tensor& c);
Tensor exp_at(const Tensor& base, const Tensor& v, const Tensor& c);
Tensor log_at(const Tensor& base, const Tensor& y, const Tensor& c);
/// Geodesic distance; the last axis is reduced away (keepdim = false).
Tensor dist_poincare(const Tensor& u, const Tensor& v, const Tensor& c);

Tensor lorentz_inner(const Tensor& x, const Tensor& y);
Tensor lorentz_project(const Tensor& x, const Tensor& c);
Tensor lorentz_exp_at(const Tensor& base, const Tensor& v, const Tensor& c);
Tensor lorentz_log_at(const Tensor& base, const Tensor& y, const Tensor& c);
/// Spatial tangent (..., d) at the origin -> ambient point (..., d + 1).
Tensor lorentz_exp0(const Tensor& spatial, const Tensor& c);
/// Ambient point (..., d + 1) -> spatial tangent (..., d) at the origin.
Tensor lorentz_log0(const Tensor& y, const Tensor& c);
Tensor dist_lorentz(const Tensor& x, const Tensor& y, const Tensor& c);

Tensor dist_euclidean(const Tensor& x, const Tensor& y);

/// Feature vectors -> manifold points (identity for Euclidean).
Tensor to_manifold(Geometry g, const Tensor& features, const Tensor& c);
/// Manifold points -> tangent vectors at the origin (identity for Euclidean).
Tensor to_tangent(Geometry g, const Tensor& points, const Tensor& c);
Tensor distance(Geometry g, const Tensor& x, const Tensor& y, const Tensor& c);

struct FrechetTrace {
  Tensor mean;
  int iterations = 0;
  bool converged = false;
  double last_step = 0.0;
};

/// Batched weighted Frechet mean of points (B, T, D) with weights (B, T);
/// the graph is unrolled through every iteration actually taken.
FrechetTrace frechet_mean(Geometry g, const Tensor& points, const Tensor& weights,
                          const Tensor& c, const FrechetOptions& opts);

}  // namespace loopalign::geo::batched
