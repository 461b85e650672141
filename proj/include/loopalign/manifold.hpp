#pragma once

// Hyperbolic geometry on plain vectors: the adaptive-curvature Poincare ball,
// the Lorentz hyperboloid, the isometry between them and the weighted Frechet
// mean.
//
// Tangent-vector convention. The origin exponential map is
//
//     exp0(v) = tanh(sqrt(c) |v| / 2) * v / (sqrt(c) |v|)
//
// and the distance is d(u, v) = 2/sqrt(c) * atanh(sqrt(c) |(-u) (+) v|), so
// d(0, exp0(v)) = |v|: tangent vectors are expressed in an orthonormal frame
// of the Riemannian metric (they are lambda_x = 2/(1 - c|x|^2) times the raw
// ambient tangent vector used by some references). The maps at a general base
// point follow from gyro-translation:
//
//     exp_x(v) = x (+) exp0(v)        log_x(y) = log0((-x) (+) y)
//
// which keeps d(x, exp_x(v)) = |v| everywhere. Lorentz tangent vectors live in
// the ambient Minkowski space, already orthonormal for the induced metric.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "loopalign/errors.hpp"

namespace loopalign::geo {

using Vector = Eigen::VectorXd;

/// Ball outputs are clipped to sqrt(c)|x| <= 1 - kBallMargin.
inline constexpr double kBallMargin = 1e-5;
/// atanh arguments are clamped to |x| <= 1 - kAtanhMargin.
inline constexpr double kAtanhMargin = 1e-7;

/// Effective curvature c_hat = sigma * c with sigma = exp(log_scale).
struct Curvature {
  double base = 1.0;
  double log_scale = 0.0;
  bool adaptive = true;

  Curvature() = default;
  Curvature(double base_curvature, double scale, bool is_adaptive);

  double scale() const { return std::exp(log_scale); }
  double effective() const { return base * scale(); }
};

class PoincareBall {
 public:
  explicit PoincareBall(double curvature);
  explicit PoincareBall(const Curvature& k) : PoincareBall(k.effective()) {}

  double curvature() const { return c_; }
  double max_norm() const { return (1.0 - kBallMargin) / sqrt_c_; }
  bool contains(const Vector& x) const;
  Vector origin(Eigen::Index dim) const { return Vector::Zero(dim); }
  Vector project(const Vector& x) const;

  /// Gyrovector addition with curvature c; throws DomainError if an input
  /// lies outside the ball. The result is re-clipped into the ball.
  Vector mobius_add(const Vector& u, const Vector& v) const;
  Vector exp0(const Vector& v) const;
  Vector log0(const Vector& y) const;
  Vector exp(const Vector& base, const Vector& v) const;
  Vector log(const Vector& base, const Vector& y) const;
  double dist(const Vector& u, const Vector& v) const;
  /// Closed form arcosh(1 + 2c|u-v|^2 / ((1-c|u|^2)(1-c|v|^2))) / sqrt(c).
  double dist_arcosh(const Vector& u, const Vector& v) const;
  /// Euclidean gradient times the inverse metric factor (1 - c|x|^2)^2 / 4.
  Vector riemannian_rescale(const Vector& euclidean_grad, const Vector& at) const;

 private:
  Vector add_unclipped(const Vector& u, const Vector& v) const;
  void require_inside(const Vector& x, const char* what) const;

  double c_;
  double sqrt_c_;
};

/// Minkowski bilinear form <x, y>_L = -x0 y0 + sum_i xi yi.
double lorentz_inner(const Vector& x, const Vector& y);

/// Upper sheet of <x, x>_L = -1/c, time-like coordinate first.
class Hyperboloid {
 public:
  explicit Hyperboloid(double curvature);
  explicit Hyperboloid(const Curvature& k) : Hyperboloid(k.effective()) {}

  double curvature() const { return c_; }
  /// Origin of the ambient (dim)-vector, i.e. (1/sqrt(c), 0, ..., 0).
  Vector origin(Eigen::Index ambient_dim) const;
  /// Recomputes the time-like coordinate from the spatial part.
  Vector project(const Vector& x) const;
  bool contains(const Vector& x, double tol = 1e-5) const;
  /// Projection of an ambient vector onto the tangent space at x.
  Vector tangent_project(const Vector& x, const Vector& w) const;

  Vector exp(const Vector& base, const Vector& v) const;
  Vector log(const Vector& base, const Vector& y) const;
  /// Origin maps; `v` is the spatial tangent (d-dim), results are ambient.
  Vector exp0(const Vector& spatial) const;
  Vector log0(const Vector& y) const;
  double dist(const Vector& x, const Vector& y) const;

 private:
  double c_;
  double sqrt_c_;
};

Vector poincare_to_lorentz(const Vector& p, double curvature);
Vector lorentz_to_poincare(const Vector& x, double curvature);

/// Smallest step scale tried before an increasing step is accepted anyway.
inline constexpr double kMinFrechetStepScale = 1.0 / 1024.0;

struct FrechetOptions {
  double tol = 1e-6;
  int max_iters = 100;
};

struct FrechetResult {
  Vector mean;
  int iterations = 0;
  bool converged = false;
  /// Objective sum_t w_t d^2(mu_k, h_t) for k = 0 .. iterations.
  std::vector<double> objective;
};

template <class Manifold>
double frechet_objective(const Manifold& m, const Vector& z, std::span<const Vector> points,
                         std::span<const double> weights) {
  double f = 0.0;
  for (std::size_t t = 0; t < points.size(); ++t) {
    const double d = m.dist(z, points[t]);
    f += weights[t] * d * d;
  }
  return f;
}

void validate_frechet_inputs(std::span<const Vector> points, std::span<const double> weights);

/// Weighted Frechet mean by the iteration mu <- exp_mu(t * sum_t w_t log_mu(h_t)),
/// started at the first point. The step scale t starts at 1 and is halved
/// while the objective would increase (then allowed to double back towards 1
/// on the next iteration); with well-concentrated points t stays at 1.
/// Stops once the unscaled tangent update norm drops below `tol`; otherwise
/// returns the last iterate with converged = false.
template <class Manifold>
FrechetResult frechet_mean(const Manifold& m, std::span<const Vector> points,
                           std::span<const double> weights, FrechetOptions opts = {}) {
  validate_frechet_inputs(points, weights);
  FrechetResult r;
  r.mean = points.front();
  r.objective.push_back(frechet_objective(m, r.mean, points, weights));

  bool identical = true;
  for (const auto& p : points) identical = identical && p == points.front();
  if (identical) {
    r.converged = true;
    return r;
  }

  double scale = 1.0;
  for (int k = 0; k < opts.max_iters; ++k) {
    Vector step = Vector::Zero(r.mean.size());
    for (std::size_t t = 0; t < points.size(); ++t) {
      if (weights[t] != 0.0) step += weights[t] * m.log(r.mean, points[t]);
    }
    const double step_norm = step.norm();
    scale = std::min(1.0, 2.0 * scale);
    Vector candidate = m.exp(r.mean, scale * step);
    double f = frechet_objective(m, candidate, points, weights);
    while (f > r.objective.back() && scale > kMinFrechetStepScale) {
      scale *= 0.5;
      candidate = m.exp(r.mean, scale * step);
      f = frechet_objective(m, candidate, points, weights);
    }
    r.mean = std::move(candidate);
    ++r.iterations;
    r.objective.push_back(f);
    if (step_norm < opts.tol) {
      r.converged = true;
      break;
    }
  }
  return r;
}

}  // namespace loopalign::geo
