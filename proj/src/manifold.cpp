#include "loopalign/manifold.hpp"

#include <algorithm>
#include <sstream>
#include <string>

namespace loopalign::geo {

namespace {

double clip_atanh_arg(double x) { return std::clamp(x, -1.0 + kAtanhMargin, 1.0 - kAtanhMargin); }

void require_positive(double c, const char* what) {
  if (!(c > 0.0) || !std::isfinite(c)) {
    throw DomainError(std::string(what) + " must be positive and finite, got " + std::to_string(c));
  }
}

}  // namespace

Curvature::Curvature(double base_curvature, double scale, bool is_adaptive)
    : base(base_curvature), adaptive(is_adaptive) {
  require_positive(base_curvature, "base curvature");
  require_positive(scale, "curvature scale");
  log_scale = std::log(scale);
}

// ---------------------------------------------------------------------------
// Poincare ball

PoincareBall::PoincareBall(double curvature) : c_(curvature) {
  require_positive(curvature, "curvature");
  sqrt_c_ = std::sqrt(curvature);
}

bool PoincareBall::contains(const Vector& x) const { return c_ * x.squaredNorm() < 1.0; }

void PoincareBall::require_inside(const Vector& x, const char* what) const {
  if (!x.allFinite() || !contains(x)) {
    std::ostringstream msg;
    msg << what << " lies outside the Poincare ball (sqrt(c)|x| = " << sqrt_c_ * x.norm()
        << ", c = " << c_ << ")";
    throw DomainError(msg.str());
  }
}

Vector PoincareBall::project(const Vector& x) const {
  const double n = x.norm();
  const double limit = max_norm();
  if (n > limit) return x * (limit / n);
  return x;
}

Vector PoincareBall::add_unclipped(const Vector& u, const Vector& v) const {
  const double uv = u.dot(v);
  const double uu = u.squaredNorm();
  const double vv = v.squaredNorm();
  const double denom = 1.0 + 2.0 * c_ * uv + c_ * c_ * uu * vv;
  return ((1.0 + 2.0 * c_ * uv + c_ * vv) * u + (1.0 - c_ * uu) * v) / denom;
}

Vector PoincareBall::mobius_add(const Vector& u, const Vector& v) const {
  if (u.size() != v.size()) throw ShapeError("mobius_add dimension mismatch");
  require_inside(u, "left operand");
  require_inside(v, "right operand");
  return project(add_unclipped(u, v));
}

Vector PoincareBall::exp0(const Vector& v) const {
  if (!v.allFinite()) throw DomainError("exp0 of a non-finite tangent vector");
  const double n = v.norm();
  if (n == 0.0) return Vector::Zero(v.size());
  return project(std::tanh(sqrt_c_ * n / 2.0) * v / (sqrt_c_ * n));
}

Vector PoincareBall::log0(const Vector& y) const {
  const double n = y.norm();
  if (n == 0.0) return Vector::Zero(y.size());
  return (2.0 / sqrt_c_) * std::atanh(clip_atanh_arg(sqrt_c_ * n)) * y / n;
}

Vector PoincareBall::exp(const Vector& base, const Vector& v) const {
  require_inside(base, "base point");
  return project(add_unclipped(base, exp0(v)));
}

Vector PoincareBall::log(const Vector& base, const Vector& y) const {
  require_inside(base, "base point");
  require_inside(y, "target point");
  return log0(add_unclipped(-base, y));
}

double PoincareBall::dist(const Vector& u, const Vector& v) const {
  if (u.size() != v.size()) throw ShapeError("dist dimension mismatch");
  require_inside(u, "first point");
  require_inside(v, "second point");
  const double n = add_unclipped(-u, v).norm();
  return (2.0 / sqrt_c_) * std::atanh(clip_atanh_arg(sqrt_c_ * n));
}

double PoincareBall::dist_arcosh(const Vector& u, const Vector& v) const {
  const double num = 2.0 * c_ * (u - v).squaredNorm();
  const double den = (1.0 - c_ * u.squaredNorm()) * (1.0 - c_ * v.squaredNorm());
  return std::acosh(std::max(1.0, 1.0 + num / den)) / sqrt_c_;
}

Vector PoincareBall::riemannian_rescale(const Vector& euclidean_grad, const Vector& at) const {
  require_inside(at, "point");
  const double f = 1.0 - c_ * at.squaredNorm();
  return euclidean_grad * (f * f / 4.0);
}

// ---------------------------------------------------------------------------
// Lorentz hyperboloid

double lorentz_inner(const Vector& x, const Vector& y) {
  if (x.size() != y.size()) {
    throw ShapeError("lorentz_inner dimension mismatch: " + std::to_string(x.size()) + " vs " +
                     std::to_string(y.size()));
  }
  if (x.size() < 1) throw ShapeError("lorentz_inner of empty vectors");
  return -x[0] * y[0] + x.tail(x.size() - 1).dot(y.tail(y.size() - 1));
}

Hyperboloid::Hyperboloid(double curvature) : c_(curvature) {
  require_positive(curvature, "curvature");
  sqrt_c_ = std::sqrt(curvature);
}

Vector Hyperboloid::origin(Eigen::Index ambient_dim) const {
  Vector o = Vector::Zero(ambient_dim);
  o[0] = 1.0 / sqrt_c_;
  return o;
}

Vector Hyperboloid::project(const Vector& x) const {
  Vector out = x;
  out[0] = std::sqrt(1.0 / c_ + x.tail(x.size() - 1).squaredNorm());
  return out;
}

bool Hyperboloid::contains(const Vector& x, double tol) const {
  return x.size() >= 2 && x[0] > 0.0 && std::abs(lorentz_inner(x, x) + 1.0 / c_) <= tol;
}

Vector Hyperboloid::tangent_project(const Vector& x, const Vector& w) const {
  return w + c_ * lorentz_inner(x, w) * x;
}

Vector Hyperboloid::exp(const Vector& base, const Vector& v) const {
  const double n = std::sqrt(std::max(lorentz_inner(v, v), 0.0));
  if (n == 0.0) return base;
  const double a = sqrt_c_ * n;
  return project(std::cosh(a) * base + std::sinh(a) * v / a);
}

Vector Hyperboloid::log(const Vector& base, const Vector& y) const {
  const double d = dist(base, y);
  const Vector u = y + c_ * lorentz_inner(base, y) * base;
  const double nu = std::sqrt(std::max(lorentz_inner(u, u), 0.0));
  if (nu == 0.0 || d == 0.0) return Vector::Zero(base.size());
  return d * u / nu;
}

Vector Hyperboloid::exp0(const Vector& spatial) const {
  Vector v = Vector::Zero(spatial.size() + 1);
  v.tail(spatial.size()) = spatial;
  return exp(origin(spatial.size() + 1), v);
}

Vector Hyperboloid::log0(const Vector& y) const { return log(origin(y.size()), y); }

double Hyperboloid::dist(const Vector& x, const Vector& y) const {
  return std::acosh(std::max(1.0, -c_ * lorentz_inner(x, y))) / sqrt_c_;
}

// ---------------------------------------------------------------------------
// Isometry. With q = sqrt(c) p in the unit ball and the unit-hyperboloid point
// ((1 + |q|^2), 2q) / (1 - |q|^2), scaling the latter by 1/sqrt(c) lands on the
// curvature-c sheet; the inverse is p = x_{1:d} / (1 + sqrt(c) x0).

Vector poincare_to_lorentz(const Vector& p, double curvature) {
  require_positive(curvature, "curvature");
  const double r2 = curvature * p.squaredNorm();
  if (!(r2 < 1.0)) throw DomainError("poincare_to_lorentz: point outside the ball");
  Vector x(p.size() + 1);
  x[0] = (1.0 + r2) / (std::sqrt(curvature) * (1.0 - r2));
  x.tail(p.size()) = 2.0 * p / (1.0 - r2);
  return x;
}

Vector lorentz_to_poincare(const Vector& x, double curvature) {
  require_positive(curvature, "curvature");
  if (x.size() < 2) throw ShapeError("lorentz_to_poincare needs an ambient dimension >= 2");
  return x.tail(x.size() - 1) / (1.0 + std::sqrt(curvature) * x[0]);
}

// ---------------------------------------------------------------------------

void validate_frechet_inputs(std::span<const Vector> points, std::span<const double> weights) {
  if (points.empty()) throw ContractError("frechet_mean needs at least one point");
  if (points.size() != weights.size()) {
    throw ContractError("frechet_mean: " + std::to_string(points.size()) + " points but " +
                        std::to_string(weights.size()) + " weights");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ContractError("frechet_mean weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw ContractError("frechet_mean weights must sum to 1, got " + std::to_string(total));
  }
}

}  // namespace loopalign::geo
