#include "loopalign/manifold_batched.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace loopalign::geo::batched {

namespace {

constexpr double kHuge = std::numeric_limits<double>::max();

Tensor clip_atanh_arg(const Tensor& x) { return clamp(x, -1.0 + kAtanhMargin, 1.0 - kAtanhMargin); }

// (-1, 1, ..., 1) over an ambient axis of length n.
Tensor minkowski_signs(std::size_t n) {
  std::vector<double> s(n, 1.0);
  s[0] = -1.0;
  return Tensor::constant({n}, std::move(s));
}

Tensor spatial_part(const Tensor& x) { return x.slice(-1, 1, x.size(-1)); }
Tensor time_part(const Tensor& x) { return x.slice(-1, 0, 1); }

Tensor cosh_t(const Tensor& a) { return (exp(a) + exp(-a)) * 0.5; }
Tensor sinh_t(const Tensor& a) { return (exp(a) - exp(-a)) * 0.5; }

}  // namespace

Tensor dot(const Tensor& a, const Tensor& b) { return (a * b).sum(-1, true); }

Tensor safe_norm(const Tensor& x) {
  return sqrt(clamp(square(x).sum(-1, true), kNormFloor * kNormFloor, kHuge));
}

Tensor project_ball(const Tensor& x, const Tensor& c) {
  const Tensor limit = (1.0 - kBallMargin) / sqrt(c);
  const Tensor factor = clamp(limit / safe_norm(x), -kHuge, 1.0);
  return x * factor;
}

namespace {
Tensor mobius_add_unclipped(const Tensor& u, const Tensor& v, const Tensor& c) {
  const Tensor uv = dot(u, v);
  const Tensor uu = square(u).sum(-1, true);
  const Tensor vv = square(v).sum(-1, true);
  const Tensor two_c_uv = 2.0 * c * uv;
  const Tensor num = (1.0 + two_c_uv + c * vv) * u + (1.0 - c * uu) * v;
  const Tensor den = 1.0 + two_c_uv + square(c) * uu * vv;
  return num / den;
}
}  // namespace

Tensor mobius_add(const Tensor& u, const Tensor& v, const Tensor& c) {
  return project_ball(mobius_add_unclipped(u, v, c), c);
}

Tensor exp0(const Tensor& v, const Tensor& c) {
  const Tensor sc = sqrt(c);
  const Tensor scn = sc * safe_norm(v);
  return project_ball(tanh(scn * 0.5) * v / scn, c);
}

Tensor log0(const Tensor& y, const Tensor& c) {
  const Tensor sc = sqrt(c);
  const Tensor n = safe_norm(y);
  return (2.0 / sc) * atanh(clip_atanh_arg(sc * n)) * y / n;
}

Tensor exp_at(const Tensor& base, const Tensor& v, const Tensor& c) {
  return project_ball(mobius_add_unclipped(base, exp0(v, c), c), c);
}

Tensor log_at(const Tensor& base, const Tensor& y, const Tensor& c) {
  return log0(mobius_add_unclipped(-base, y, c), c);
}

Tensor dist_poincare(const Tensor& u, const Tensor& v, const Tensor& c) {
  const Tensor sc = sqrt(c);
  const Tensor n = safe_norm(mobius_add_unclipped(-u, v, c));
  const Tensor d = (2.0 / sc) * atanh(clip_atanh_arg(sc * n));
  return d.sum(-1);
}

Tensor lorentz_inner(const Tensor& x, const Tensor& y) {
  return (x * y * minkowski_signs(x.size(-1))).sum(-1, true);
}

Tensor lorentz_project(const Tensor& x, const Tensor& c) {
  const Tensor s = spatial_part(x);
  const Tensor x0 = sqrt(1.0 / c + square(s).sum(-1, true));
  return concat({x0, s}, -1);
}

Tensor lorentz_exp_at(const Tensor& base, const Tensor& v, const Tensor& c) {
  const Tensor vn = sqrt(clamp(lorentz_inner(v, v), kNormFloor * kNormFloor, kHuge));
  const Tensor a = sqrt(c) * vn;
  return lorentz_project(cosh_t(a) * base + sinh_t(a) * v / a, c);
}

Tensor lorentz_log_at(const Tensor& base, const Tensor& y, const Tensor& c) {
  const Tensor xy = lorentz_inner(base, y);
  const Tensor d = acosh(clamp(-c * xy, 1.0, kHuge)) / sqrt(c);
  const Tensor u = y + c * xy * base;
  const Tensor un = sqrt(clamp(lorentz_inner(u, u), kNormFloor * kNormFloor, kHuge));
  return d * u / un;
}

Tensor lorentz_exp0(const Tensor& spatial, const Tensor& c) {
  const Tensor sc = sqrt(c);
  const Tensor a = sc * safe_norm(spatial);
  return concat({cosh_t(a) / sc, sinh_t(a) * spatial / a}, -1);
}

Tensor lorentz_log0(const Tensor& y, const Tensor& c) {
  const Tensor sc = sqrt(c);
  const Tensor s = spatial_part(y);
  const Tensor d = acosh(clamp(sc * time_part(y), 1.0, kHuge)) / sc;
  return d * s / safe_norm(s);
}

Tensor dist_lorentz(const Tensor& x, const Tensor& y, const Tensor& c) {
  const Tensor arg = clamp(-c * lorentz_inner(x, y), 1.0, kHuge);
  return (acosh(arg) / sqrt(c)).sum(-1);
}

Tensor dist_euclidean(const Tensor& x, const Tensor& y) { return safe_norm(x - y).sum(-1); }

Tensor to_manifold(Geometry g, const Tensor& features, const Tensor& c) {
  switch (g) {
    case Geometry::euclidean: return features;
    case Geometry::poincare: return exp0(features, c);
    case Geometry::lorentz: return lorentz_exp0(features, c);
  }
  return features;
}

Tensor to_tangent(Geometry g, const Tensor& points, const Tensor& c) {
  switch (g) {
    case Geometry::euclidean: return points;
    case Geometry::poincare: return log0(points, c);
    case Geometry::lorentz: return lorentz_log0(points, c);
  }
  return points;
}

Tensor distance(Geometry g, const Tensor& x, const Tensor& y, const Tensor& c) {
  switch (g) {
    case Geometry::euclidean: return dist_euclidean(x, y);
    case Geometry::poincare: return dist_poincare(x, y, c);
    case Geometry::lorentz: return dist_lorentz(x, y, c);
  }
  return dist_euclidean(x, y);
}

FrechetTrace frechet_mean(Geometry g, const Tensor& points, const Tensor& weights,
                          const Tensor& c, const FrechetOptions& opts) {
  if (points.dim() != 3 || weights.dim() != 2 || weights.size(0) != points.size(0) ||
      weights.size(1) != points.size(1)) {
    throw ShapeError("frechet_mean expects points (B, T, D) and weights (B, T), got " +
                     to_string(points.shape()) + " and " + to_string(weights.shape()));
  }
  const std::size_t B = points.size(0), T = points.size(1), D = points.size(2);
  const Tensor w = weights.reshape({B, T, 1});
  FrechetTrace trace;

  if (g == Geometry::euclidean) {
    trace.mean = (points * w).sum(1);
    trace.iterations = 1;
    trace.converged = true;
    return trace;
  }

  Tensor mu = points.slice(1, 0, 1);  // (B, 1, D)

  const auto pv = points.values();
  bool identical = true;
  for (std::size_t b = 0; b < B && identical; ++b) {
    for (std::size_t t = 1; t < T && identical; ++t) {
      identical = std::equal(pv.begin() + static_cast<long>((b * T) * D),
                             pv.begin() + static_cast<long>((b * T + 1) * D),
                             pv.begin() + static_cast<long>((b * T + t) * D));
    }
  }
  if (identical) {
    trace.mean = mu.reshape({B, D});
    trace.converged = true;
    return trace;
  }

  auto exp_step = [&](const Tensor& base, const Tensor& v) {
    return g == Geometry::poincare ? exp_at(base, v, c) : lorentz_exp_at(base, v, c);
  };
  auto objective = [&](const Tensor& m) {
    const Tensor d = distance(g, m, points, c);  // (B, T)
    const auto dv = d.values();
    const auto wv = weights.values();
    std::vector<double> f(B, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t t = 0; t < T; ++t) f[b] += wv[b * T + t] * dv[b * T + t] * dv[b * T + t];
    }
    return f;
  };

  std::vector<double> f_prev;
  {
    NoGradGuard no_grad;
    f_prev = objective(mu);
  }
  std::vector<double> scale(B, 1.0);
  // In f32 a small step that stops contracting or needs backtracking means the
  // sample has hit the rounding floor, which sits above typical tolerances.
  const double stall_below = precision() == Precision::f32 ? std::sqrt(opts.tol) : 0.0;
  std::vector<double> prev_norm(B, INFINITY);
  std::vector<bool> done(B, false);

  for (int k = 0; k < opts.max_iters; ++k) {
    const Tensor tangents =
        g == Geometry::poincare ? log_at(mu, points, c) : lorentz_log_at(mu, points, c);
    const Tensor step = (tangents * w).sum(1, true);  // (B, 1, D)
    std::vector<double> step_norm(B, 0.0);
    {
      const auto sv = step.values();
      for (std::size_t b = 0; b < B; ++b) {
        double acc = 0.0;
        for (std::size_t j = 0; j < D; ++j) acc += sv[b * D + j] * sv[b * D + j];
        if (g == Geometry::lorentz) acc -= 2.0 * sv[b * D] * sv[b * D];
        step_norm[b] = std::sqrt(std::max(acc, 0.0));
      }
    }

    // Step-size selection runs on values only; the chosen scales enter the
    // graph as constants.
    for (auto& sc : scale) sc = std::min(1.0, 2.0 * sc);
    // Near the optimum the objective changes by O(step^2), below its rounding
    // error; comparisons within that error must not trigger backtracking.
    const double slack = precision() == Precision::f32 ? 1e-6 : 1e-13;
    {
      NoGradGuard no_grad;
      const Tensor step_values = step.detach();
      const Tensor mu_values = mu.detach();
      for (;;) {
        const Tensor scaled = step_values * Tensor::constant({B, 1, 1}, scale);
        const std::vector<double> f = objective(exp_step(mu_values, scaled));
        bool retry = false;
        for (std::size_t b = 0; b < B; ++b) {
          if (f[b] > f_prev[b] + slack * std::abs(f_prev[b]) && scale[b] > kMinFrechetStepScale) {
            scale[b] *= 0.5;
            retry = true;
          }
        }
        if (!retry) {
          f_prev = f;
          break;
        }
      }
    }
    const bool unit = std::all_of(scale.begin(), scale.end(), [](double v) { return v == 1.0; });
    mu = exp_step(mu, unit ? step : step * Tensor::constant({B, 1, 1}, scale));
    ++trace.iterations;
    trace.last_step = *std::max_element(step_norm.begin(), step_norm.end());
    bool all_done = true;
    for (std::size_t b = 0; b < B; ++b) {
      const bool stalled =
          step_norm[b] < stall_below && (step_norm[b] >= prev_norm[b] || scale[b] < 1.0);
      done[b] = done[b] || step_norm[b] < opts.tol || stalled;
      prev_norm[b] = step_norm[b];
      all_done = all_done && done[b];
    }
    if (all_done) {
      trace.converged = true;
      break;
    }
  }
  trace.mean = mu.reshape({B, D});
  return trace;
}

}  // namespace loopalign::geo::batched
