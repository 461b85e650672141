#include "loopalign/harness.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "loopalign/errors.hpp"
#include "loopalign/manifold.hpp"
#include "loopalign/manifold_batched.hpp"
#include "loopalign/model.hpp"

namespace loopalign::harness {

namespace fs = std::filesystem;
namespace bt = geo::batched;
using geo::Hyperboloid;
using geo::PoincareBall;
using geo::Vector;

Check& Report::at_most(const std::string& name, double measured, double limit, std::string detail) {
  checks.push_back({name, measured, limit, std::isfinite(measured) && measured <= limit, std::move(detail)});
  return checks.back();
}

Check& Report::above(const std::string& name, double measured, double limit, std::string detail) {
  checks.push_back({name, measured, limit, measured > limit, std::move(detail)});
  return checks.back();
}

bool Report::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

std::vector<const Check*> Report::failures() const {
  std::vector<const Check*> out;
  for (const auto& c : checks) {
    if (!c.passed) out.push_back(&c);
  }
  return out;
}

void print_report(std::ostream& os, const Report& r) {
  std::size_t width = 8;
  for (const auto& c : r.checks) width = std::max(width, c.name.size());
  const auto flags = os.flags();
  for (const auto& c : r.checks) {
    os << (c.passed ? "ok    " : "FAIL  ") << std::left << std::setw(static_cast<int>(width)) << c.name
       << std::right << "  " << std::scientific << std::setprecision(3) << std::setw(10) << c.measured
       << " (limit " << c.limit << ")";
    if (!c.detail.empty()) os << "  " << c.detail;
    os << '\n';
  }
  os.flags(flags);
  os << r.suite << ": " << (r.checks.size() - r.failures().size()) << "/" << r.checks.size()
     << " checks passed in " << std::fixed << std::setprecision(2) << r.seconds << " s\n";
  os.flags(flags);
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Vector random_direction(std::mt19937_64& rng, Eigen::Index dim) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Vector v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v[i] = n01(rng);
  return v / v.norm();
}

/// Point with sqrt(c)|x| uniform in [0, max_fraction).
Vector random_ball_point(std::mt19937_64& rng, Eigen::Index dim, double c, double max_fraction) {
  std::uniform_real_distribution<double> rho(0.0, max_fraction);
  return random_direction(rng, dim) * (rho(rng) / std::sqrt(c));
}

Tensor stack_rows(const std::vector<Vector>& rows) {
  const auto D = static_cast<std::size_t>(rows.front().size());
  std::vector<double> v;
  v.reserve(rows.size() * D);
  for (const auto& r : rows) v.insert(v.end(), r.data(), r.data() + r.size());
  return Tensor::constant({rows.size(), D}, std::move(v));
}

}  // namespace

// ---------------------------------------------------------------------------

Report geometry_suite(std::uint64_t seed) {
  const auto t0 = Clock::now();
  Report r{"geomtest", {}, 0.0};
  std::mt19937_64 rng(seed);
  constexpr Eigen::Index dim = 5;
  constexpr int per_curvature = 200;
  const double curvatures[] = {0.1, 0.5, 1.0, 1.5, 2.0};

  double roundtrip0 = 0.0, roundtrip_at = 0.0, inverse_at = 0.0, origin_dist = 0.0, cancel = 0.0;
  double lorentz_roundtrip = 0.0, lorentz_inverse = 0.0, lorentz_origin = 0.0, sheet = 0.0;
  std::uniform_real_distribution<double> tangent_len(0.0, 3.0);
  for (double c : curvatures) {
    const PoincareBall ball(c);
    const Hyperboloid hyp(c);
    for (int i = 0; i < per_curvature; ++i) {
      const Vector v = random_direction(rng, dim) * (tangent_len(rng) / std::sqrt(c));
      const Vector x = random_ball_point(rng, dim, c, 0.9);
      const Vector y = random_ball_point(rng, dim, c, 0.9);
      roundtrip0 = std::max(roundtrip0, (ball.log0(ball.exp0(v)) - v).norm());
      origin_dist = std::max(origin_dist, std::abs(ball.dist(ball.origin(dim), ball.exp0(v)) - v.norm()));
      roundtrip_at = std::max(roundtrip_at, (ball.log(x, ball.exp(x, v)) - v).norm());
      inverse_at = std::max(inverse_at, (ball.exp(x, ball.log(x, y)) - y).norm());
      cancel = std::max(cancel, (ball.mobius_add(-x, ball.mobius_add(x, y)) - y).norm());

      const Vector X = geo::poincare_to_lorentz(x, c), Y = geo::poincare_to_lorentz(y, c);
      const Vector w = hyp.tangent_project(X, random_direction(rng, dim + 1) * tangent_len(rng));
      const double scale = std::max(1.0, X.norm());
      lorentz_roundtrip = std::max(lorentz_roundtrip, (hyp.log(X, hyp.exp(X, w)) - w).norm() / scale);
      lorentz_inverse = std::max(lorentz_inverse, (hyp.exp(X, hyp.log(X, Y)) - Y).norm() / Y.norm());
      const Vector e = hyp.exp0(v);
      lorentz_origin = std::max(lorentz_origin, std::abs(hyp.dist(hyp.origin(dim + 1), e) - v.norm()));
      sheet = std::max(sheet, std::abs(c * geo::lorentz_inner(X, X) + 1.0));
    }
  }
  r.at_most("poincare.log0_exp0_roundtrip", roundtrip0, 1e-6);
  r.at_most("poincare.log_exp_roundtrip", roundtrip_at, 1e-6, "random base points");
  r.at_most("poincare.exp_log_roundtrip", inverse_at, 1e-6, "random base points");
  r.at_most("poincare.dist_origin_exp0_is_norm", origin_dist, 1e-6);
  r.at_most("poincare.mobius_left_cancellation", cancel, 1e-6);
  r.at_most("lorentz.log_exp_roundtrip", lorentz_roundtrip, 1e-6, "relative to |x|");
  r.at_most("lorentz.exp_log_roundtrip", lorentz_inverse, 1e-6, "relative to |y|");
  r.at_most("lorentz.dist_origin_exp0_is_norm", lorentz_origin, 1e-6);
  r.at_most("lorentz.points_on_sheet", sheet, 1e-9, "|c<x,x> + 1|");

  {
    const PoincareBall unit(1.0);
    double gap = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const Vector u = random_ball_point(rng, dim, 1.0, 0.9), v = random_ball_point(rng, dim, 1.0, 0.9);
      gap = std::max(gap, std::abs(unit.dist(u, v) - unit.dist_arcosh(u, v)));
    }
    r.at_most("poincare.dist_forms_agree_c1", gap, 1e-9, "atanh form vs arcosh form");
    Vector v = Vector::Zero(dim);
    v[0] = 0.5;
    const Vector o = Vector::Zero(dim);
    const double ln3 = std::log(3.0);
    r.at_most("poincare.spot_ln3_atanh", std::abs(unit.dist(o, v) - ln3), 1e-12, "u = 0, |v| = 0.5");
    r.at_most("poincare.spot_ln3_arcosh", std::abs(unit.dist_arcosh(o, v) - ln3), 1e-12, "u = 0, |v| = 0.5");
  }

  {
    double iso = 0.0, back = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double c = curvatures[i % std::size(curvatures)];
      const PoincareBall ball(c);
      const Hyperboloid hyp(c);
      const Vector u = random_ball_point(rng, dim, c, 0.95), v = random_ball_point(rng, dim, c, 0.95);
      const Vector U = geo::poincare_to_lorentz(u, c), V = geo::poincare_to_lorentz(v, c);
      iso = std::max(iso, std::abs(ball.dist(u, v) - hyp.dist(U, V)));
      back = std::max(back, (geo::lorentz_to_poincare(U, c) - u).norm());
    }
    r.at_most("isometry.distance_preserved", iso, 1e-6, "1000 random pairs");
    r.at_most("isometry.maps_are_inverse", back, 1e-9);
  }

  {
    double excess = 0.0;
    for (double c : curvatures) {
      const PoincareBall ball(c);
      for (double len : {10.0, 1e3, 1e8}) {
        const Vector x = ball.exp0(random_direction(rng, dim) * len);
        excess = std::max(excess, std::sqrt(c) * x.norm() - (1.0 - geo::kBallMargin));
      }
    }
    r.at_most("poincare.clip_keeps_points_inside", std::max(excess, 0.0), 1e-15, "sqrt(c)|x| - (1 - 1e-5)");
  }

  {
    PrecisionGuard f64(Precision::f64);
    const double c = 1.3;
    const PoincareBall ball(c);
    const Hyperboloid hyp(c);
    std::vector<Vector> us, vs, ts, Us, Vs;
    for (int i = 0; i < 64; ++i) {
      us.push_back(random_ball_point(rng, dim, c, 0.9));
      vs.push_back(random_ball_point(rng, dim, c, 0.9));
      ts.push_back(random_direction(rng, dim) * tangent_len(rng));
      Us.push_back(geo::poincare_to_lorentz(us.back(), c));
      Vs.push_back(geo::poincare_to_lorentz(vs.back(), c));
    }
    const Tensor ct = Tensor::constant({1}, {c});
    const Tensor dpt = bt::dist_poincare(stack_rows(us), stack_rows(vs), ct);
    const Tensor dlt = bt::dist_lorentz(stack_rows(Us), stack_rows(Vs), ct);
    const Tensor e0t = bt::exp0(stack_rows(ts), ct);
    const auto dp = dpt.values(), dl = dlt.values(), e0 = e0t.values();
    double dist_gap = 0.0, exp_gap = 0.0;
    for (std::size_t i = 0; i < us.size(); ++i) {
      const double ref = ball.dist(us[i], vs[i]);
      dist_gap = std::max({dist_gap, std::abs(dp[i] - ref), std::abs(dl[i] - hyp.dist(Us[i], Vs[i]))});
      const Vector e = ball.exp0(ts[i]);
      for (Eigen::Index j = 0; j < dim; ++j) {
        exp_gap = std::max(exp_gap, std::abs(e0[i * dim + static_cast<std::size_t>(j)] - e[j]));
      }
    }
    r.at_most("batched.distances_match_reference", dist_gap, 1e-9);
    r.at_most("batched.exp0_matches_reference", exp_gap, 1e-12);
  }
  r.seconds = seconds_since(t0);
  return r;
}

// ---------------------------------------------------------------------------

Report frechet_suite(std::uint64_t seed) {
  const auto t0 = Clock::now();
  Report r{"frechet", {}, 0.0};
  std::mt19937_64 rng(seed);
  const double curvatures[] = {0.5, 1.0, 2.0};
  const geo::FrechetOptions tight{1e-12, 1000};

  {
    constexpr int grid = 100000;
    std::uniform_real_distribution<double> pos(-0.9, 0.9), weight(0.1, 0.9);
    double err_p = 0.0, err_l = 0.0;
    for (int inst = 0; inst < 24; ++inst) {
      const double c = curvatures[inst % 3];
      const PoincareBall ball(c);
      const Hyperboloid hyp(c);
      const double sc = std::sqrt(c);
      std::vector<Vector> pts = {Vector::Constant(1, pos(rng) / sc), Vector::Constant(1, pos(rng) / sc)};
      const double w = weight(rng);
      const std::vector<double> ws = {w, 1.0 - w};

      const double lo = std::min(pts[0][0], pts[1][0]), hi = std::max(pts[0][0], pts[1][0]);
      double best = lo, best_f = INFINITY;
      Vector z(1);
      for (int k = 0; k < grid; ++k) {
        z[0] = lo + (hi - lo) * k / (grid - 1);
        const double f = geo::frechet_objective(ball, z, std::span<const Vector>(pts), ws);
        if (f < best_f) {
          best_f = f;
          best = z[0];
        }
      }
      const auto mp = geo::frechet_mean(ball, std::span<const Vector>(pts), ws, tight);
      err_p = std::max(err_p, std::abs(mp.mean[0] - best));

      std::vector<Vector> lp = {geo::poincare_to_lorentz(pts[0], c), geo::poincare_to_lorentz(pts[1], c)};
      const auto ml = geo::frechet_mean(hyp, std::span<const Vector>(lp), ws, tight);
      err_l = std::max(err_l, std::abs(geo::lorentz_to_poincare(ml.mean, c)[0] - best));
    }
    r.at_most("grid_oracle.poincare_1d", err_p, 1e-3, "24 two-point instances, 1e5 grid");
    r.at_most("grid_oracle.lorentz_1d", err_l, 1e-3, "mapped back to the ball");
  }

  {
    std::uniform_real_distribution<double> weight(0.05, 1.0);
    double rise = 0.0;
    int unconverged = 0, clouds = 0;
    for (double c : curvatures) {
      const PoincareBall ball(c);
      const Hyperboloid hyp(c);
      for (int dim = 2; dim <= 4; ++dim) {
        for (double spread : {0.5, 0.8, 0.95}) {
          std::vector<Vector> pts, lpts;
          std::vector<double> ws;
          for (int t = 0; t < 8; ++t) {
            pts.push_back(random_ball_point(rng, dim, c, spread));
            lpts.push_back(geo::poincare_to_lorentz(pts.back(), c));
            ws.push_back(weight(rng));
          }
          double total = 0.0;
          for (double v : ws) total += v;
          for (double& v : ws) v /= total;
          for (const auto& res : {geo::frechet_mean(ball, std::span<const Vector>(pts), ws),
                                  geo::frechet_mean(hyp, std::span<const Vector>(lpts), ws)}) {
            for (std::size_t k = 1; k < res.objective.size(); ++k) {
              rise = std::max(rise, (res.objective[k] - res.objective[k - 1]) / std::max(1.0, res.objective[0]));
            }
            if (spread <= 0.8) {
              ++clouds;
              unconverged += res.converged ? 0 : 1;
            }
          }
        }
      }
    }
    r.at_most("objective_non_increasing", std::max(rise, 0.0), 1e-12, "largest relative rise per iteration");
    r.at_most("converges_within_default_iterations", unconverged, 0,
              std::to_string(clouds) + " clouds with radius <= 0.8");
  }

  {
    const double c = 1e-6;
    const PoincareBall ball(c);
    const Hyperboloid hyp(c);
    std::uniform_real_distribution<double> len(0.0, 2.0), weight(0.05, 1.0);
    double err_p = 0.0, err_l = 0.0;
    for (int inst = 0; inst < 10; ++inst) {
      std::vector<Vector> tangents, pts, lpts;
      std::vector<double> ws;
      for (int t = 0; t < 6; ++t) {
        tangents.push_back(random_direction(rng, 3) * len(rng));
        pts.push_back(ball.exp0(tangents.back()));
        lpts.push_back(hyp.exp0(tangents.back()));
        ws.push_back(weight(rng));
      }
      double total = 0.0;
      for (double v : ws) total += v;
      Vector flat = Vector::Zero(3);
      for (std::size_t t = 0; t < ws.size(); ++t) {
        ws[t] /= total;
        flat += ws[t] * tangents[t];
      }
      const auto mp = geo::frechet_mean(ball, std::span<const Vector>(pts), ws);
      err_p = std::max(err_p, (ball.log0(mp.mean) - flat).norm());
      const auto ml = geo::frechet_mean(hyp, std::span<const Vector>(lpts), ws);
      err_l = std::max(err_l, (hyp.log0(ml.mean).tail(3) - flat).norm());
    }
    r.at_most("flat_limit.poincare", err_p, 1e-3, "c = 1e-6 vs Euclidean weighted mean");
    r.at_most("flat_limit.lorentz", err_l, 1e-3, "c = 1e-6 vs Euclidean weighted mean");
  }

  {
    PrecisionGuard f64(Precision::f64);
    const double c = 1.3;
    const PoincareBall ball(c);
    const Hyperboloid hyp(c);
    constexpr std::size_t B = 3, T = 5, D = 3;
    std::vector<double> pv, lv, wv;
    std::vector<std::vector<Vector>> clouds(B), lclouds(B);
    std::vector<std::vector<double>> weights(B);
    std::uniform_real_distribution<double> weight(0.05, 1.0);
    for (std::size_t b = 0; b < B; ++b) {
      double total = 0.0;
      for (std::size_t t = 0; t < T; ++t) {
        clouds[b].push_back(random_ball_point(rng, D, c, 0.8));
        lclouds[b].push_back(geo::poincare_to_lorentz(clouds[b].back(), c));
        pv.insert(pv.end(), clouds[b].back().data(), clouds[b].back().data() + D);
        lv.insert(lv.end(), lclouds[b].back().data(), lclouds[b].back().data() + D + 1);
        weights[b].push_back(weight(rng));
        total += weights[b].back();
      }
      for (double& w : weights[b]) {
        w /= total;
        wv.push_back(w);
      }
    }
    const Tensor ct = Tensor::constant({1}, {c});
    const Tensor wt = Tensor::constant({B, T}, wv);
    const auto bp = bt::frechet_mean(bt::Geometry::poincare, Tensor::constant({B, T, D}, pv), wt, ct, tight);
    const auto bl = bt::frechet_mean(bt::Geometry::lorentz, Tensor::constant({B, T, D + 1}, lv), wt, ct, tight);
    double gap = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const auto rp = geo::frechet_mean(ball, std::span<const Vector>(clouds[b]), weights[b], tight);
      const auto rl = geo::frechet_mean(hyp, std::span<const Vector>(lclouds[b]), weights[b], tight);
      for (std::size_t j = 0; j < D; ++j) gap = std::max(gap, std::abs(bp.mean.values()[b * D + j] - rp.mean[j]));
      for (std::size_t j = 0; j <= D; ++j) {
        gap = std::max(gap, std::abs(bl.mean.values()[b * (D + 1) + j] - rl.mean[j]));
      }
    }
    r.at_most("batched_matches_reference", gap, 1e-8);
  }
  r.seconds = seconds_since(t0);
  return r;
}

// ---------------------------------------------------------------------------

CheckBatch gradient_check_batch(std::uint64_t seed) {
  SyntheticTaskSpec spec;
  spec.classes = 2;
  spec.seed = seed;
  const auto templates = synthetic_templates(spec);
  const std::vector<std::string> glosses = {"book drink", "go"};
  std::vector<SkeletonSequence> samples = {
      render_template(templates[0], 5, 0.3, seed + 1, "g0", glosses[0]),
      render_template(templates[1], 4, 0.3, seed + 2, "g1", glosses[1])};
  CheckBatch out{Vocabulary::from_glosses(glosses), {}};
  out.batch = make_batch({&samples[0], &samples[1]}, out.vocabulary);
  return out;
}

namespace {

RunConfig check_config() {
  RunConfig cfg;
  cfg.model.d_gcn = 3;
  cfg.model.d_model = 4;
  cfg.model.heads = 2;
  cfg.model.d_ff = 6;
  cfg.model.d_hyp = 3;
  cfg.model.max_decode_len = 3;
  cfg.loop.loops = 2;
  cfg.loss.alpha_mode = AlphaMode::learnable;
  cfg.geometry.frechet_tol = 1e-12;
  cfg.geometry.frechet_max_iters = 200;
  cfg.precision = "f64";
  return cfg;
}

// Gradients that vanish analytically (key biases under softmax) are compared
// in absolute terms against the finite-difference resolution.
constexpr double kGradientFloor = 1e-6;

double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), kGradientFloor});
}

}  // namespace

Report gradient_suite(std::uint64_t seed, std::ostream* progress) {
  const auto t0 = Clock::now();
  Report r{"gradcheck", {}, 0.0};
  PrecisionGuard f64(Precision::f64);
  const CheckBatch cb = gradient_check_batch(seed);
  constexpr double h = 1e-4;

  for (Variant variant : {Variant::encoder_decoder, Variant::decoder, Variant::encoder}) {
    for (ManifoldKind manifold : {ManifoldKind::euclidean, ManifoldKind::poincare, ManifoldKind::lorentz,
                                  ManifoldKind::adaptive_poincare, ManifoldKind::adaptive_lorentz}) {
      RunConfig cfg = check_config();
      cfg.loop.variant = variant;
      cfg.geometry.manifold = manifold;
      cfg.optim.seed = seed;
      Pipeline pipe(cfg, cb.vocabulary);
      pipe.model().pin_intermediate_decoder();
      const auto& params = pipe.parameters();
      params.zero_grad();
      pipe.compute(cb.batch).joint.backward();

      const std::string prefix = to_string(variant) + "/" + to_string(manifold);
      double worst = 0.0;
      std::string worst_name;
      for (const auto& p : params.all()) {
        auto values = p.value.mutable_values();
        std::vector<double> numeric(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) {
          const double saved = values[i];
          values[i] = saved + h;
          const double up = pipe.compute(cb.batch).joint.item();
          values[i] = saved - h;
          const double down = pipe.compute(cb.batch).joint.item();
          values[i] = saved;
          numeric[i] = (up - down) / (2.0 * h);
        }
        const double err = relative_error(p.value.grad(), numeric);
        if (!(err <= worst)) {
          worst = err;
          worst_name = p.name;
        }
        if (!(err < 1e-4)) r.at_most(prefix + "/" + p.name, err, 1e-4, "relative error");
      }
      r.at_most(prefix, worst, 1e-4,
                std::to_string(params.all().size()) + " parameters, worst " + worst_name);
      if (progress) *progress << "  " << prefix << " worst " << worst << " (" << worst_name << ")\n";
    }
  }
  r.seconds = seconds_since(t0);
  return r;
}

// ---------------------------------------------------------------------------

namespace {

struct Setting {
  Variant variant;
  Injection injection;
};

constexpr Setting kSettings[] = {{Variant::encoder_decoder, Injection::concat},
                                 {Variant::encoder_decoder, Injection::add},
                                 {Variant::encoder_decoder, Injection::attention},
                                 {Variant::encoder, Injection::concat},
                                 {Variant::decoder, Injection::concat}};

std::string label(const Setting& s) { return to_string(s.variant) + "/" + to_string(s.injection); }

RunConfig audit_config(const Setting& s, int loops) {
  RunConfig cfg = check_config();
  cfg.model.d_gcn = 4;
  cfg.model.d_model = 8;
  cfg.model.d_ff = 12;
  cfg.loop.variant = s.variant;
  cfg.loop.injection = s.injection;
  cfg.loop.loops = loops;
  return cfg;
}

struct Built {
  ParameterSet ps;
  std::unique_ptr<SignModel> model;
};

std::unique_ptr<Built> build(const RunConfig& cfg, std::size_t vocab, std::uint64_t seed) {
  auto b = std::make_unique<Built>();
  Rng rng(seed);
  b->model = std::make_unique<SignModel>(cfg, vocab, b->ps, rng);
  return b;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

double grad_abs(const ParameterSet& ps, const std::string& prefix) {
  double a = 0.0;
  for (const auto& p : ps.all()) {
    if (p.name.rfind(prefix, 0) != 0) continue;
    for (double x : p.value.grad()) a += std::abs(x);
  }
  return a;
}

}  // namespace

Report structural_audit(std::uint64_t seed) {
  const auto t0 = Clock::now();
  Report r{"structure", {}, 0.0};
  PrecisionGuard f64(Precision::f64);
  const CheckBatch cb = gradient_check_batch(seed);
  const SignInput& sign = cb.batch.sign;
  const std::size_t V = cb.vocabulary.size();

  for (int U : {1, 2, 3}) {
    double worst = 0.0;
    std::string detail;
    for (const auto& s : kSettings) {
      RunConfig cfg = audit_config(s, 0);
      cfg.loop.encoder_layers = cfg.loop.decoder_layers = U;
      const auto base = static_cast<double>(build(cfg, V, seed)->ps.scalar_count());
      for (int L : {1, 2, 3}) {
        cfg.loop.loops = L;
        const auto looped = static_cast<double>(build(cfg, V, seed)->ps.scalar_count());
        worst = std::max(worst, std::abs(looped - base));
      }
      if (detail.empty()) detail = std::to_string(static_cast<long>(base)) + " scalars at " + label(s);
    }
    r.at_most("parameter_parity.U" + std::to_string(U), worst, 0.0, "loops 1..3 vs base; " + detail);
  }

  {
    Setting s{Variant::encoder, Injection::concat};
    const auto b = build(audit_config(s, 3), V, seed);
    const LoopState st = b->model->forward(sign, cb.batch.input);
    Tensor loss = square(st.snapshots[0]).sum() + square(st.snapshots[1]).sum();
    b->ps.zero_grad();
    loss.backward();
    r.at_most("encoder_variant.intermediate_decoder_grad_zero", grad_abs(b->ps, "decoder."), 0.0,
              "sum |grad| of decoder weights from H_1, H_2");
    r.above("encoder_variant.intermediate_encoder_grad_nonzero", grad_abs(b->ps, "encoder."), 0.0);
    const LoopState st2 = b->model->forward(sign, cb.batch.input);
    b->ps.zero_grad();
    square(st2.final).sum().backward();
    r.above("encoder_variant.final_decoder_grad_nonzero", grad_abs(b->ps, "decoder."), 0.0);
  }

  {
    double violations = 0.0;
    for (const auto& s : kSettings) {
      const LoopState h0 = build(audit_config(s, 0), V, seed)->model->forward(sign, cb.batch.input);
      for (int L : {1, 2, 3}) {
        const LoopState st = build(audit_config(s, L), V, seed)->model->forward(sign, cb.batch.input);
        if (st.snapshots.size() != static_cast<std::size_t>(L)) violations += 1.0;
        for (const auto& snap : st.snapshots) {
          if (max_abs_diff(snap, h0.final) == 0.0) violations += 1.0;
        }
        if (!st.snapshots.empty() && st.snapshots.back().id() != st.final.id()) violations += 1.0;
      }
    }
    r.at_most("snapshots.count_L_and_exclude_base", violations, 0.0, "5 settings x L in {1, 2, 3}");
  }

  {
    const TextInput a{{{kBosId, 3, 4, 5}, {kBosId, 5, 3, kPadId}}};
    const std::size_t Tt = 4;
    for (const auto& s : kSettings) {
      const auto b = build(audit_config(s, 2), 6, seed);
      const LoopState base = b->model->forward(sign, a);
      double leak = 0.0;
      for (std::size_t t = 0; t + 1 < Tt; ++t) {
        TextInput pert = a;
        for (auto& row : pert.tokens) {
          for (std::size_t q = t + 1; q < Tt; ++q) row[q] = row[q] == 5 ? 3 : 5;
        }
        const LoopState other = b->model->forward(sign, pert);
        std::vector<std::pair<const Tensor*, const Tensor*>> states = {{&base.final, &other.final}};
        for (std::size_t i = 0; i < base.snapshots.size(); ++i) {
          states.emplace_back(&base.snapshots[i], &other.snapshots[i]);
        }
        for (const auto& [x, y] : states) {
          const std::size_t B = x->size(0), d = x->size(2);
          for (std::size_t bi = 0; bi < B; ++bi) {
            for (std::size_t p = 0; p <= t; ++p) {
              for (std::size_t j = 0; j < d; ++j) {
                const std::size_t i = (bi * Tt + p) * d + j;
                leak = std::max(leak, std::abs(x->values()[i] - y->values()[i]));
              }
            }
          }
        }
      }
      r.at_most("causality." + label(s), leak, 1e-12, "max change at positions <= t");
    }
  }
  r.seconds = seconds_since(t0);
  return r;
}

// ---------------------------------------------------------------------------

std::vector<std::string> ablation_axes() {
  return {"loop", "design", "manifold", "curvature", "scale", "injection", "extra-feature"};
}

std::string slug(const std::string& label) {
  std::string out;
  for (unsigned char ch : label) {
    if (std::isalnum(ch)) {
      out.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!out.empty() && out.back() != '-') {
      out.push_back('-');
    }
  }
  while (!out.empty() && out.back() == '-') out.pop_back();
  return out;
}

namespace {

std::string shape_label(const char* kind, int unique, int passes) {
  return std::string(kind) + " (" + std::to_string(unique) + "x" + std::to_string(passes) + ")";
}

std::string number_label(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

}  // namespace

std::vector<AblationEntry> ablation_plan(const std::string& axis, const RunConfig& base) {
  std::vector<AblationEntry> plan;
  auto add = [&](std::string label, std::string group, auto&& edit) {
    RunConfig cfg = base;
    edit(cfg);
    plan.push_back({std::move(label), std::move(group), std::move(cfg)});
  };
  if (axis == "loop") {
    // Constant effective depth 6, mirroring (12x1), (2x6), (4x3), (6x2) at toy scale.
    constexpr int depth = 6;
    add(shape_label("Base", depth, 1), "depth6", [&](RunConfig& c) {
      c.loop.encoder_layers = c.loop.decoder_layers = depth;
      c.loop.loops = 0;
    });
    for (int U : {1, 2, 3}) {
      const std::string group = "U" + std::to_string(U);
      add(shape_label("Base", U, 1), group, [&](RunConfig& c) {
        c.loop.encoder_layers = c.loop.decoder_layers = U;
        c.loop.loops = 0;
      });
      add(shape_label("Loop", U, depth / U), group, [&](RunConfig& c) {
        c.loop.encoder_layers = c.loop.decoder_layers = U;
        c.loop.loops = depth / U - 1;
      });
    }
  } else if (axis == "design") {
    for (Variant v : {Variant::encoder_decoder, Variant::decoder, Variant::encoder}) {
      add(display_name(v), "design", [&](RunConfig& c) { c.loop.variant = v; });
    }
  } else if (axis == "manifold") {
    for (ManifoldKind m : {ManifoldKind::euclidean, ManifoldKind::poincare, ManifoldKind::lorentz,
                           ManifoldKind::adaptive_poincare, ManifoldKind::adaptive_lorentz}) {
      add(display_name(m), "manifold", [&](RunConfig& c) { c.geometry.manifold = m; });
    }
  } else if (axis == "curvature") {
    for (double k : {0.5, 1.0, 1.5, 2.0}) {
      add("c = " + number_label(k), "curvature", [&](RunConfig& c) {
        c.geometry.manifold = ManifoldKind::poincare;
        c.geometry.curvature = k;
      });
    }
    add("Learnable", "curvature", [&](RunConfig& c) {
      c.geometry.manifold = ManifoldKind::adaptive_poincare;
      c.geometry.curvature = 1.0;
    });
  } else if (axis == "scale") {
    for (double s : {0.5, 1.0, 2.0, 4.0}) {
      add("scale = " + number_label(s), "scale", [&](RunConfig& c) {
        c.geometry.manifold = ManifoldKind::poincare;
        c.geometry.scale = s;
      });
    }
    add("Learnable", "scale", [&](RunConfig& c) {
      c.geometry.manifold = ManifoldKind::adaptive_poincare;
      c.geometry.scale = 1.0;
    });
  } else if (axis == "injection") {
    for (Injection i : {Injection::concat, Injection::add, Injection::attention}) {
      add(to_string(i), "injection", [&](RunConfig& c) { c.loop.injection = i; });
    }
  } else if (axis == "extra-feature") {
    for (ExtraFeature e : {ExtraFeature::none, ExtraFeature::noise, ExtraFeature::temporal}) {
      add(to_string(e), "extra-feature", [&](RunConfig& c) { c.loop.extra_feature = e; });
    }
  } else {
    std::string known;
    for (const auto& a : ablation_axes()) known += (known.empty() ? "" : ", ") + a;
    throw ConfigError("unknown ablation axis '" + axis + "' (expected one of " + known + ")");
  }
  for (auto& e : plan) e.config.validate();
  return plan;
}

std::vector<AblationResult> run_ablation(const std::string& axis, const std::vector<AblationEntry>& plan,
                                         const Dataset& data, std::span<const std::uint64_t> seeds,
                                         std::ostream* progress) {
  std::vector<AblationResult> out;
  for (const auto& entry : plan) {
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = entry.config;
      cfg.optim.seed = seed;
      cfg.output_dir = (fs::path(entry.config.output_dir) / slug(entry.label) / ("seed" + std::to_string(seed))).string();
      const auto t0 = Clock::now();
      Pipeline pipeline(cfg, data.vocabulary());
      TrainOptions opts;
      const TrainResult tr = train(pipeline, data, opts);
      AblationResult row;
      row.axis = axis;
      row.entry = entry;
      row.seed = seed;
      row.parameters = pipeline.parameters().scalar_count();
      row.accuracy = tr.final_eval;
      row.final_loss = tr.losses.empty() ? 0.0 : tr.losses.back();
      row.seconds = seconds_since(t0);
      if (progress) {
        *progress << axis << " | " << entry.label << " | seed " << seed << " | P-I "
                  << row.accuracy.per_instance << " P-C " << row.accuracy.per_class << " | "
                  << row.parameters << " params | " << std::fixed << std::setprecision(1) << row.seconds
                  << " s" << std::defaultfloat << std::setprecision(6) << '\n';
      }
      out.push_back(std::move(row));
    }
  }
  return out;
}

void write_results_csv(const std::string& path, const std::vector<AblationResult>& rows) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "axis,label,group,unique_layers,passes,effective_depth,parameters,seed,pi,pc,n,final_loss,seconds\n";
  out << std::setprecision(9);
  for (const auto& r : rows) {
    const auto& loop = r.entry.config.loop;
    out << r.axis << ",\"" << r.entry.label << "\"," << r.entry.group << ',' << loop.encoder_layers << ','
        << loop.passes() << ',' << loop.encoder_layers * loop.passes() << ',' << r.parameters << ',' << r.seed
        << ',' << r.accuracy.per_instance << ',' << r.accuracy.per_class << ',' << r.accuracy.total << ','
        << r.final_loss << ',' << r.seconds << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace loopalign::harness
