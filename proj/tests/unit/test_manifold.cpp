#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "loopalign/errors.hpp"
#include "loopalign/manifold.hpp"

namespace loopalign::geo {
namespace {

Vector random_vector(Eigen::Index d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v[i] = n(rng);
  return v;
}

// A point uniformly spread in radius inside the c-ball.
Vector random_ball_point(const PoincareBall& ball, Eigen::Index d, std::mt19937_64& rng,
                         double max_frac = 0.95) {
  std::uniform_real_distribution<double> u(0.0, max_frac);
  Vector dir = random_vector(d, rng);
  return dir.normalized() * (u(rng) / std::sqrt(ball.curvature()));
}

Vector vec2(double a, double b) {
  Vector v(2);
  v << a, b;
  return v;
}

TEST(Curvature, EffectiveIsScaleTimesBase) {
  const Curvature k(2.0, 0.5, true);
  EXPECT_NEAR(k.effective(), 1.0, 1e-15);
  EXPECT_THROW(Curvature(0.0, 1.0, true), DomainError);
  EXPECT_THROW(Curvature(1.0, -1.0, true), DomainError);
}

TEST(Mobius, IdentityInverseAndCancellation) {
  std::mt19937_64 rng(11);
  for (double c : {0.5, 1.0, 2.0}) {
    const PoincareBall ball(c);
    for (int i = 0; i < 200; ++i) {
      const Vector u = random_ball_point(ball, 5, rng);
      const Vector v = random_ball_point(ball, 5, rng);
      EXPECT_LT((ball.mobius_add(Vector::Zero(5), v) - v).norm(), 1e-15);
      EXPECT_LT(ball.mobius_add(u, -u).norm(), 1e-12);
      if (c == 1.0) {
        EXPECT_LT((ball.mobius_add(-u, ball.mobius_add(u, v)) - v).norm(), 1e-6);
      }
    }
  }
}

TEST(Mobius, OutsideBallIsADomainError) {
  const PoincareBall ball(1.0);
  EXPECT_THROW(ball.mobius_add(vec2(1.0, 0.0), vec2(0.1, 0.0)), DomainError);
  EXPECT_THROW(PoincareBall(4.0).mobius_add(vec2(0.6, 0.0), vec2(0.0, 0.0)), DomainError);
}

TEST(ExpLog, OriginExamples) {
  const PoincareBall ball(1.0);
  EXPECT_EQ(ball.exp0(Vector::Zero(3)), Vector::Zero(3));
  EXPECT_EQ(ball.log0(Vector::Zero(3)), Vector::Zero(3));
  const Vector e = ball.exp0(vec2(1.0, 0.0));
  EXPECT_NEAR(e[0], std::tanh(0.5), 1e-15);
  EXPECT_NEAR(e[0], 0.4621, 1e-4);
  EXPECT_EQ(e[1], 0.0);
  const Vector l = ball.log0(vec2(0.4621, 0.0));
  EXPECT_NEAR(l[0], 1.0, 1e-4);
  EXPECT_EQ(l[1], 0.0);
  EXPECT_THROW(ball.exp0(vec2(NAN, 0.0)), DomainError);
}

TEST(ExpLog, OriginDistanceEqualsTangentNorm) {
  std::mt19937_64 rng(12);
  for (double c : {0.5, 1.0, 1.5, 2.0}) {
    const PoincareBall ball(c);
    for (int i = 0; i < 500; ++i) {
      const Vector v = random_vector(4, rng, 1.5);
      EXPECT_NEAR(ball.dist(Vector::Zero(4), ball.exp0(v)), v.norm(), 1e-6);
      EXPECT_LT((ball.log0(ball.exp0(v)) - v).norm(), 1e-6);
    }
  }
}

TEST(ExpLog, RoundtripAtArbitraryBase) {
  std::mt19937_64 rng(13);
  for (double c : {0.5, 1.0, 1.5, 2.0}) {
    const PoincareBall ball(c);
    for (int i = 0; i < 500; ++i) {
      const Vector x = random_ball_point(ball, 4, rng, 0.9);
      const Vector v = random_vector(4, rng, 0.7);
      EXPECT_LT((ball.log(x, ball.exp(x, v)) - v).norm(), 1e-6) << "c=" << c;
      EXPECT_LT((ball.exp(x, Vector::Zero(4)) - x).norm(), 1e-15);
      EXPECT_NEAR(ball.dist(x, ball.exp(x, v)), v.norm(), 1e-6);
    }
    const Vector v = random_vector(4, rng);
    EXPECT_LT((ball.exp(Vector::Zero(4), v) - ball.exp0(v)).norm(), 1e-15);
  }
}

TEST(Distance, PoincareExamplesAndCrossFormula) {
  const PoincareBall ball(1.0);
  const Vector v = vec2(0.3, 0.4);
  EXPECT_EQ(ball.dist(v, v), 0.0);
  EXPECT_NEAR(ball.dist(Vector::Zero(2), v), 2.0 * std::atanh(0.5), 1e-12);
  EXPECT_NEAR(ball.dist(Vector::Zero(2), v), std::log(3.0), 1e-12);
  EXPECT_NEAR(ball.dist_arcosh(Vector::Zero(2), v), std::log(3.0), 1e-12);
  EXPECT_NEAR(std::log(3.0), 1.0986, 1e-4);

  std::mt19937_64 rng(14);
  for (int i = 0; i < 2000; ++i) {
    const Vector a = random_ball_point(ball, 3, rng, 0.9);
    const Vector b = random_ball_point(ball, 3, rng, 0.9);
    EXPECT_NEAR(ball.dist(a, b), ball.dist_arcosh(a, b), 1e-9);
    EXPECT_NEAR(ball.dist(a, b), ball.dist(b, a), 1e-9);
  }
}

TEST(Distance, TriangleInequality) {
  std::mt19937_64 rng(15);
  for (double c : {0.5, 1.0, 2.0}) {
    const PoincareBall ball(c);
    for (int i = 0; i < 10000 / 3; ++i) {
      const Vector a = random_ball_point(ball, 3, rng);
      const Vector b = random_ball_point(ball, 3, rng);
      const Vector z = random_ball_point(ball, 3, rng);
      EXPECT_LE(ball.dist(a, z), ball.dist(a, b) + ball.dist(b, z) + 1e-9);
    }
  }
}

TEST(Distance, BallOutputsStayClipped) {
  std::mt19937_64 rng(16);
  for (double c : {0.5, 1.0, 2.0}) {
    const PoincareBall ball(c);
    for (int i = 0; i < 200; ++i) {
      const Vector v = random_vector(3, rng, 40.0);
      EXPECT_LE(std::sqrt(c) * ball.exp0(v).norm(), 1.0 - kBallMargin + 1e-15);
      const Vector x = random_ball_point(ball, 3, rng, 0.999);
      EXPECT_LE(std::sqrt(c) * ball.exp(x, v).norm(), 1.0 - kBallMargin + 1e-15);
    }
  }
}

TEST(Lorentz, InnerProductExamples) {
  const Hyperboloid h(1.0);
  const Vector o = h.origin(3);
  EXPECT_DOUBLE_EQ(lorentz_inner(o, o), -1.0);
  const Vector x = vec2(std::cosh(0.3), std::sinh(0.3));
  const Vector y = vec2(std::cosh(1.0), std::sinh(1.0));
  EXPECT_NEAR(lorentz_inner(x, y), -std::cosh(0.7), 1e-14);
  EXPECT_NEAR(lorentz_inner(x, y), -1.2552, 1e-4);
  EXPECT_EQ(lorentz_inner(x, y), lorentz_inner(y, x));
  EXPECT_THROW(lorentz_inner(o, x), ShapeError);
}

TEST(Lorentz, DistanceExamples) {
  const Hyperboloid h(1.0);
  const Vector x = vec2(std::cosh(0.3), std::sinh(0.3));
  const Vector y = vec2(std::cosh(1.0), std::sinh(1.0));
  EXPECT_EQ(h.dist(x, x), 0.0);
  EXPECT_NEAR(h.dist(x, y), 0.7, 1e-7);
}

TEST(Lorentz, ExpLogRoundtrip) {
  std::mt19937_64 rng(17);
  for (double c : {0.5, 1.0, 1.5, 2.0}) {
    const Hyperboloid h(c);
    for (int i = 0; i < 300; ++i) {
      const Vector base = h.exp0(random_vector(3, rng, 0.8));
      ASSERT_TRUE(h.contains(base));
      Vector v = h.tangent_project(base, random_vector(4, rng));
      v *= 2.0 * std::uniform_real_distribution<double>(0.0, 1.0)(rng) /
           std::sqrt(lorentz_inner(v, v));
      EXPECT_NEAR(lorentz_inner(base, v), 0.0, 1e-10);
      const Vector y = h.exp(base, v);
      EXPECT_TRUE(h.contains(y));
      EXPECT_LT((h.log(base, y) - v).norm(), 1e-6) << "c=" << c;
      EXPECT_LT((h.exp(base, Vector::Zero(4)) - base).norm(), 1e-15);
    }
    const Vector s = random_vector(3, rng);
    EXPECT_LT((h.log0(h.exp0(s)).tail(3) - s).norm(), 1e-9);
    EXPECT_NEAR(h.dist(h.origin(4), h.exp0(s)), s.norm(), 1e-9);
  }
}

TEST(Isometry, FixedPointAndRoundtrip) {
  std::mt19937_64 rng(18);
  for (double c : {0.5, 1.0, 2.0}) {
    const PoincareBall ball(c);
    const Hyperboloid h(c);
    const Vector o = poincare_to_lorentz(Vector::Zero(3), c);
    EXPECT_LT((o - h.origin(4)).norm(), 1e-15);
    EXPECT_LT(lorentz_to_poincare(h.origin(4), c).norm(), 1e-15);
    for (int i = 0; i < 500; ++i) {
      const Vector p = random_ball_point(ball, 3, rng);
      const Vector x = poincare_to_lorentz(p, c);
      EXPECT_TRUE(h.contains(x, 1e-5));
      EXPECT_LT((lorentz_to_poincare(x, c) - p).norm(), 1e-7);
    }
  }
}

TEST(Isometry, DistancesArePreserved) {
  std::mt19937_64 rng(19);
  for (double c : {0.5, 1.0, 2.0}) {
    const PoincareBall ball(c);
    const Hyperboloid h(c);
    for (int i = 0; i < 1000; ++i) {
      const Vector a = random_ball_point(ball, 3, rng, 0.9);
      const Vector b = random_ball_point(ball, 3, rng, 0.9);
      EXPECT_NEAR(ball.dist(a, b), h.dist(poincare_to_lorentz(a, c), poincare_to_lorentz(b, c)),
                  1e-6);
    }
  }
}

TEST(Rescale, MetricFactor) {
  const PoincareBall ball(1.0);
  const Vector g = vec2(1.0, -2.0);
  EXPECT_LT((ball.riemannian_rescale(g, Vector::Zero(2)) - 0.25 * g).norm(), 1e-16);
  EXPECT_EQ(ball.riemannian_rescale(Vector::Zero(2), vec2(0.3, 0.1)), Vector::Zero(2));
  double previous = 1.0;
  for (double r = 0.0; r < 0.99; r += 0.01) {
    const double f = ball.riemannian_rescale(vec2(1.0, 0.0), vec2(r, 0.0))[0];
    EXPECT_LT(f, previous);
    previous = f;
  }
  EXPECT_LT(previous, 1e-3);
}

// --- Frechet mean -------------------------------------------------------

TEST(Frechet, DegenerateInputs) {
  const PoincareBall ball(1.0);
  const std::vector<Vector> one = {vec2(0.1, 0.2)};
  const std::vector<double> w1 = {1.0};
  const auto r1 = frechet_mean(ball, std::span<const Vector>(one), std::span<const double>(w1));
  EXPECT_EQ(r1.mean, one[0]);
  EXPECT_EQ(r1.iterations, 0);
  EXPECT_TRUE(r1.converged);

  const std::vector<Vector> two = {vec2(0.1, 0.2), vec2(-0.4, 0.3)};
  const std::vector<double> w2 = {1.0, 0.0};
  const auto r2 = frechet_mean(ball, std::span<const Vector>(two), std::span<const double>(w2));
  EXPECT_LT((r2.mean - two[0]).norm(), 1e-15);
  EXPECT_TRUE(r2.converged);
}

TEST(Frechet, InvalidWeightsAreRejected) {
  const PoincareBall ball(1.0);
  const std::vector<Vector> pts = {vec2(0.1, 0.2), vec2(-0.4, 0.3)};
  const std::vector<double> bad_sum = {0.5, 0.4};
  const std::vector<double> negative = {1.5, -0.5};
  const std::vector<Vector> none;
  const std::vector<double> no_w;
  EXPECT_THROW(frechet_mean(ball, std::span<const Vector>(pts), std::span<const double>(bad_sum)),
               ContractError);
  EXPECT_THROW(frechet_mean(ball, std::span<const Vector>(pts), std::span<const double>(negative)),
               ContractError);
  EXPECT_THROW(frechet_mean(ball, std::span<const Vector>(none), std::span<const double>(no_w)),
               ContractError);
}

TEST(Frechet, MatchesGridSearchOnTheLine) {
  const PoincareBall ball(1.0);
  std::vector<Vector> pts(2, Vector(1));
  pts[0][0] = 0.2;
  pts[1][0] = 0.6;
  const std::vector<double> w = {0.5, 0.5};
  const auto r = frechet_mean(ball, std::span<const Vector>(pts), std::span<const double>(w));
  ASSERT_TRUE(r.converged);

  constexpr int kGrid = 100000;
  double best_x = 0.0, best_f = INFINITY;
  Vector z(1);
  for (int i = 0; i <= kGrid; ++i) {
    z[0] = 0.2 + 0.4 * i / kGrid;
    const double f = frechet_objective(ball, z, std::span<const Vector>(pts), std::span<const double>(w));
    if (f < best_f) best_f = f, best_x = z[0];
  }
  EXPECT_NEAR(r.mean[0], best_x, 1e-3);
  // Hyperbolic midpoint: atanh(mu) is the average of atanh(0.2) and atanh(0.6).
  EXPECT_NEAR(r.mean[0], std::tanh(0.5 * (std::atanh(0.2) + std::atanh(0.6))), 1e-6);
}

TEST(Frechet, ObjectiveIsNonIncreasing) {
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (double c : {0.5, 1.0, 2.0}) {
    const PoincareBall ball(c);
    const Hyperboloid h(c);
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 2 + trial % 7;
      std::vector<Vector> pts, lpts;
      std::vector<double> w;
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        pts.push_back(random_ball_point(ball, 3, rng, 0.97));
        lpts.push_back(poincare_to_lorentz(pts.back(), c));
        w.push_back(u(rng) + 0.01);
        total += w.back();
      }
      for (auto& x : w) x /= total;
      for (const auto& r :
           {frechet_mean(ball, std::span<const Vector>(pts), std::span<const double>(w)),
            frechet_mean(h, std::span<const Vector>(lpts), std::span<const double>(w))}) {
        for (std::size_t k = 1; k < r.objective.size(); ++k) {
          EXPECT_LE(r.objective[k], r.objective[k - 1] + 1e-12) << "c=" << c << " k=" << k;
        }
      }
    }
  }
}

TEST(Frechet, ConvergesOnModeratelySpreadClouds) {
  std::mt19937_64 rng(23);
  for (double c : {0.5, 1.0, 2.0}) {
    const PoincareBall ball(c);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<Vector> pts;
      for (int i = 0; i < 8; ++i) pts.push_back(random_ball_point(ball, 3, rng, 0.8));
      const std::vector<double> w(8, 1.0 / 8.0);
      const auto r = frechet_mean(ball, std::span<const Vector>(pts), std::span<const double>(w));
      EXPECT_TRUE(r.converged) << "c=" << c << " iterations=" << r.iterations;
    }
  }
}

TEST(Frechet, PoincareAndLorentzAgreeThroughIsometry) {
  std::mt19937_64 rng(21);
  const double c = 1.5;
  const PoincareBall ball(c);
  const Hyperboloid h(c);
  std::vector<Vector> pts, lpts;
  for (int i = 0; i < 6; ++i) {
    pts.push_back(random_ball_point(ball, 4, rng, 0.8));
    lpts.push_back(poincare_to_lorentz(pts.back(), c));
  }
  const std::vector<double> w(6, 1.0 / 6.0);
  const auto rp = frechet_mean(ball, std::span<const Vector>(pts), std::span<const double>(w));
  const auto rl = frechet_mean(h, std::span<const Vector>(lpts), std::span<const double>(w));
  EXPECT_LT((lorentz_to_poincare(rl.mean, c) - rp.mean).norm(), 1e-6);
}

TEST(Frechet, FlatLimitMatchesEuclideanMean) {
  std::mt19937_64 rng(22);
  const double c = 1e-6;
  const PoincareBall ball(c);
  std::vector<Vector> tangents, pts;
  std::vector<double> w = {0.1, 0.2, 0.3, 0.4};
  Vector euclid = Vector::Zero(3);
  for (std::size_t i = 0; i < w.size(); ++i) {
    tangents.push_back(random_vector(3, rng));
    pts.push_back(ball.exp0(tangents.back()));
    euclid += w[i] * tangents.back();
  }
  const auto r = frechet_mean(ball, std::span<const Vector>(pts), std::span<const double>(w));
  EXPECT_TRUE(r.converged);
  EXPECT_LT((ball.log0(r.mean) - euclid).norm(), 1e-3);
}

TEST(Frechet, NonConvergenceIsFlagged) {
  const PoincareBall ball(1.0);
  const std::vector<Vector> pts = {vec2(0.5, 0.1), vec2(-0.6, 0.2), vec2(0.1, -0.7)};
  const std::vector<double> w(3, 1.0 / 3.0);
  const auto r = frechet_mean(ball, std::span<const Vector>(pts), std::span<const double>(w),
                              FrechetOptions{1e-14, 1});
  EXPECT_EQ(r.iterations, 1);
  EXPECT_FALSE(r.converged);
}

}  // namespace
}  // namespace loopalign::geo
