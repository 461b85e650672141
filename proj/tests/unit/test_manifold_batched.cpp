#include <gtest/gtest.h>

#include <random>

#include "fd_oracle.hpp"
#include "loopalign/manifold.hpp"
#include "loopalign/manifold_batched.hpp"

namespace loopalign::geo {
namespace {

namespace bt = batched;

std::vector<double> normal_values(std::size_t n, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

Vector row(const Tensor& t, std::size_t i) {
  const std::size_t d = t.size(-1);
  Vector v(static_cast<Eigen::Index>(d));
  for (std::size_t j = 0; j < d; ++j) v[static_cast<Eigen::Index>(j)] = t.values()[i * d + j];
  return v;
}

TEST(Batched, PoincareOpsMatchPlainKernel) {
  std::mt19937_64 rng(31);
  for (double cv : {0.5, 1.0, 2.0}) {
    const Tensor c = Tensor::constant({1}, {cv});
    const PoincareBall ball(cv);
    const Tensor a = bt::exp0(Tensor::constant({6, 4}, normal_values(24, rng, 1.0)), c);
    const Tensor b = bt::exp0(Tensor::constant({6, 4}, normal_values(24, rng, 1.0)), c);
    const Tensor v = Tensor::constant({6, 4}, normal_values(24, rng, 0.7));
    const Tensor add = bt::mobius_add(a, b, c);
    const Tensor ex = bt::exp_at(a, v, c);
    const Tensor lg = bt::log_at(a, b, c);
    const Tensor d = bt::dist_poincare(a, b, c);
    const Tensor l0 = bt::log0(b, c);
    for (std::size_t i = 0; i < 6; ++i) {
      EXPECT_LT((row(add, i) - ball.mobius_add(row(a, i), row(b, i))).norm(), 1e-12);
      EXPECT_LT((row(ex, i) - ball.exp(row(a, i), row(v, i))).norm(), 1e-12);
      EXPECT_LT((row(lg, i) - ball.log(row(a, i), row(b, i))).norm(), 1e-9);
      EXPECT_LT((row(l0, i) - ball.log0(row(b, i))).norm(), 1e-9);
      EXPECT_NEAR(d.values()[i], ball.dist(row(a, i), row(b, i)), 1e-10);
    }
  }
}

TEST(Batched, LorentzOpsMatchPlainKernel) {
  std::mt19937_64 rng(32);
  for (double cv : {0.5, 1.0, 2.0}) {
    const Tensor c = Tensor::constant({1}, {cv});
    const Hyperboloid h(cv);
    const Tensor sa = Tensor::constant({5, 3}, normal_values(15, rng, 0.8));
    const Tensor sb = Tensor::constant({5, 3}, normal_values(15, rng, 0.8));
    const Tensor a = bt::lorentz_exp0(sa, c);
    const Tensor b = bt::lorentz_exp0(sb, c);
    const Tensor lg = bt::lorentz_log_at(a, b, c);
    const Tensor back = bt::lorentz_exp_at(a, lg, c);
    const Tensor d = bt::dist_lorentz(a, b, c);
    const Tensor l0 = bt::lorentz_log0(b, c);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_LT((row(a, i) - h.exp0(row(sa, i))).norm(), 1e-12);
      EXPECT_LT((row(lg, i) - h.log(row(a, i), row(b, i))).norm(), 1e-8);
      EXPECT_LT((row(back, i) - row(b, i)).norm(), 1e-7);
      EXPECT_LT((row(l0, i) - row(sb, i)).norm(), 1e-8);
      EXPECT_NEAR(d.values()[i], h.dist(row(a, i), row(b, i)), 1e-10);
    }
  }
}

TEST(Batched, DistancesAgreeThroughIsometry) {
  std::mt19937_64 rng(33);
  const Tensor c = Tensor::constant({1}, {1.5});
  const Tensor u = Tensor::constant({8, 3}, normal_values(24, rng, 1.0));
  const Tensor v = Tensor::constant({8, 3}, normal_values(24, rng, 1.0));
  const Tensor dp = bt::dist_poincare(bt::exp0(u, c), bt::exp0(v, c), c);
  const Tensor dl = bt::dist_lorentz(bt::lorentz_exp0(u, c), bt::lorentz_exp0(v, c), c);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(dp.values()[i], dl.values()[i], 1e-8);
}

TEST(Batched, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(34);
  const Tensor c = Tensor::parameter({1}, {1.3});
  const Tensor x = Tensor::parameter({3, 4}, normal_values(12, rng, 0.8));
  const Tensor y = Tensor::parameter({3, 4}, normal_values(12, rng, 0.8));
  const std::vector<std::pair<const char*, std::function<Tensor()>>> cases = {
      {"poincare", [&] { return bt::dist_poincare(bt::exp0(x, c), bt::exp0(y, c), c).sum(); }},
      {"log_at", [&] { return square(bt::log_at(bt::exp0(x, c), bt::exp0(y, c), c)).sum(); }},
      {"exp_at", [&] { return square(bt::log0(bt::exp_at(bt::exp0(x, c), y, c), c)).sum(); }},
      {"lorentz",
       [&] { return bt::dist_lorentz(bt::lorentz_exp0(x, c), bt::lorentz_exp0(y, c), c).sum(); }},
      {"lorentz_log",
       [&] {
         const Tensor a = bt::lorentz_exp0(x, c);
         const Tensor b = bt::lorentz_exp0(y, c);
         return square(bt::lorentz_log0(bt::lorentz_exp_at(a, bt::lorentz_log_at(a, b, c) * 0.5, c), c))
             .sum();
       }},
      {"euclidean", [&] { return bt::dist_euclidean(x, y).sum(); }},
  };
  for (const auto& [name, f] : cases) {
    for (const Tensor* leaf : {&c, &x, &y}) leaf->zero_grad();
    f().backward();
    auto scalar = [&] { return f().item(); };
    for (const Tensor* leaf : {&c, &x, &y}) {
      EXPECT_LT(testing::relative_error(leaf->grad(), testing::central_difference(scalar, *leaf)), 1e-4)
          << name;
    }
  }
}

TEST(Batched, FrechetMatchesPlainKernel) {
  std::mt19937_64 rng(35);
  const double cv = 1.2;
  const Tensor c = Tensor::constant({1}, {cv});
  const std::size_t B = 3, T = 5, D = 4;
  const Tensor pts = bt::exp0(Tensor::constant({B, T, D}, normal_values(B * T * D, rng, 1.5)), c);
  const Tensor w = Tensor::constant({B, T}, normal_values(B * T, rng, 1.0)).softmax(-1);
  const auto trace = bt::frechet_mean(bt::Geometry::poincare, pts, w, c, FrechetOptions{});
  EXPECT_TRUE(trace.converged);
  const PoincareBall ball(cv);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<Vector> p;
    std::vector<double> wb;
    for (std::size_t t = 0; t < T; ++t) {
      p.push_back(row(pts, b * T + t));
      wb.push_back(w.values()[b * T + t]);
    }
    const auto r = frechet_mean(ball, std::span<const Vector>(p), std::span<const double>(wb));
    EXPECT_LT((row(trace.mean, b) - r.mean).norm(), 1e-6);
  }
}

TEST(Batched, FrechetSinglePointAndEuclidean) {
  std::mt19937_64 rng(36);
  const Tensor c = Tensor::constant({1}, {1.0});
  const Tensor one = bt::exp0(Tensor::constant({2, 1, 3}, normal_values(6, rng, 1.0)), c);
  const auto r = bt::frechet_mean(bt::Geometry::poincare, one, Tensor::constant({2, 1}, {1, 1}), c, {});
  EXPECT_EQ(r.iterations, 0);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(r.mean.values()[i], one.values()[i]);

  const Tensor pts = Tensor::constant({1, 2, 2}, {0, 0, 2, 4});
  const auto e = bt::frechet_mean(bt::Geometry::euclidean, pts, Tensor::constant({1, 2}, {0.25, 0.75}), c, {});
  EXPECT_DOUBLE_EQ(e.mean.values()[0], 1.5);
  EXPECT_DOUBLE_EQ(e.mean.values()[1], 3.0);
}

TEST(Batched, FrechetGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(37);
  const Tensor c = Tensor::parameter({1}, {0.9});
  const Tensor feats = Tensor::parameter({2, 4, 3}, normal_values(24, rng, 0.8));
  const Tensor scores = Tensor::parameter({2, 4}, normal_values(8, rng, 1.0));
  for (auto g : {bt::Geometry::poincare, bt::Geometry::lorentz}) {
    auto f = [&] {
      const Tensor pts = bt::to_manifold(g, feats, c);
      const auto tr = bt::frechet_mean(g, pts, scores.softmax(-1), c, FrechetOptions{1e-12, 200});
      return square(bt::to_tangent(g, tr.mean, c)).sum();
    };
    for (const Tensor* leaf : {&c, &feats, &scores}) leaf->zero_grad();
    f().backward();
    auto scalar = [&] { return f().item(); };
    for (const Tensor* leaf : {&c, &feats, &scores}) {
      EXPECT_LT(testing::relative_error(leaf->grad(), testing::central_difference(scalar, *leaf)), 1e-4);
    }
  }
}

}  // namespace
}  // namespace loopalign::geo
