#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "fd_oracle.hpp"
#include "fixtures.hpp"
#include "loopalign/errors.hpp"
#include "loopalign/losses.hpp"

namespace loopalign {
namespace {

namespace bt = geo::batched;
using testing::normal_values;

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Tensor tau_of(double v) { return Tensor::constant({1}, {v}); }

TEST(GaLoss, SingleSampleWithoutMarginIsExactlyZero) {
  const Tensor d = Tensor::constant({1, 1}, {0.37});
  EXPECT_EQ(ga_loss_rows(d, tau_of(0.07), 0.0, false).item(), 0.0);
  const Tensor c = Tensor::constant({1}, {1.0});
  const Tensor mu = bt::exp0(Tensor::constant({1, 3}, {0.1, -0.2, 0.3}), c);
  const Tensor tx = bt::exp0(Tensor::constant({1, 3}, {0.4, 0.0, -0.1}), c);
  EXPECT_EQ(ga_loss(bt::Geometry::poincare, mu, tx, c, tau_of(0.07), 0.0).item(), 0.0);
}

TEST(GaLoss, TwoCandidateSpotValue) {
  const Tensor d = Tensor::constant({2, 2}, {1.0, 2.0, 2.0, 1.0});
  const auto rows = vec(ga_loss_rows(d, tau_of(1.0), 0.0, false));
  EXPECT_NEAR(rows[0], std::log(1.0 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(rows[0], 0.3133, 5e-5);
}

TEST(GaLoss, NonIncreasingInMarginAndNonNegative) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 2 + static_cast<std::size_t>(trial % 5);
    std::vector<double> dv(B * B);
    for (auto& x : dv) x = u(rng);
    const Tensor d = Tensor::constant({B, B}, dv);
    double prev = INFINITY;
    for (double m : {0.0, 0.05, 0.1, 0.5, 1.0, 2.0}) {
      const double loss = ga_loss_rows(d, tau_of(0.3), m, false).mean().item();
      EXPECT_GE(loss, 0.0);
      EXPECT_LE(loss, prev);
      prev = loss;
    }
  }
}

TEST(GaLoss, PermutationEquivariant) {
  std::mt19937_64 rng(6);
  const std::size_t B = 5, D = 3;
  const Tensor c = Tensor::constant({1}, {1.3});
  const auto mv = normal_values(B * D, rng, 0.6), tv = normal_values(B * D, rng, 0.6);
  const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
  std::vector<double> mp(B * D), tp(B * D);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t j = 0; j < D; ++j) {
      mp[i * D + j] = mv[perm[i] * D + j];
      tp[i * D + j] = tv[perm[i] * D + j];
    }
  }
  auto rows = [&](const std::vector<double>& m, const std::vector<double>& t) {
    const Tensor mu = bt::exp0(Tensor::constant({B, D}, m), c);
    const Tensor tx = bt::exp0(Tensor::constant({B, D}, t), c);
    const Tensor dist = bt::distance(bt::Geometry::poincare, mu.reshape({B, 1, D}), tx.reshape({1, B, D}), c);
    return vec(ga_loss_rows(dist, tau_of(0.1), 0.1, false));
  };
  const auto base = rows(mv, tv), permuted = rows(mp, tp);
  for (std::size_t i = 0; i < B; ++i) EXPECT_NEAR(permuted[i], base[perm[i]], 1e-12);
  EXPECT_NEAR(std::accumulate(base.begin(), base.end(), 0.0),
              std::accumulate(permuted.begin(), permuted.end(), 0.0), 1e-12);
}

TEST(GaLoss, PoincareAndLorentzAgreeThroughIsometry) {
  std::mt19937_64 rng(7);
  const std::size_t B = 4, D = 3;
  const double cv = 0.8;
  const Tensor c = Tensor::constant({1}, {cv});
  const Tensor mu = bt::exp0(Tensor::constant({B, D}, normal_values(B * D, rng, 0.7)), c);
  const Tensor tx = bt::exp0(Tensor::constant({B, D}, normal_values(B * D, rng, 0.7)), c);
  auto lift = [&](const Tensor& p) {
    std::vector<double> out;
    for (std::size_t i = 0; i < B; ++i) {
      geo::Vector v(static_cast<Eigen::Index>(D));
      for (std::size_t j = 0; j < D; ++j) v[static_cast<Eigen::Index>(j)] = p.values()[i * D + j];
      const geo::Vector x = geo::poincare_to_lorentz(v, cv);
      out.insert(out.end(), x.data(), x.data() + x.size());
    }
    return Tensor::constant({B, D + 1}, out);
  };
  const double lp = ga_loss(bt::Geometry::poincare, mu, tx, c, tau_of(0.1), 0.1).item();
  const double ll = ga_loss(bt::Geometry::lorentz, lift(mu), lift(tx), c, tau_of(0.1), 0.1).item();
  EXPECT_NEAR(lp, ll, 1e-6);
}

TEST(GaLoss, SymmetricModeAveragesBothDirections) {
  const Tensor d = Tensor::constant({2, 2}, {1.0, 2.0, 3.0, 1.5});
  const auto fwd = vec(ga_loss_rows(d, tau_of(1.0), 0.0, false));
  const auto bwd = vec(ga_loss_rows(d.transpose(0, 1), tau_of(1.0), 0.0, false));
  const auto sym = vec(ga_loss_rows(d, tau_of(1.0), 0.0, true));
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(sym[i], 0.5 * (fwd[i] + bwd[i]), 1e-12);
}

TEST(LmLoss, UniformLogitsGiveLogVocab) {
  const Tensor logits = Tensor::zeros({2, 3, 4});
  const double loss = lm_loss(logits, {{3, 2, 0}, {1, 0, 0}}).item();
  EXPECT_NEAR(loss, std::log(4.0), 1e-12);
  EXPECT_NEAR(loss, 1.3863, 5e-5);
}

TEST(LmLoss, ConfidentCorrectLogitsApproachZero) {
  std::vector<double> v(1 * 2 * 4, 0.0);
  v[0 * 4 + 3] = 60.0;
  v[1 * 4 + 2] = 60.0;
  EXPECT_LT(lm_loss(Tensor::constant({1, 2, 4}, v), {{3, 2}}).item(), 1e-20);
}

TEST(LmLoss, AllPaddingIsADataError) {
  EXPECT_THROW(lm_loss(Tensor::zeros({1, 2, 4}), {{0, 0}}), DataError);
  EXPECT_THROW(lm_loss(Tensor::zeros({1, 2, 4}), {{0}}), ShapeError);
}

TEST(LmLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const Tensor logits = Tensor::parameter({2, 3, 5}, normal_values(30, rng));
  const std::vector<std::vector<int>> targets = {{4, 1, 2}, {3, 2, 0}};
  auto f = [&] { return lm_loss(logits, targets).item(); };
  lm_loss(logits, targets).backward();
  const auto numeric = testing::central_difference(f, logits);
  EXPECT_LT(testing::relative_error(logits.grad(), numeric), 1e-4);
}

TEST(JointLoss, ArithmeticIdentity) {
  ParameterSet ps;
  LossConfig cfg;
  cfg.alpha_mode = AlphaMode::fixed;
  cfg.alpha = 0.5;
  const JointObjective j = JointObjective::make(ps, cfg);
  LossBreakdown b;
  const Tensor one = Tensor::scalar(1.0);
  const double joint = j.combine(Tensor::scalar(2.0), one, {one, one}, 2, &b).item();
  EXPECT_NEAR(joint, 1.6, 1e-12);
  EXPECT_NEAR(b.joint, b.alpha * b.lm + (1 - b.alpha) * (b.ga_final + b.w_aux * (b.ga_aux[0] + b.ga_aux[1])),
              1e-12);
  EXPECT_TRUE(ps.all().empty());
}

TEST(JointLoss, LearnableAlphaStartsAtConfiguredValue) {
  ParameterSet ps;
  LossConfig cfg;
  cfg.alpha_mode = AlphaMode::learnable;
  cfg.alpha = 0.3;
  const JointObjective j = JointObjective::make(ps, cfg);
  EXPECT_TRUE(ps.contains("joint.alpha_logit"));
  EXPECT_NEAR(j.alpha().item(), 0.3, 1e-12);
  const double joint = j.combine(Tensor::scalar(2.0), Tensor::scalar(1.0), {}, 0).item();
  EXPECT_NEAR(joint, 0.3 * 2.0 + 0.7 * 1.0, 1e-12);
}

TEST(JointLoss, AlphaNearOneGivesLm) {
  ParameterSet ps;
  LossConfig cfg;
  cfg.alpha_mode = AlphaMode::fixed;
  cfg.alpha = 1.0 - 1e-12;
  const JointObjective j = JointObjective::make(ps, cfg);
  EXPECT_NEAR(j.combine(Tensor::scalar(2.0), Tensor::scalar(5.0), {}, 0).item(), 2.0, 1e-10);
}

TEST(JointLoss, AuxCountMismatchIsAContractError) {
  ParameterSet ps;
  const JointObjective j = JointObjective::make(ps, LossConfig{});
  const Tensor one = Tensor::scalar(1.0);
  EXPECT_THROW(j.combine(one, one, {one}, 2), ContractError);
}

TEST(AlignmentHead, SingleFramePoolsToThatFrame) {
  RunConfig cfg = testing::tiny_config();
  ParameterSet ps;
  Rng rng(1);
  const AlignmentHead head = AlignmentHead::make(ps, cfg, rng);
  std::mt19937_64 g(2);
  const Tensor sign = Tensor::constant({2, 1, 8}, normal_values(16, g));
  const auto trace = head.pool_sign(sign, Tensor::full({2, 1}, 1.0));
  const Tensor expect = bt::exp0(head.project(sign.reshape({2, 8})), head.curvature());
  const auto a = vec(trace.mean), b = vec(expect);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(AlignmentHead, ZeroScorerGivesUniformWeightsOverRealFrames) {
  RunConfig cfg = testing::tiny_config();
  ParameterSet ps;
  Rng rng(1);
  const AlignmentHead head = AlignmentHead::make(ps, cfg, rng);
  std::mt19937_64 g(3);
  const Tensor sign = Tensor::constant({2, 4, 8}, normal_values(64, g));
  const Tensor keep = Tensor::constant({2, 4}, {1, 1, 1, 1, 1, 1, 0, 0});
  const auto w = vec(head.frame_weights(sign, keep));
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(w[t], 0.25, 1e-15);
  EXPECT_NEAR(w[4], 0.5, 1e-15);
  EXPECT_NEAR(w[5], 0.5, 1e-15);
  EXPECT_EQ(w[6], 0.0);
  EXPECT_EQ(w[7], 0.0);
}

TEST(AlignmentHead, ParametersFollowManifoldSetting) {
  for (auto m : {ManifoldKind::euclidean, ManifoldKind::poincare, ManifoldKind::adaptive_lorentz}) {
    RunConfig cfg = testing::tiny_config();
    cfg.geometry.manifold = m;
    ParameterSet ps;
    Rng rng(1);
    const AlignmentHead head = AlignmentHead::make(ps, cfg, rng);
    EXPECT_EQ(ps.contains("align.log_scale"), is_adaptive(m)) << to_string(m);
    EXPECT_TRUE(ps.contains("align.log_tau"));
    EXPECT_NEAR(head.tau().item(), cfg.loss.tau, 1e-15);
    std::mt19937_64 g(4);
    const Tensor text = head.pool_text(Tensor::constant({2, 3, 8}, normal_values(48, g)),
                                       Tensor::constant({2, 3}, {1, 1, 1, 1, 0, 0}));
    EXPECT_EQ(text.size(1), is_lorentz(m) ? 5u : 4u);
  }
}

}  // namespace
}  // namespace loopalign
