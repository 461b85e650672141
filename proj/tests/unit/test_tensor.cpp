#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fd_oracle.hpp"
#include "loopalign/errors.hpp"
#include "loopalign/tensor.hpp"

namespace loopalign {
namespace {

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                  double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

TEST(Tensor, ShapeInvariantIsEnforced) {
  EXPECT_THROW(Tensor::constant({2, 3}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::constant({0}, {}), ShapeError);
  const Tensor t = Tensor::zeros({2, 3});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.size(-1), 3u);
}

TEST(Tensor, TanhOfZerosIsZero) {
  const Tensor y = tanh(Tensor::zeros({4}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Tensor, AtanhScalarValue) {
  EXPECT_NEAR(atanh(Tensor::scalar(0.5)).item(), 0.5493061443340549, 1e-12);
}

TEST(Tensor, DomainViolationsThrow) {
  EXPECT_THROW(acosh(Tensor::scalar(0.5)), DomainError);
  EXPECT_THROW(atanh(Tensor::scalar(1.0)), DomainError);
  EXPECT_THROW(sqrt(Tensor::scalar(-1.0)), DomainError);
  EXPECT_NO_THROW(acosh(Tensor::scalar(1.0)));
}

TEST(Tensor, MismatchedBroadcastNamesBothShapes) {
  try {
    (void)(Tensor::zeros({2, 3}) + Tensor::zeros({4}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2, 3)"), std::string::npos);
    EXPECT_NE(msg.find("(4,)"), std::string::npos);
  }
}

TEST(Tensor, TrailingAxisBroadcast) {
  const Tensor a = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor row = Tensor::constant({3}, {10, 20, 30});
  const Tensor col = Tensor::constant({2, 1}, {100, 200});
  EXPECT_EQ(vec(a + row), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  EXPECT_EQ(vec(a * col), (std::vector<double>{100, 200, 300, 800, 1000, 1200}));
}

TEST(Tensor, IdentityMatmul) {
  const Tensor eye = Tensor::constant({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor x = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(vec(matmul(x, eye)), (std::vector<double>{1, 2, 3, 4, 5, 6}));
  EXPECT_THROW(matmul(x, Tensor::zeros({2, 2})), ShapeError);
}

TEST(Tensor, BatchedMatmulBroadcastsLeadingAxes) {
  std::mt19937_64 rng(3);
  const Tensor a = Tensor::constant({2, 3}, random_values(6, rng));
  const Tensor b = Tensor::constant({4, 3, 2}, random_values(24, rng));
  const Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{4, 2, 2}));
  for (std::size_t t = 0; t < 4; ++t) {
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < 3; ++p) acc += a.values()[i * 3 + p] * b.values()[t * 6 + p * 2 + j];
        EXPECT_NEAR(c.values()[t * 4 + i * 2 + j], acc, 1e-14);
      }
    }
  }
}

TEST(Tensor, SoftmaxAndNorm) {
  const auto s = vec(Tensor::zeros({2}).softmax(0));
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
  EXPECT_DOUBLE_EQ(Tensor::constant({2}, {3, 4}).norm().item(), 5.0);
  std::mt19937_64 rng(1);
  const Tensor x = Tensor::constant({3, 5}, random_values(15, rng, -4, 4));
  const Tensor rows = x.softmax(-1).sum(-1);
  for (double v : rows.values()) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(Tensor, ConcatSliceTranspose) {
  const Tensor a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  const Tensor b = Tensor::constant({2, 1}, {9, 8});
  const Tensor c = concat({a, b}, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  EXPECT_EQ(vec(c), (std::vector<double>{1, 2, 9, 3, 4, 8}));
  EXPECT_THROW(concat({a, Tensor::zeros({3, 1})}, 1), ShapeError);
  EXPECT_EQ(vec(c.slice(1, 1, 3)), (std::vector<double>{2, 9, 4, 8}));
  EXPECT_EQ(vec(c.transpose(0, 1)), (std::vector<double>{1, 3, 2, 4, 9, 8}));
}

TEST(Autodiff, SumOfSquaresGradient) {
  const Tensor x = Tensor::parameter({3}, {1, 2, 3});
  (x * x).sum().backward();
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{2, 4, 6}));
}

TEST(Autodiff, RepeatedBackwardAccumulatesIntoLeaves) {
  const Tensor x = Tensor::parameter({2}, {1, -2});
  const Tensor loss = (square(x) * 3.0).sum();
  loss.backward();
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -24.0);
  x.zero_grad();
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Autodiff, DetachIsAnExactBarrier) {
  const Tensor x = Tensor::parameter({3}, {0.3, -0.7, 1.1});
  const Tensor y = tanh(x) * 2.0;
  (exp(y.detach()) * 5.0).sum().backward();
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
  const Tensor z = (y.detach() * y).sum();
  z.backward();
  bool any_nonzero = false;
  for (double g : x.grad()) any_nonzero = any_nonzero || g != 0.0;
  EXPECT_TRUE(any_nonzero);
}

TEST(Autodiff, NonScalarLossIsRejected) {
  const Tensor x = Tensor::parameter({2}, {1, 2});
  EXPECT_THROW((x * 2.0).backward(), ContractError);
}

TEST(Autodiff, NoGradGuardRecordsNothing) {
  const Tensor x = Tensor::parameter({2}, {1, 2});
  NoGradGuard guard;
  EXPECT_FALSE((x * x).requires_grad());
}

// Each primitive, pushed through a random linear read-out, against central
// differences at random points inside its domain.
struct PrimitiveCase {
  const char* name;
  std::function<Tensor(const Tensor&)> op;
  double lo, hi;
};

TEST(Autodiff, EveryPrimitiveMatchesFiniteDifferences) {
  std::mt19937_64 rng(42);
  const std::vector<PrimitiveCase> cases = {
      {"neg", [](const Tensor& x) { return -x; }, -2, 2},
      {"tanh", [](const Tensor& x) { return tanh(x); }, -2, 2},
      {"atanh", [](const Tensor& x) { return atanh(x); }, -0.9, 0.9},
      {"acosh", [](const Tensor& x) { return acosh(x); }, 1.2, 3},
      {"exp", [](const Tensor& x) { return exp(x); }, -2, 2},
      {"log", [](const Tensor& x) { return log(x); }, 0.2, 3},
      {"sqrt", [](const Tensor& x) { return sqrt(x); }, 0.2, 3},
      {"square", [](const Tensor& x) { return square(x); }, -2, 2},
      {"clamp", [](const Tensor& x) { return clamp(x, -0.5, 0.5); }, -2, 2},
      {"add", [](const Tensor& x) { return x + x.slice(1, 0, 1); }, -2, 2},
      {"sub", [](const Tensor& x) { return x - x.sum(0, true); }, -2, 2},
      {"mul", [](const Tensor& x) { return x * x.transpose(0, 1).reshape({3, 4}); }, -2, 2},
      {"div", [](const Tensor& x) { return x / (square(x) + 1.0); }, -2, 2},
      {"matmul", [](const Tensor& x) { return matmul(x, x.transpose(0, 1)); }, -2, 2},
      {"mean", [](const Tensor& x) { return x.mean(1, true) * x; }, -2, 2},
      {"softmax0", [](const Tensor& x) { return x.softmax(0); }, -2, 2},
      {"softmax1", [](const Tensor& x) { return x.softmax(-1); }, -2, 2},
      {"norm", [](const Tensor& x) { return x.norm(true) * x; }, -2, 2},
      {"concat", [](const Tensor& x) { return concat({x, square(x)}, 0); }, -2, 2},
  };
  for (const auto& pc : cases) {
    std::vector<double> init = random_values(12, rng, pc.lo, pc.hi);
    if (std::string(pc.name) == "clamp") {
      for (auto& v : init) {
        if (std::abs(std::abs(v) - 0.5) < 1e-2) v += 0.05;
      }
    }
    const Tensor x = Tensor::parameter({3, 4}, init);
    const Tensor probe_shape = pc.op(x);
    const Tensor readout =
        Tensor::constant(probe_shape.shape(), random_values(probe_shape.numel(), rng));
    auto f = [&] { return (pc.op(x) * readout).sum().item(); };
    x.zero_grad();
    (pc.op(x) * readout).sum().backward();
    const auto fd = testing::central_difference(f, x);
    EXPECT_LT(testing::relative_error(x.grad(), fd), 1e-4) << pc.name;
  }
}

TEST(Autodiff, CompositeMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  const Tensor w = Tensor::parameter({4, 3}, random_values(12, rng));
  const Tensor x = Tensor::parameter({2, 5, 4}, random_values(40, rng));
  auto f = [&] {
    const Tensor h = tanh(matmul(x, w));
    const Tensor attn = matmul(h, h.transpose(1, 2)).softmax(-1);
    return log(square(matmul(attn, h)).sum(-1) + 1.0).mean();
  };
  const Tensor loss = f();
  loss.backward();
  auto scalar_f = [&] { return f().item(); };
  EXPECT_LT(testing::relative_error(w.grad(), testing::central_difference(scalar_f, w)), 1e-4);
  EXPECT_LT(testing::relative_error(x.grad(), testing::central_difference(scalar_f, x)), 1e-4);
}

TEST(Tensor, DeterministicEvaluation) {
  std::mt19937_64 rng(5);
  const auto vals = random_values(20, rng);
  auto run = [&] {
    const Tensor x = Tensor::constant({4, 5}, vals);
    return vec(matmul(tanh(x), x.transpose(0, 1)).softmax(-1));
  };
  EXPECT_EQ(run(), run());
}

TEST(Tensor, SinglePrecisionRoundsResults) {
  PrecisionGuard guard(Precision::f32);
  const Tensor x = Tensor::scalar(0.1);
  EXPECT_EQ(x.item(), static_cast<double>(0.1f));
  EXPECT_EQ((x * 3.0).item(), static_cast<double>(static_cast<float>(static_cast<double>(0.1f) * 3.0)));
}

}  // namespace
}  // namespace loopalign
