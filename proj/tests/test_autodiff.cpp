#include <gtest/gtest.h>

#include <cmath>

#include "dcr/autodiff.hpp"
#include "dcr/random.hpp"
#include "oracles.hpp"

namespace ad = dcr::ad;
using dcr::Tensor;

namespace {

Tensor random_tensor(dcr::Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Tensor t(r, c);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

void expect_fd(const oracle::LossBuilder& f, std::vector<Tensor> inputs) {
  const auto r = oracle::check_gradients(f, std::move(inputs));
  EXPECT_LT(r.worst, oracle::kRelTol) << r.where;
}

}  // namespace

TEST(Tensor, ConstructionAndAccess) {
  const Tensor t{{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}};
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t(1, 2), 6.0);
  EXPECT_THROW((Tensor{{1.0, 2.0}, {3.0}}), dcr::ShapeError);
  EXPECT_THROW(Tensor(2, 2, std::vector<double>{1.0}), dcr::ShapeError);
  EXPECT_THROW(t.item(), dcr::ShapeError);
  EXPECT_EQ(Tensor::identity(3)(1, 1), 1.0);
  EXPECT_EQ(Tensor::identity(3)(0, 1), 0.0);
}

TEST(Autodiff, MatmulGradients) {
  dcr::Rng rng(1);
  expect_fd([](ad::Graph&, const std::vector<ad::Var>& p) { return ad::sum(ad::matmul(p[0], p[1])); },
            {random_tensor(rng, 3, 4), random_tensor(rng, 4, 2)});
}

TEST(Autodiff, ElementwiseGradients) {
  dcr::Rng rng(2);
  expect_fd(
      [](ad::Graph&, const std::vector<ad::Var>& p) {
        return ad::sum(ad::multiply(ad::tanh(p[0]), ad::square(p[1])) + 3.0 * p[0] - p[1]);
      },
      {random_tensor(rng, 3, 3), random_tensor(rng, 3, 3)});
}

TEST(Autodiff, BroadcastAddGradient) {
  dcr::Rng rng(3);
  expect_fd([](ad::Graph&, const std::vector<ad::Var>& p) { return ad::sum(ad::square(p[0] + p[1])); },
            {random_tensor(rng, 4, 3), random_tensor(rng, 1, 3)});
  expect_fd([](ad::Graph&, const std::vector<ad::Var>& p) { return ad::sum(ad::square(p[0] - p[1])); },
            {random_tensor(rng, 4, 3), random_tensor(rng, 1, 3)});
}

TEST(Autodiff, LogSoftmaxMeanTransposeGradients) {
  dcr::Rng rng(4);
  expect_fd(
      [](ad::Graph&, const std::vector<ad::Var>& p) {
        return ad::mean(ad::log(ad::softmax_rows(ad::transpose(p[0]))));
      },
      {random_tensor(rng, 3, 5)});
}

TEST(Autodiff, ReluAndHingeAwayFromKink) {
  dcr::Rng rng(5);
  Tensor x = random_tensor(rng, 4, 4, 0.1, 1.0);
  for (std::size_t i = 0; i < x.size(); i += 2) x[i] = -x[i];
  expect_fd([](ad::Graph&, const std::vector<ad::Var>& p) { return ad::sum(ad::relu(p[0])); }, {x});
  expect_fd([](ad::Graph&, const std::vector<ad::Var>& p) { return ad::sum(ad::hinge_clamp(p[0])); }, {x});
}

TEST(Autodiff, SubgradientAtZeroIsZero) {
  ad::Graph g;
  const ad::Var x = g.parameter(Tensor{{0.0, 1.0, -1.0}});
  g.backward(ad::sum(ad::relu(x)));
  EXPECT_EQ(g.grad(x)(0, 0), 0.0);
  EXPECT_EQ(g.grad(x)(0, 1), 1.0);
  EXPECT_EQ(g.grad(x)(0, 2), 0.0);
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
  ad::Graph g;
  const ad::Var x = g.parameter(Tensor{{2.0}});
  g.backward(ad::multiply(x, x) + x);
  EXPECT_DOUBLE_EQ(g.grad(x).item(), 5.0);
}

TEST(Autodiff, BackwardTwiceDoesNotAccumulate) {
  ad::Graph g;
  const ad::Var x = g.parameter(Tensor{{3.0}});
  const ad::Var y = ad::square(x);
  g.backward(y);
  g.backward(y);
  EXPECT_DOUBLE_EQ(g.grad(x).item(), 6.0);
}

TEST(Autodiff, GradientReversalScalesAndNegates) {
  ad::Graph g;
  const ad::Var x = g.parameter(Tensor{{1.5, -2.0}});
  const ad::Var r = ad::gradient_reversal(x, 0.5);
  EXPECT_EQ(r.value(), x.value());
  g.backward(ad::sum(ad::scale(r, 4.0)));
  EXPECT_DOUBLE_EQ(g.grad(x)(0, 0), -2.0);
  EXPECT_DOUBLE_EQ(g.grad(x)(0, 1), -2.0);
}

TEST(Autodiff, DetachAndConstantsBlockGradient) {
  ad::Graph g;
  const ad::Var x = g.parameter(Tensor{{2.0}});
  const ad::Var c = g.constant(Tensor{{5.0}});
  g.backward(ad::multiply(ad::detach(x), x) + c);
  EXPECT_DOUBLE_EQ(g.grad(x).item(), 2.0);
  EXPECT_THROW(g.grad(c), std::logic_error);
}

TEST(Autodiff, ErrorsAreReported) {
  ad::Graph g;
  const ad::Var a = g.parameter(Tensor(2, 3));
  const ad::Var b = g.parameter(Tensor(2, 2));
  EXPECT_THROW(ad::matmul(a, a), dcr::ShapeError);
  EXPECT_THROW(ad::add(a, b), dcr::ShapeError);
  EXPECT_THROW(g.backward(a), dcr::ShapeError);
  EXPECT_THROW(ad::log(g.constant(Tensor{{0.0}})), dcr::DomainError);
  EXPECT_THROW(g.parameter(Tensor{{NAN}}), dcr::DomainError);
  try {
    ad::add(a, b);
  } catch (const dcr::ShapeError& e) {
    EXPECT_STREQ(e.what(), "add: shape mismatch (2x3) vs (2x2)");
  }
  ad::Graph other;
  const ad::Var c = other.parameter(Tensor(2, 3));
  EXPECT_THROW(ad::add(a, c), std::invalid_argument);
  EXPECT_THROW(g.grad(a), std::logic_error);
}
