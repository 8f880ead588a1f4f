#include <gtest/gtest.h>

#include <cmath>

#include "dcr/autodiff.hpp"
#include "dcr/losses.hpp"
#include "oracles.hpp"

namespace ad = dcr::ad;
using dcr::Tensor;

namespace {

double rank_value(const std::vector<double>& y, const std::vector<double>& labels, const std::vector<int>& ids,
                  double margin, bool disjoint) {
  ad::Graph g;
  const dcr::Batch b{g.constant(Tensor::column(y)), labels, ids, margin};
  return (disjoint ? dcr::disjoint_ranking_loss(b) : dcr::margin_ranking_loss(b)).value().item();
}

double ce_value(const Tensor& p, const std::vector<int>& ids) {
  ad::Graph g;
  return dcr::annotator_ce_loss(g.constant(p), ids).value().item();
}

}  // namespace

TEST(Primitives, Examples) {
  ad::Graph g;
  EXPECT_EQ(ad::hinge_clamp(g.constant(Tensor{{-1.0, 2.0}})).value(), (Tensor{{0.0, 2.0}}));
  EXPECT_EQ(ad::softmax_rows(g.constant(Tensor(1, 4, 0.0))).value(), (Tensor{{0.25, 0.25, 0.25, 0.25}}));
  EXPECT_EQ(ad::matmul(g.constant(Tensor(2, 3, 1.0)), g.constant(Tensor(3, 1, 1.0))).value(),
            (Tensor{{3.0}, {3.0}}));

  const ad::Var x = g.parameter(Tensor{{1.0, 2.0}});
  g.backward(ad::mean(ad::square(x)));
  EXPECT_EQ(g.grad(x), (Tensor{{1.0, 2.0}}));

  ad::Graph h;
  const ad::Var a = h.parameter(Tensor{{1.0, -2.0}, {0.5, 3.0}});
  const ad::Var b = h.parameter(Tensor{{4.0, 0.25}, {-1.0, 2.0}});
  h.backward(ad::sum(ad::multiply(a, b)));
  EXPECT_EQ(h.grad(a), b.value());
}

TEST(MarginRanking, Examples) {
  EXPECT_DOUBLE_EQ(rank_value({0.5, 0.2}, {1.0, 0.0}, {0, 0}, 0.0, false), 0.0);
  EXPECT_NEAR(rank_value({0.2, 0.5}, {1.0, 0.0}, {0, 0}, 0.0, false), 0.3, 1e-15);
  EXPECT_DOUBLE_EQ(rank_value({0.5, 0.2}, {1.0, 0.0}, {0, 0}, 0.1, false), 0.0);
}

TEST(MarginRanking, AllTiedLabelsIsAnError) {
  try {
    rank_value({0.1, 0.2, 0.3}, {1.0, 1.0, 1.0}, {0, 0, 0}, 0.0, false);
    FAIL() << "expected an error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("no rankable pairs"), std::string::npos);
  }
}

TEST(MarginRanking, InputValidation) {
  EXPECT_THROW(rank_value({0.1}, {1.0}, {0}, 0.0, false), std::invalid_argument);
  EXPECT_THROW(rank_value({0.1, 0.2}, {1.0}, {0}, 0.0, false), dcr::ShapeError);
  EXPECT_THROW(rank_value({0.1, 0.2}, {1.0, 0.0}, {0, 0}, -0.1, false), std::invalid_argument);
}

TEST(DisjointMask, Examples) {
  EXPECT_EQ(dcr::disjoint_mask(std::vector<int>{0, 0, 1}), (Tensor{{1, 1, 0}, {1, 1, 0}, {0, 0, 1}}));
  EXPECT_EQ(dcr::disjoint_mask(std::vector<int>{2, 2, 2}), Tensor(3, 3, 1.0));
  EXPECT_EQ(dcr::disjoint_mask(std::vector<int>{0, 1, 2, 3}), Tensor::identity(4));
}

TEST(DisjointRanking, Examples) {
  EXPECT_NEAR(rank_value({0.2, 0.5, 0.9}, {1.0, 0.0, 0.5}, {0, 0, 1}, 0.0, true), 0.3, 1e-15);
  EXPECT_EQ(rank_value({0.3, -0.1, 0.7, 0.2}, {1.0, 0.2, 0.5, 0.0}, {3, 3, 3, 3}, 0.05, true),
            rank_value({0.3, -0.1, 0.7, 0.2}, {1.0, 0.2, 0.5, 0.0}, {3, 3, 3, 3}, 0.05, false));
  EXPECT_THROW(rank_value({0.2, 0.5}, {1.0, 0.0}, {0, 1}, 0.0, true), std::invalid_argument);
}

TEST(Ranking, MatchesPairwiseOracle) {
  dcr::Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + rng.below(20);
    std::vector<double> y(n), labels(n);
    std::vector<int> ids(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = rng.normal();
      labels[i] = static_cast<double>(rng.below(5));
      ids[i] = static_cast<int>(rng.below(3));
    }
    const double margin = rng.uniform(0.0, 0.5);
    const double unmasked = oracle::ranking_loss(y, labels, nullptr, margin);
    if (!std::isnan(unmasked)) {
      EXPECT_NEAR(rank_value(y, labels, ids, margin, false), unmasked, 1e-12);
    }
    const double masked = oracle::ranking_loss(y, labels, &ids, margin);
    if (!std::isnan(masked)) {
      EXPECT_NEAR(rank_value(y, labels, ids, margin, true), masked, 1e-12);
    }
  }
}

TEST(Regularizer, Examples) {
  ad::Graph g;
  EXPECT_DOUBLE_EQ(dcr::distribution_regularizer(g.constant(Tensor{{-1.0}, {1.0}})).value().item(), 1.0);
  EXPECT_DOUBLE_EQ(dcr::distribution_regularizer(g.constant(Tensor(8, 1, 0.0))).value().item(), 1.0);
  // (-1, 0, 1): mean 0, sum of squares 2 over N - 1 = 2.
  EXPECT_DOUBLE_EQ(dcr::distribution_regularizer(g.constant(Tensor{{-1.0}, {0.0}, {1.0}})).value().item(), 0.0);
  EXPECT_THROW(dcr::distribution_regularizer(g.constant(Tensor{{1.0}})), std::invalid_argument);
}

TEST(AnnotatorCe, Examples) {
  EXPECT_NEAR(ce_value(Tensor(3, 4, 0.25), {0, 1, 3}), std::log(4.0), 1e-15);
  EXPECT_DOUBLE_EQ(ce_value(Tensor{{1.0, 0.0}, {0.0, 1.0}}, {0, 1}), 0.0);
  EXPECT_NEAR(ce_value(Tensor{{0.5, 0.5}, {0.75, 0.25}}, {0, 1}), -(std::log(0.5) + std::log(0.25)) / 2.0, 1e-15);
  EXPECT_NEAR(-(std::log(0.5) + std::log(0.25)) / 2.0, 1.0397, 1e-4);
  EXPECT_THROW(ce_value(Tensor{{1.0, 0.0}}, {1}), dcr::DomainError);
  EXPECT_THROW(ce_value(Tensor{{0.5, 0.5}}, {2}), std::invalid_argument);
}

TEST(AnnotatorConfusion, IsExactNegation) {
  ad::Graph g;
  const ad::Var p = g.constant(Tensor(2, 4, 0.25));
  EXPECT_NEAR(dcr::annotator_confusion_loss(p, std::vector<int>{0, 2}).value().item(), -std::log(4.0), 1e-15);
  const Tensor q{{0.2, 0.3, 0.5}, {0.6, 0.1, 0.3}};
  EXPECT_EQ(dcr::annotator_confusion_loss(g.constant(q), std::vector<int>{2, 0}).value().item(),
            -dcr::annotator_ce_loss(g.constant(q), std::vector<int>{2, 0}).value().item());
}

TEST(TotalLoss, Combination) {
  dcr::LossReport r;
  r.d_rank = 0.3;
  r.reg = 1.0;
  r.psi = 1.3863;
  r.theta = -1.3863;
  EXPECT_NEAR(dcr::combine(r, dcr::LossWeights{0.2, 0.2, 0.2}), 0.5, 1e-12);
  EXPECT_NEAR(dcr::combine(r, dcr::LossWeights{0.7, 0.0, 0.0}), 0.3 + 0.7, 1e-15);

  ad::Graph g;
  const dcr::Batch b{g.constant(Tensor{{0.2}, {0.5}, {0.9}}), {1.0, 0.0, 0.5}, {0, 0, 1}, 0.0};
  const auto terms = dcr::total_loss(b, g.constant(Tensor(3, 2, 0.5)), dcr::LossWeights{0.4, 0.0, 0.0});
  const auto rep = terms.report();
  EXPECT_DOUBLE_EQ(rep.total, rep.d_rank + 0.4 * rep.reg);
  EXPECT_THROW(dcr::total_loss(b, g.constant(Tensor(3, 2, 0.5)), dcr::LossWeights{-1.0, 0.0, 0.0}),
               std::invalid_argument);
}

TEST(LossGradients, FiniteDifferences) {
  dcr::Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 4 + rng.below(8);
    std::vector<double> labels(n);
    std::vector<int> ids(n);
    Tensor y(n, 1), logits(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = rng.uniform(-1.0, 1.0);
      ids[i] = static_cast<int>(i % 2);
      y[i] = rng.normal();
    }
    for (double& v : logits.values()) v = rng.normal();
    const double margin = 0.1;
    auto rank = [&](bool disjoint) {
      return [&, disjoint](ad::Graph&, const std::vector<ad::Var>& p) {
        const dcr::Batch b{p[0], labels, ids, margin};
        return disjoint ? dcr::disjoint_ranking_loss(b) : dcr::margin_ranking_loss(b);
      };
    };
    for (const oracle::LossBuilder& f : std::vector<oracle::LossBuilder>{
             rank(false), rank(true),
             [](ad::Graph&, const std::vector<ad::Var>& p) { return dcr::distribution_regularizer(p[0]); }}) {
      const auto r = oracle::check_gradients(f, {y});
      EXPECT_LT(r.worst, oracle::kRelTol) << r.where;
    }
    const auto ce = oracle::check_gradients(
        [&](ad::Graph&, const std::vector<ad::Var>& p) {
          return dcr::annotator_confusion_loss(ad::softmax_rows(p[0]), ids);
        },
        {logits});
    EXPECT_LT(ce.worst, oracle::kRelTol) << ce.where;
  }
}
