#ifndef DCR_LOSSES_HPP
#define DCR_LOSSES_HPP

// Objective terms of disjoint contrastive regression.
//
//   d-rank     mean over same-annotator ordered pairs of [gamma - C_ij (y_i - y_j)]_+
//   rank       the same without the annotator mask
//   reg        (mean y)^2 + (sum y^2 / (N-1) - 1)^2
//   psi        annotator cross-entropy  -1/N sum_i log p_i[a_i]
//   theta      -psi (confusion)
//   total      d-rank + l1 reg + l2 psi + l3 theta
//
// Pairs are normalized by the number of contributing pairs, not by N, and
// label-tied pairs are excluded.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcr/autodiff.hpp"
#include "dcr/tensor.hpp"

namespace dcr {

/// Predictions on a graph plus the annotation data they are scored against.
struct Batch {
  ad::Var predictions;              // N x 1
  std::vector<double> labels;       // annotated scores
  std::vector<int> annotator_ids;   // in [0, K)
  double margin = 0.0;              // gamma
};

struct LossWeights {
  double regularizer = 0.2;  // lambda1
  double classifier = 0.2;   // lambda2, weight of the annotator cross-entropy
  double confusion = 0.2;    // lambda3, weight of the negated cross-entropy

  void validate() const {
    if (!(regularizer >= 0.0) || !(classifier >= 0.0) || !(confusion >= 0.0)) {
      throw std::invalid_argument("loss weights must be non-negative");
    }
  }
};

/// Scalar values of every term. `mse` is only populated by the regression
/// baseline, which then reports it as `total` as well.
struct LossReport {
  double d_rank = 0.0;
  double reg = 0.0;
  double psi = 0.0;
  double theta = 0.0;
  double mse = 0.0;
  double total = 0.0;

  bool all_finite() const {
    return std::isfinite(d_rank) && std::isfinite(reg) && std::isfinite(psi) &&
           std::isfinite(theta) && std::isfinite(mse) && std::isfinite(total);
  }
};

/// total = d_rank + l1 reg + l2 psi + l3 theta on already-computed values.
inline double combine(const LossReport& terms, const LossWeights& w) {
  return terms.d_rank + w.regularizer * terms.reg + w.classifier * terms.psi +
         w.confusion * terms.theta;
}

/// M_ij = 1 iff samples i and j share an annotator.
inline Tensor disjoint_mask(std::span<const int> annotator_ids) {
  const std::size_t n = annotator_ids.size();
  Tensor mask(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) mask(i, j) = annotator_ids[i] == annotator_ids[j] ? 1.0 : 0.0;
  }
  return mask;
}

namespace detail {

inline std::size_t check_predictions(const Batch& batch, std::string_view op) {
  const Shape& s = batch.predictions.shape();
  if (s.cols != 1) throw ShapeError(std::string(op) + ": predictions must be N x 1, got " + s.str());
  if (batch.labels.size() != s.rows) {
    throw ShapeError(std::string(op) + ": " + std::to_string(batch.labels.size()) +
                     " labels for " + std::to_string(s.rows) + " predictions");
  }
  for (double v : batch.labels) {
    if (!std::isfinite(v)) throw DomainError(std::string(op) + ": non-finite label");
  }
  if (!(batch.margin >= 0.0)) throw std::invalid_argument(std::string(op) + ": margin must be >= 0");
  if (s.rows < 2) throw std::invalid_argument(std::string(op) + ": needs at least 2 samples");
  return s.rows;
}

// Hinge over ordered pairs (i != j, labels differ, mask set), averaged over
// those pairs. A null mask selects every pair.
inline ad::Var pairwise_hinge(const Batch& batch, const Tensor* mask, std::string_view op) {
  const std::size_t n = check_predictions(batch, op);
  const auto& labels = batch.labels;

  Tensor sign(n, n);
  Tensor weight(n, n);
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      sign(i, j) = labels[i] >= labels[j] ? 1.0 : -1.0;
      if (i != j && labels[i] != labels[j] && (mask == nullptr || (*mask)(i, j) != 0.0)) {
        weight(i, j) = 1.0;
        ++pairs;
      }
    }
  }
  if (pairs == 0) throw std::invalid_argument(std::string(op) + ": no rankable pairs");
  for (double& w : weight.values()) w /= static_cast<double>(pairs);

  ad::Graph& g = *batch.predictions.graph();
  const ad::Var row_of_ones = g.constant(Tensor(1, n, 1.0));
  const ad::Var y_i = ad::matmul(batch.predictions, row_of_ones);  // (i, j) -> y_i
  const ad::Var y_j = ad::transpose(y_i);                          // (i, j) -> y_j
  const ad::Var agreement = ad::multiply(g.constant(std::move(sign)), y_i - y_j);
  const ad::Var violation = ad::hinge_clamp(ad::add_scalar(-agreement, batch.margin));
  return ad::sum(ad::multiply(g.constant(std::move(weight)), violation));
}

inline Tensor one_hot(std::span<const int> ids, std::size_t classes, std::string_view op) {
  Tensor out(ids.size(), classes);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= classes) {
      throw std::invalid_argument(std::string(op) + ": annotator id " + std::to_string(ids[i]) +
                                  " outside [0, " + std::to_string(classes) + ")");
    }
    out(i, static_cast<std::size_t>(ids[i])) = 1.0;
  }
  return out;
}

}  // namespace detail

/// Unmasked margin ranking loss over all ordered pairs with distinct labels.
inline ad::Var margin_ranking_loss(const Batch& batch) {
  return detail::pairwise_hinge(batch, nullptr, "margin_ranking_loss");
}

/// Margin ranking loss restricted to pairs labelled by the same annotator.
inline ad::Var disjoint_ranking_loss(const Batch& batch) {
  if (batch.annotator_ids.size() != batch.labels.size()) {
    throw ShapeError("disjoint_ranking_loss: " + std::to_string(batch.annotator_ids.size()) +
                     " annotator ids for " + std::to_string(batch.labels.size()) + " labels");
  }
  const Tensor mask = disjoint_mask(batch.annotator_ids);
  return detail::pairwise_hinge(batch, &mask, "disjoint_ranking_loss");
}

/// Pulls the batch of predictions towards zero mean and unit raw second
/// moment sum(y^2) / (N - 1).
inline ad::Var distribution_regularizer(ad::Var predictions) {
  const Shape& s = predictions.shape();
  if (s.cols != 1) throw ShapeError("distribution_regularizer: predictions must be N x 1, got " + s.str());
  if (s.rows < 2) throw std::invalid_argument("distribution_regularizer: needs at least 2 samples");
  const double n = static_cast<double>(s.rows);
  const ad::Var mean_term = ad::square(ad::mean(predictions));
  const ad::Var spread = ad::scale(ad::sum(ad::square(predictions)), 1.0 / (n - 1.0));
  const ad::Var spread_term = ad::square(ad::add_scalar(spread, -1.0));
  return mean_term + spread_term;
}

/// Cross-entropy of annotator probabilities against one-hot annotator ids.
inline ad::Var annotator_ce_loss(ad::Var probabilities, std::span<const int> annotator_ids) {
  const Shape& s = probabilities.shape();
  if (annotator_ids.size() != s.rows) {
    throw ShapeError("annotator_ce_loss: " + std::to_string(annotator_ids.size()) + " ids for " +
                     s.str() + " probabilities");
  }
  if (s.rows == 0) throw std::invalid_argument("annotator_ce_loss: empty batch");
  ad::Graph& g = *probabilities.graph();
  const ad::Var selector = g.constant(detail::one_hot(annotator_ids, s.cols, "annotator_ce_loss"));
  const ad::Var p_true = ad::matmul(ad::multiply(probabilities, selector), g.constant(Tensor(s.cols, 1, 1.0)));
  return ad::scale(ad::sum(ad::log(p_true)), -1.0 / static_cast<double>(s.rows));
}

/// Exact negation of annotator_ce_loss; minimized by the embedder to make
/// annotators indistinguishable.
inline ad::Var annotator_confusion_loss(ad::Var probabilities, std::span<const int> annotator_ids) {
  return ad::negate(annotator_ce_loss(probabilities, annotator_ids));
}

/// All terms as graph nodes.
struct LossTerms {
  ad::Var d_rank;
  ad::Var reg;
  ad::Var psi;
  ad::Var theta;
  ad::Var total;

  LossReport report() const {
    LossReport r;
    r.d_rank = d_rank.value().item();
    r.reg = reg.value().item();
    r.psi = psi.value().item();
    r.theta = theta.value().item();
    r.total = total.value().item();
    return r;
  }
};

/// Builds every term and their weighted sum on the batch's graph.
///
/// `total` is the value of the combined objective. Differentiating it
/// directly is not the adversarial update: psi and theta share one
/// computation here, so their gradients cancel when l2 == l3. The training
/// module applies the freeze contract instead.
inline LossTerms total_loss(const Batch& batch, ad::Var probabilities, const LossWeights& weights,
                            bool disjoint = true) {
  weights.validate();
  LossTerms t;
  t.d_rank = disjoint ? disjoint_ranking_loss(batch) : margin_ranking_loss(batch);
  t.reg = distribution_regularizer(batch.predictions);
  t.psi = annotator_ce_loss(probabilities, batch.annotator_ids);
  t.theta = ad::negate(t.psi);
  t.total = t.d_rank + weights.regularizer * t.reg + weights.classifier * t.psi +
            weights.confusion * t.theta;
  return t;
}

}  // namespace dcr

#endif  // DCR_LOSSES_HPP
