#ifndef DCR_TRAINING_HPP
#define DCR_TRAINING_HPP

// SGD training of the DCR objective and of the plain MSE baseline.
//
// Adversarial schedules:
//   alternate  pass A updates the classifier on l2 * CE with the embedder
//              frozen; pass B then updates embedder and head on
//              rank + l1 reg + l3 confusion with the classifier frozen.
//   grl        one backward pass; the classifier branch sees the embedding
//              through a gradient reversal node scaled by l3 / l2, so the
//              embedder receives -l3 dCE/dz while the classifier descends
//              l2 CE.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dcr/annotator_sim.hpp"
#include "dcr/autodiff.hpp"
#include "dcr/losses.hpp"
#include "dcr/metrics.hpp"
#include "dcr/models.hpp"
#include "dcr/random.hpp"
#include "json.hpp"

namespace dcr {

/// Non-finite values appeared during optimization.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AdversarialMode { kAlternate, kGrl };

inline std::string to_string(AdversarialMode m) { return m == AdversarialMode::kGrl ? "grl" : "alternate"; }

inline AdversarialMode parse_adversarial_mode(const std::string& tag) {
  if (tag == "alternate") return AdversarialMode::kAlternate;
  if (tag == "grl") return AdversarialMode::kGrl;
  throw std::invalid_argument("unknown adversarial mode '" + tag + "' (expected alternate or grl)");
}

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double margin = 0.0;                 // gamma
  LossWeights weights;                 // l1, l2, l3
  AdversarialMode mode = AdversarialMode::kAlternate;
  bool disjoint = true;                // false: unmasked ranking loss
  std::uint64_t seed = 1;
  std::size_t eval_interval = 0;       // 0: evaluate after the last epoch only

  void validate() const {
    if (epochs == 0) throw std::invalid_argument("train config: epochs must be >= 1");
    if (batch_size < 4) throw std::invalid_argument("train config: batch size must be >= 4");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train config: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("train config: weight decay must be >= 0");
    if (!(margin >= 0.0)) throw std::invalid_argument("train config: margin must be >= 0");
    weights.validate();
    if (mode == AdversarialMode::kGrl && weights.classifier == 0.0 && weights.confusion > 0.0) {
      throw std::invalid_argument("train config: grl mode needs lambda2 > 0 when lambda3 > 0");
    }
  }
};

// ---------------------------------------------------------------------------
// Optimizer

/// Velocity buffers, one per parameter tensor, zero until the first step.
struct SgdState {
  std::vector<Tensor> velocity;
};

struct OptimizerState {
  SgdState embedder;
  SgdState head;
  SgdState classifier;
};

/// v <- momentum v + grad + weight_decay param;  param <- param - lr v.
inline void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, SgdState& state,
                     const TrainConfig& config, std::string_view context = "gradient") {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: parameter/gradient count mismatch");
  if (state.velocity.empty()) {
    for (const Tensor* p : params) state.velocity.emplace_back(p->rows(), p->cols());
  }
  if (state.velocity.size() != params.size()) throw ShapeError("sgd_step: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || state.velocity[i].shape() != grads[i].shape()) {
      throw ShapeError("sgd_step: shape mismatch " + params[i]->shape().str() + " vs " + grads[i].shape().str());
    }
    if (!grads[i].all_finite()) {
      throw NumericalError("sgd_step: non-finite gradient from " + std::string(context));
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->values();
    auto g = grads[i].values();
    auto v = state.velocity[i].values();
    for (std::size_t e = 0; e < p.size(); ++e) {
      v[e] = config.momentum * v[e] + g[e] + config.weight_decay * p[e];
      p[e] -= config.learning_rate * v[e];
    }
  }
}

// ---------------------------------------------------------------------------
// Batches

namespace detail {

inline bool has_same_annotator_pair(const AnnotatedDataset& ds, std::span<const std::size_t> batch) {
  for (std::size_t a = 0; a < batch.size(); ++a) {
    for (std::size_t b = a + 1; b < batch.size(); ++b) {
      const std::size_t i = batch[a], j = batch[b];
      if (ds.annotator_ids[i] == ds.annotator_ids[j] && ds.labels[i] != ds.labels[j]) return true;
    }
  }
  return false;
}

// Swap one member of `bad` for a same-annotator partner of bad[0] drawn from
// another batch, provided the donor stays valid.
inline bool repair_batch(const AnnotatedDataset& ds, std::vector<std::vector<std::size_t>>& batches,
                         std::size_t bad) {
  auto& target = batches[bad];
  for (std::size_t anchor_pos = 0; anchor_pos < target.size(); ++anchor_pos) {
    const std::size_t anchor = target[anchor_pos];
    const std::size_t victim_pos = anchor_pos + 1 < target.size() ? target.size() - 1 : 0;
    if (victim_pos == anchor_pos) continue;
    for (std::size_t donor = 0; donor < batches.size(); ++donor) {
      if (donor == bad) continue;
      auto& source = batches[donor];
      for (std::size_t t = 0; t < source.size(); ++t) {
        const std::size_t cand = source[t];
        if (ds.annotator_ids[cand] != ds.annotator_ids[anchor] || ds.labels[cand] == ds.labels[anchor]) continue;
        std::swap(source[t], target[victim_pos]);
        if (has_same_annotator_pair(ds, source)) return true;
        std::swap(source[t], target[victim_pos]);
      }
    }
  }
  return false;
}

}  // namespace detail

/// Shuffled mini-batches for one epoch. Every batch holds at least one
/// same-annotator pair with distinct labels; batches lacking one are
/// repaired by swapping samples with other batches. A trailing remainder
/// smaller than 4 samples is merged into the previous batch.
inline std::vector<std::vector<std::size_t>> make_batches(const AnnotatedDataset& ds, std::size_t batch_size,
                                                          std::uint64_t seed, std::size_t epoch) {
  if (batch_size < 4) throw std::invalid_argument("make_batches: batch size must be >= 4");
  const std::size_t n = ds.size();
  if (n < 2) throw std::invalid_argument("make_batches: dataset needs at least 2 samples");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seeds::derive(seeds::derive(seed, seeds::kBatches), epoch));
  rng.shuffle(std::span(order));

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() < 4) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    batches.back().insert(batches.back().end(), tail.begin(), tail.end());
  }
  for (std::size_t b = 0; b < batches.size(); ++b) {
    if (detail::has_same_annotator_pair(ds, batches[b])) continue;
    if (!detail::repair_batch(ds, batches, b)) {
      throw std::invalid_argument("make_batches: cannot form a batch with a same-annotator pair "
                                  "of distinct labels");
    }
  }
  return batches;
}

/// Features, labels and ids of the selected samples.
struct TrainingBatch {
  Tensor features;
  std::vector<double> labels;
  std::vector<int> annotator_ids;
};

inline TrainingBatch gather(const AnnotatedDataset& ds, std::span<const std::size_t> indices) {
  TrainingBatch b{Tensor(indices.size(), ds.dim()), {}, {}};
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    for (std::size_t c = 0; c < ds.dim(); ++c) b.features(r, c) = ds.features(i, c);
    b.labels.push_back(ds.labels[i]);
    b.annotator_ids.push_back(ds.annotator_ids[i]);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Gradient passes

/// Loss values of one pass plus gradients of the sub-networks it trains
/// (empty vectors for frozen ones).
struct PassResult {
  LossReport report;
  std::vector<Tensor> embedder;
  std::vector<Tensor> head;
  std::vector<Tensor> classifier;
};

namespace detail {

inline ad::Var ranking_term(const Batch& batch, const TrainConfig& config) {
  return config.disjoint ? disjoint_ranking_loss(batch) : margin_ranking_loss(batch);
}

}  // namespace detail

/// Pass A: classifier descends l2 * CE on frozen embeddings.
inline PassResult classifier_pass(const DcrModel& model, const TrainingBatch& batch, const TrainConfig& config) {
  ad::Graph g;
  const BoundModel bound = bind(g, model, Trainable{false, false, true});
  const ad::Var z = embed(bound, g.constant(batch.features));
  const ad::Var ce = annotator_ce_loss(classify_annotator(bound, z), batch.annotator_ids);
  g.backward(ad::scale(ce, config.weights.classifier));
  PassResult out;
  out.report.psi = ce.value().item();
  out.report.theta = -out.report.psi;
  out.classifier = gradients(g, bound.classifier);
  return out;
}

/// Pass B: embedder and head descend rank + l1 reg + l3 confusion with the
/// classifier frozen.
inline PassResult representation_pass(const DcrModel& model, const TrainingBatch& batch,
                                      const TrainConfig& config) {
  ad::Graph g;
  const BoundModel bound = bind(g, model, Trainable{true, true, false});
  const ad::Var z = embed(bound, g.constant(batch.features));
  const ad::Var y = predict_score(bound, z);
  const Batch b{y, batch.labels, batch.annotator_ids, config.margin};
  const ad::Var rank = detail::ranking_term(b, config);
  const ad::Var reg = distribution_regularizer(y);
  const ad::Var confusion = annotator_confusion_loss(classify_annotator(bound, z), batch.annotator_ids);
  const ad::Var objective =
      rank + config.weights.regularizer * reg + config.weights.confusion * confusion;
  g.backward(objective);
  PassResult out;
  out.report.d_rank = rank.value().item();
  out.report.reg = reg.value().item();
  out.report.theta = confusion.value().item();
  out.report.psi = -out.report.theta;
  out.report.total = combine(out.report, config.weights);
  out.embedder = gradients(g, bound.embedder);
  out.head = gradients(g, bound.head);
  return out;
}

/// Single pass through a gradient reversal node between embedder and
/// classifier; trains all three sub-networks.
inline PassResult grl_pass(const DcrModel& model, const TrainingBatch& batch, const TrainConfig& config) {
  const LossWeights& w = config.weights;
  if (w.classifier == 0.0 && w.confusion > 0.0) {
    throw std::invalid_argument("grl_pass: lambda2 must be > 0 when lambda3 > 0");
  }
  ad::Graph g;
  const BoundModel bound = bind(g, model);
  const ad::Var z = embed(bound, g.constant(batch.features));
  const ad::Var y = predict_score(bound, z);
  const Batch b{y, batch.labels, batch.annotator_ids, config.margin};
  const ad::Var rank = detail::ranking_term(b, config);
  const ad::Var reg = distribution_regularizer(y);
  const double reversal = w.classifier > 0.0 ? w.confusion / w.classifier : 0.0;
  const ad::Var ce =
      annotator_ce_loss(classify_annotator(bound, ad::gradient_reversal(z, reversal)), batch.annotator_ids);
  g.backward(rank + w.regularizer * reg + w.classifier * ce);
  PassResult out;
  out.report.d_rank = rank.value().item();
  out.report.reg = reg.value().item();
  out.report.psi = ce.value().item();
  out.report.theta = -out.report.psi;
  out.report.total = combine(out.report, w);
  out.embedder = gradients(g, bound.embedder);
  out.head = gradients(g, bound.head);
  out.classifier = gradients(g, bound.classifier);
  return out;
}

/// Regression baseline: mean squared error against the annotated labels.
inline PassResult mse_pass(const DcrModel& model, const TrainingBatch& batch) {
  ad::Graph g;
  const BoundModel bound = bind(g, model, Trainable{true, true, false});
  const ad::Var y = predict_score(bound, embed(bound, g.constant(batch.features)));
  const ad::Var target = g.constant(Tensor::column(batch.labels));
  const ad::Var loss = ad::mean(ad::square(y - target));
  g.backward(loss);
  PassResult out;
  out.report.mse = loss.value().item();
  out.report.total = out.report.mse;
  out.embedder = gradients(g, bound.embedder);
  out.head = gradients(g, bound.head);
  return out;
}

namespace detail {

// Names the first non-finite term so a diverging run says what diverged.
inline std::string describe_failure(const LossReport& r, std::string_view pass) {
  const std::pair<const char*, double> terms[] = {
      {"d-rank", r.d_rank}, {"reg", r.reg}, {"psi", r.psi}, {"theta", r.theta}, {"mse", r.mse}};
  for (const auto& [name, value] : terms) {
    if (!std::isfinite(value)) return std::string(pass) + " (loss term " + name + " is not finite)";
  }
  return std::string(pass);
}

// Runs a gradient pass; a domain error inside it (log of an underflowed
// probability, non-finite root) means training diverged.
template <typename Pass>
PassResult guarded(std::string_view name, Pass pass) {
  try {
    return pass();
  } catch (const DomainError& e) {
    throw NumericalError(std::string(name) + ": " + e.what());
  }
}

inline void apply(Mlp& mlp, const std::vector<Tensor>& grads, SgdState& state, const TrainConfig& config,
                  const std::string& context) {
  const auto params = mlp.parameters();
  sgd_step(params, grads, state, config, context);
}

}  // namespace detail

/// One optimization step of the DCR objective on `batch`. Returns the loss
/// values observed before the update.
inline LossReport train_step(DcrModel& model, OptimizerState& state, const TrainingBatch& batch,
                             const TrainConfig& config) {
  const LossWeights& w = config.weights;
  if (config.mode == AdversarialMode::kGrl) {
    const PassResult r = detail::guarded("grl pass", [&] { return grl_pass(model, batch, config); });
    const std::string ctx = detail::describe_failure(r.report, "grl pass");
    detail::apply(model.embedder, r.embedder, state.embedder, config, ctx);
    detail::apply(model.head, r.head, state.head, config, ctx);
    if (w.classifier > 0.0) detail::apply(model.classifier, r.classifier, state.classifier, config, ctx);
    return r.report;
  }

  LossReport report;
  if (w.classifier > 0.0) {
    const PassResult a =
        detail::guarded("classifier pass", [&] { return classifier_pass(model, batch, config); });
    detail::apply(model.classifier, a.classifier, state.classifier, config,
                  detail::describe_failure(a.report, "classifier pass (psi)"));
    report.psi = a.report.psi;
  }
  const PassResult b =
      detail::guarded("representation pass", [&] { return representation_pass(model, batch, config); });
  const std::string ctx = detail::describe_failure(b.report, "representation pass (d-rank + reg + theta)");
  detail::apply(model.embedder, b.embedder, state.embedder, config, ctx);
  detail::apply(model.head, b.head, state.head, config, ctx);
  report.d_rank = b.report.d_rank;
  report.reg = b.report.reg;
  report.theta = b.report.theta;
  if (w.classifier == 0.0) report.psi = b.report.psi;
  report.total = combine(report, w);
  return report;
}

/// One SGD step of the MSE baseline.
inline LossReport baseline_step(DcrModel& model, OptimizerState& state, const TrainingBatch& batch,
                                const TrainConfig& config) {
  const PassResult r = detail::guarded("mse pass", [&] { return mse_pass(model, batch); });
  const std::string ctx = detail::describe_failure(r.report, "mse pass");
  detail::apply(model.embedder, r.embedder, state.embedder, config, ctx);
  detail::apply(model.head, r.head, state.head, config, ctx);
  return r.report;
}

// ---------------------------------------------------------------------------
// Training loops

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  LossReport loss;        // mean over the epoch's batches
  std::optional<MetricReport> metrics;
};

using History = std::vector<EpochRecord>;

enum class Objective { kDcr, kMse };

namespace detail {

inline History train_loop(const AnnotatedDataset& train, const AnnotatedDataset& test, DcrModel& model,
                          const TrainConfig& config, Objective objective) {
  config.validate();
  train.validate();
  if (train.dim() != model.input_width()) {
    throw ShapeError("fit: dataset has " + std::to_string(train.dim()) + " features, model expects " +
                     std::to_string(model.input_width()));
  }
  if (objective == Objective::kDcr && train.annotator_count() > model.annotator_count()) {
    throw std::invalid_argument("fit: dataset has more annotators than the classifier outputs");
  }
  History history;
  OptimizerState state;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches = make_batches(train, config.batch_size, config.seed, epoch);
    LossReport mean;
    for (const auto& idx : batches) {
      const TrainingBatch batch = gather(train, idx);
      const LossReport r = objective == Objective::kDcr ? train_step(model, state, batch, config)
                                                        : baseline_step(model, state, batch, config);
      mean.d_rank += r.d_rank;
      mean.reg += r.reg;
      mean.psi += r.psi;
      mean.theta += r.theta;
      mean.mse += r.mse;
      mean.total += r.total;
    }
    const double count = static_cast<double>(batches.size());
    mean.d_rank /= count;
    mean.reg /= count;
    mean.psi /= count;
    mean.theta /= count;
    mean.mse /= count;
    mean.total /= count;
    if (!mean.all_finite() || !model.all_finite()) {
      throw NumericalError("fit: non-finite loss or parameter after epoch " + std::to_string(epoch));
    }
    EpochRecord rec{epoch, mean, std::nullopt};
    const bool due = config.eval_interval > 0 && epoch % config.eval_interval == 0;
    if ((due || epoch == config.epochs) && test.size() > 0) rec.metrics = evaluate(test, model);
    history.push_back(std::move(rec));
  }
  return history;
}

}  // namespace detail

/// Trains `model` in place on the DCR objective; evaluates on `test` every
/// eval_interval epochs and after the final epoch.
inline History fit(const AnnotatedDataset& train, const AnnotatedDataset& test, DcrModel& model,
                   const TrainConfig& config) {
  return detail::train_loop(train, test, model, config, Objective::kDcr);
}

/// Same loop with the MSE regression loss; margin and loss weights are unused.
inline History run_baseline_mse(const AnnotatedDataset& train, const AnnotatedDataset& test, DcrModel& model,
                                const TrainConfig& config) {
  return detail::train_loop(train, test, model, config, Objective::kMse);
}

// ---------------------------------------------------------------------------
// History serialization (JSON lines)

inline nlohmann::json to_json(const LossReport& r) {
  return {{"d_rank", r.d_rank}, {"reg", r.reg}, {"psi", r.psi},
          {"theta", r.theta},   {"mse", r.mse}, {"total", r.total}};
}

inline nlohmann::json to_json(const EpochRecord& rec) {
  nlohmann::json j = {{"epoch", rec.epoch}, {"loss", to_json(rec.loss)}};
  j["metrics"] = rec.metrics ? to_json(*rec.metrics) : nlohmann::json(nullptr);
  return j;
}

inline void write_history(const History& history, std::ostream& out) {
  for (const auto& rec : history) out << to_json(rec).dump() << '\n';
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"margin", c.margin},
          {"lambda1", c.weights.regularizer},
          {"lambda2", c.weights.classifier},
          {"lambda3", c.weights.confusion},
          {"adv_mode", to_string(c.mode)},
          {"disjoint", c.disjoint},
          {"seed", c.seed},
          {"eval_interval", c.eval_interval}};
}

}  // namespace dcr

#endif  // DCR_TRAINING_HPP
