#ifndef DCR_EXPERIMENT_HPP
#define DCR_EXPERIMENT_HPP

// Experiment plumbing shared by the CLI and the acceptance suite: method
// presets, single synthetic runs, parameter sweeps and label histograms.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "dcr/annotator_sim.hpp"
#include "dcr/metrics.hpp"
#include "dcr/models.hpp"
#include "dcr/training.hpp"

namespace dcr {

enum class Method {
  kMseBaseline,  // direct regression on annotated labels
  kDcrMinus,     // DCR without the adversarial branch (l2 = l3 = 0)
  kDcr,          // full objective
  kRankOnly,     // unmasked ranking loss in place of the disjoint one
};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::kMseBaseline: return "mse-baseline";
    case Method::kDcrMinus: return "dcr-minus";
    case Method::kDcr: return "dcr";
    case Method::kRankOnly: return "rank-only";
  }
  return "dcr";
}

inline Method parse_method(const std::string& tag) {
  if (tag == "mse-baseline") return Method::kMseBaseline;
  if (tag == "dcr-minus") return Method::kDcrMinus;
  if (tag == "dcr") return Method::kDcr;
  if (tag == "rank-only") return Method::kRankOnly;
  throw std::invalid_argument("unknown method '" + tag +
                              "' (expected mse-baseline, dcr-minus, dcr or rank-only)");
}

/// Applies a method's fixed loss configuration on top of `base`.
inline TrainConfig configure(Method method, TrainConfig base) {
  switch (method) {
    case Method::kDcrMinus:
      base.weights.classifier = 0.0;
      base.weights.confusion = 0.0;
      base.disjoint = true;
      break;
    case Method::kRankOnly:
      base.disjoint = false;
      break;
    case Method::kDcr:
      base.disjoint = true;
      break;
    case Method::kMseBaseline:
      break;
  }
  return base;
}

struct RunResult {
  History history;
  MetricReport metrics;
  DcrModel model;
};

/// Initializes a default-architecture model from the config seed and trains
/// it with `method`. The reported metrics are those of the final epoch on
/// `test`.
inline RunResult run_method(const AnnotatedDataset& train, const AnnotatedDataset& test, Method method,
                            const TrainConfig& base) {
  const TrainConfig config = configure(method, base);
  const std::size_t annotators = std::max(train.annotator_count(), test.annotator_count());
  RunResult out;
  out.model = init_model(default_specs(train.dim(), annotators), seeds::derive(config.seed, seeds::kModel));
  out.history = method == Method::kMseBaseline ? run_baseline_mse(train, test, out.model, config)
                                               : fit(train, test, out.model, config);
  out.metrics = out.history.back().metrics ? *out.history.back().metrics : evaluate(test, out.model);
  return out;
}

inline constexpr double kTrainFraction = 0.8;

/// Generates data from `params`, splits 80/20 and trains. The generation
/// seed also seeds training.
inline RunResult run_synthetic(const GenerationParams& params, Method method, TrainConfig config) {
  config.seed = params.seed;
  const GeneratedDataset data = generate_dataset(params);
  const auto [train, test] = train_test_split(data.dataset, kTrainFraction, params.seed);
  return run_method(train, test, method, config);
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { kNone, kLambda1, kGamma, kAnnotators };

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kNone: return "none";
    case SweepAxis::kLambda1: return "lambda1";
    case SweepAxis::kGamma: return "gamma";
    case SweepAxis::kAnnotators: return "k";
  }
  return "none";
}

inline SweepAxis parse_sweep_axis(const std::string& tag) {
  if (tag == "none") return SweepAxis::kNone;
  if (tag == "lambda1") return SweepAxis::kLambda1;
  if (tag == "gamma") return SweepAxis::kGamma;
  if (tag == "k" || tag == "K") return SweepAxis::kAnnotators;
  throw std::invalid_argument("unknown sweep axis '" + tag + "' (expected lambda1, gamma, k or none)");
}

struct ExperimentSpec {
  GenerationParams data;
  TrainConfig train;
  std::vector<Method> methods{Method::kDcr};
  SweepAxis axis = SweepAxis::kNone;
  std::vector<double> values;          // ignored for kNone
  std::vector<std::uint64_t> seeds{1};
  std::size_t jobs = 1;
};

struct AblationRow {
  SweepAxis axis = SweepAxis::kNone;
  double value = 0.0;
  Method method = Method::kDcr;
  std::uint64_t seed = 0;
  MetricReport metrics;
};

/// Data and training settings of one sweep cell.
inline std::pair<GenerationParams, TrainConfig> sweep_cell(const ExperimentSpec& spec, double value,
                                                           std::uint64_t seed) {
  GenerationParams data = spec.data;
  TrainConfig train = spec.train;
  data.seed = seed;
  switch (spec.axis) {
    case SweepAxis::kLambda1: train.weights.regularizer = value; break;
    case SweepAxis::kGamma: train.margin = value; break;
    case SweepAxis::kAnnotators:
      if (value < 1.0 || value != static_cast<double>(static_cast<std::size_t>(value))) {
        throw std::invalid_argument("sweep: annotator counts must be positive integers");
      }
      data.k = static_cast<std::size_t>(value);
      break;
    case SweepAxis::kNone: break;
  }
  return {data, train};
}

/// Runs every (value, method, seed) cell; rows come back in that nesting
/// order regardless of how many worker threads execute them.
inline std::vector<AblationRow> run_ablation(const ExperimentSpec& spec) {
  const std::vector<double> values = spec.axis == SweepAxis::kNone ? std::vector<double>{0.0} : spec.values;
  if (values.empty()) throw std::invalid_argument("ablation: sweep has no values");
  if (spec.methods.empty()) throw std::invalid_argument("ablation: no methods");
  if (spec.seeds.empty()) throw std::invalid_argument("ablation: no seeds");

  std::vector<AblationRow> rows;
  for (double v : values) {
    for (Method m : spec.methods) {
      for (std::uint64_t s : spec.seeds) rows.push_back({spec.axis, v, m, s, {}});
    }
  }

  std::size_t next = 0;
  std::mutex lock;
  std::exception_ptr failure;
  auto worker = [&] {
    while (true) {
      std::size_t job;
      {
        std::lock_guard guard(lock);
        if (next >= rows.size() || failure) return;
        job = next++;
      }
      try {
        AblationRow& row = rows[job];
        const auto [data, train] = sweep_cell(spec, row.value, row.seed);
        row.metrics = run_synthetic(data, row.method, train).metrics;
      } catch (...) {
        std::lock_guard guard(lock);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(spec.jobs, 1, rows.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return rows;
}

inline void write_ablation_csv(const std::vector<AblationRow>& rows, std::ostream& out) {
  out << "axis,value,method,seed," << kMetricCsvHeader << '\n';
  for (const auto& r : rows) {
    out << to_string(r.axis) << ',' << format_double(r.value) << ',' << to_string(r.method) << ','
        << r.seed << ',' << to_csv_fields(r.metrics) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Per-annotator label histograms

struct LabelHistogram {
  int annotator = 0;
  std::vector<double> edges;          // bins + 1, shared by all annotators
  std::vector<std::size_t> counts;    // bins
};

/// Equal-width histograms over [low, high]; the last bin is closed.
inline std::vector<LabelHistogram> label_histograms(const AnnotatedDataset& ds, std::size_t bins, double low,
                                                    double high) {
  if (bins == 0) throw std::invalid_argument("histogram: need at least one bin");
  if (!(high > low)) throw std::invalid_argument("histogram: empty range");
  std::vector<double> edges(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) {
    edges[b] = low + (high - low) * static_cast<double>(b) / static_cast<double>(bins);
  }
  std::vector<LabelHistogram> out;
  const auto groups = ds.members();
  for (std::size_t a = 0; a < groups.size(); ++a) {
    LabelHistogram h{static_cast<int>(a), edges, std::vector<std::size_t>(bins, 0)};
    for (std::size_t i : groups[a]) {
      const double unit = (ds.labels[i] - low) / (high - low);
      const auto bin = static_cast<std::ptrdiff_t>(std::floor(unit * static_cast<double>(bins)));
      h.counts[static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(bin, 0, static_cast<std::ptrdiff_t>(bins) - 1))]++;
    }
    out.push_back(std::move(h));
  }
  return out;
}

inline void write_histogram_csv(const std::vector<LabelHistogram>& hists, std::ostream& out) {
  out << "annotator,bin,low,high,count\n";
  for (const auto& h : hists) {
    for (std::size_t b = 0; b < h.counts.size(); ++b) {
      out << h.annotator << ',' << b << ',' << format_double(h.edges[b]) << ','
          << format_double(h.edges[b + 1]) << ',' << h.counts[b] << '\n';
    }
  }
}

}  // namespace dcr

#endif  // DCR_EXPERIMENT_HPP
