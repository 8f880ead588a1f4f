#ifndef DCR_METRICS_HPP
#define DCR_METRICS_HPP

// PRA, SROCC and PLCC, computed within each annotator's samples and then
// averaged without weighting.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dcr/annotator_sim.hpp"
#include "dcr/models.hpp"
#include "json.hpp"

namespace dcr {

/// A metric is undefined on the given data (no rankable pairs, zero variance).
class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void check_pair(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(op) + ": length mismatch " + std::to_string(a.size()) +
                                " vs " + std::to_string(b.size()));
  }
  if (a.size() < 2) throw MetricError(std::string(op) + ": needs at least 2 samples");
}

inline int sign(double x) { return (x > 0.0) - (x < 0.0); }

}  // namespace detail

/// Pairwise ranking accuracy over unordered pairs with distinct labels.
/// A tied prediction never counts as correct.
inline double pra(std::span<const double> predictions, std::span<const double> labels) {
  detail::check_pair(predictions, labels, "pra");
  std::size_t pairs = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = i + 1; j < labels.size(); ++j) {
      const int truth = detail::sign(labels[i] - labels[j]);
      if (truth == 0) continue;
      ++pairs;
      if (detail::sign(predictions[i] - predictions[j]) == truth) ++correct;
    }
  }
  if (pairs == 0) throw MetricError("pra: no rankable pairs (all labels tied)");
  return static_cast<double>(correct) / static_cast<double>(pairs);
}

/// 1-based fractional ranks; tied values share the mean of their positions.
inline std::vector<double> fractional_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t start = 0; start < order.size();) {
    std::size_t end = start + 1;
    while (end < order.size() && values[order[end]] == values[order[start]]) ++end;
    const double shared = 0.5 * static_cast<double>(start + 1 + end);
    for (std::size_t p = start; p < end; ++p) ranks[order[p]] = shared;
    start = end;
  }
  return ranks;
}

/// Pearson linear correlation.
inline double plcc(std::span<const double> predictions, std::span<const double> labels) {
  detail::check_pair(predictions, labels, "plcc");
  const double n = static_cast<double>(labels.size());
  const double mu_p = std::accumulate(predictions.begin(), predictions.end(), 0.0) / n;
  const double mu_l = std::accumulate(labels.begin(), labels.end(), 0.0) / n;
  double cov = 0.0, var_p = 0.0, var_l = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double dp = predictions[i] - mu_p;
    const double dl = labels[i] - mu_l;
    cov += dp * dl;
    var_p += dp * dp;
    var_l += dl * dl;
  }
  if (var_p == 0.0 || var_l == 0.0) throw MetricError("plcc: zero variance");
  return std::clamp(cov / (std::sqrt(var_p) * std::sqrt(var_l)), -1.0, 1.0);
}

/// Spearman rank correlation. Without ties this is 1 - 6 sum d^2 / (N (N^2 - 1));
/// with ties, the Pearson correlation of fractional ranks.
inline double srocc(std::span<const double> predictions, std::span<const double> labels) {
  detail::check_pair(predictions, labels, "srocc");
  const auto rp = fractional_ranks(predictions);
  const auto rl = fractional_ranks(labels);
  auto constant = [](const std::vector<double>& r) {
    return std::all_of(r.begin(), r.end(), [&](double v) { return v == r.front(); });
  };
  if (constant(rp) || constant(rl)) throw MetricError("srocc: ranks undefined up to ties (constant input)");

  auto has_ties = [](std::vector<double> r) {
    std::sort(r.begin(), r.end());
    return std::adjacent_find(r.begin(), r.end()) != r.end();
  };
  if (has_ties(rp) || has_ties(rl)) return plcc(rp, rl);

  const double n = static_cast<double>(rp.size());
  double d2 = 0.0;
  for (std::size_t i = 0; i < rp.size(); ++i) d2 += (rp[i] - rl[i]) * (rp[i] - rl[i]);
  return std::clamp(1.0 - 6.0 * d2 / (n * (n * n - 1.0)), -1.0, 1.0);
}

struct AnnotatorMetrics {
  int annotator = 0;
  std::size_t samples = 0;
  double pra = 0.0;
  double srocc = 0.0;
  double plcc = 0.0;
};

struct MetricReport {
  std::vector<AnnotatorMetrics> per_annotator;
  double pra = 0.0;
  double srocc = 0.0;
  double plcc = 0.0;
};

/// Scores `predictions` against the dataset's labels within each annotator.
inline MetricReport evaluate_predictions(const AnnotatedDataset& dataset,
                                         std::span<const double> predictions) {
  if (predictions.size() != dataset.size()) {
    throw std::invalid_argument("evaluate: prediction count does not match dataset size");
  }
  MetricReport report;
  const auto groups = dataset.members();
  for (std::size_t a = 0; a < groups.size(); ++a) {
    if (groups[a].empty()) continue;
    std::vector<double> pred, lab;
    for (std::size_t i : groups[a]) {
      pred.push_back(predictions[i]);
      lab.push_back(dataset.labels[i]);
    }
    AnnotatorMetrics m{static_cast<int>(a), groups[a].size()};
    try {
      m.pra = pra(pred, lab);
      m.srocc = srocc(pred, lab);
      m.plcc = plcc(pred, lab);
    } catch (const std::exception& e) {
      throw MetricError("annotator " + std::to_string(a) + ": " + e.what());
    }
    report.per_annotator.push_back(m);
  }
  if (report.per_annotator.empty()) throw MetricError("evaluate: empty dataset");
  const double count = static_cast<double>(report.per_annotator.size());
  for (const auto& m : report.per_annotator) {
    report.pra += m.pra;
    report.srocc += m.srocc;
    report.plcc += m.plcc;
  }
  report.pra /= count;
  report.srocc /= count;
  report.plcc /= count;
  return report;
}

inline MetricReport evaluate(const AnnotatedDataset& dataset, const DcrModel& model) {
  return evaluate_predictions(dataset, predict(model, dataset.features));
}

inline nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& m : r.per_annotator) {
    per.push_back({{"annotator", m.annotator},
                   {"samples", m.samples},
                   {"pra", m.pra},
                   {"srocc", m.srocc},
                   {"plcc", m.plcc}});
  }
  return {{"pra", r.pra}, {"srocc", r.srocc}, {"plcc", r.plcc}, {"per_annotator", per}};
}

inline MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.pra = j.at("pra").get<double>();
  r.srocc = j.at("srocc").get<double>();
  r.plcc = j.at("plcc").get<double>();
  for (const auto& m : j.at("per_annotator")) {
    r.per_annotator.push_back({m.at("annotator").get<int>(), m.at("samples").get<std::size_t>(),
                               m.at("pra").get<double>(), m.at("srocc").get<double>(),
                               m.at("plcc").get<double>()});
  }
  return r;
}

/// Column order used by every results table.
inline constexpr const char* kMetricCsvHeader = "pra,srocc,plcc";

inline std::string to_csv_fields(const MetricReport& r) {
  return format_double(r.pra) + "," + format_double(r.srocc) + "," + format_double(r.plcc);
}

}  // namespace dcr

#endif  // DCR_METRICS_HPP
