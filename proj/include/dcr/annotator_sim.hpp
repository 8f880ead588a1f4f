#ifndef DCR_ANNOTATOR_SIM_HPP
#define DCR_ANNOTATOR_SIM_HPP

// Synthetic disjoint multi-annotator regression data.
//
// Latent scores y* come from a hidden function of uniform features. The
// samples are partitioned among K annotators; annotator k reports
//
//   label_i = normalize_k(y*_i + b_k + delta_i)
//
// where b_k is a per-annotator mean shift and |delta_i| stays below half the
// smallest gap between distinct y* values of that annotator, so that the
// within-annotator order of labels equals the order of y*. normalize_k maps
// the global extent of the shifted scores onto the annotator's output range;
// sharing the source interval keeps the shifts visible in the labels.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dcr/random.hpp"
#include "dcr/tensor.hpp"
#include "json.hpp"

namespace dcr {

enum class GroundTruth { kLinear, kMlpRandom, kProvided };

inline std::string to_string(GroundTruth g) {
  switch (g) {
    case GroundTruth::kLinear: return "linear";
    case GroundTruth::kMlpRandom: return "mlp-random";
    case GroundTruth::kProvided: return "provided";
  }
  return "linear";
}

inline GroundTruth parse_ground_truth(const std::string& tag) {
  if (tag == "linear") return GroundTruth::kLinear;
  if (tag == "mlp-random") return GroundTruth::kMlpRandom;
  if (tag == "provided") return GroundTruth::kProvided;
  throw std::invalid_argument("unknown ground-truth function '" + tag + "'");
}

struct LatentTask {
  std::size_t dim = 16;
  std::size_t samples = 2000;
  GroundTruth truth = GroundTruth::kMlpRandom;
  double noise = 0.0;                     // sigma of additive Gaussian noise on y*
  std::vector<double> linear_weights;     // kLinear; drawn from the seed when empty
  std::vector<double> provided_scores;    // kProvided
  std::size_t hidden_units = 32;          // kMlpRandom
};

struct Latent {
  Tensor features;                  // samples x dim, i.i.d. U(-1, 1)
  std::vector<double> true_scores;  // y*
};

inline Latent generate_latent(const LatentTask& task, std::uint64_t seed) {
  if (task.dim == 0) throw std::invalid_argument("generate_latent: dim must be >= 1");
  if (!(task.noise >= 0.0)) throw std::invalid_argument("generate_latent: noise must be >= 0");
  const std::size_t n = task.samples;
  const std::size_t d = task.dim;

  Latent out{Tensor(n, d), std::vector<double>(n, 0.0)};
  Rng feature_rng(seeds::derive(seed, seeds::kFeatures));
  for (double& x : out.features.values()) x = feature_rng.uniform(-1.0, 1.0);

  Rng truth_rng(seeds::derive(seed, seeds::kGroundTruth));
  switch (task.truth) {
    case GroundTruth::kLinear: {
      std::vector<double> w = task.linear_weights;
      if (w.empty()) {
        w.resize(d);
        for (double& v : w) v = truth_rng.normal() / std::sqrt(static_cast<double>(d));
      }
      if (w.size() != d) throw std::invalid_argument("generate_latent: linear weights must have length dim");
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += w[j] * out.features(i, j);
        out.true_scores[i] = acc;
      }
      break;
    }
    case GroundTruth::kMlpRandom: {
      // y* = v . tanh(W x + c), one hidden layer of fixed random weights
      const std::size_t h = task.hidden_units;
      Tensor w(d, h);
      std::vector<double> c(h), v(h);
      for (double& x : w.values()) x = truth_rng.normal() / std::sqrt(static_cast<double>(d));
      for (double& x : c) x = 0.5 * truth_rng.normal();
      for (double& x : v) x = truth_rng.normal() / std::sqrt(static_cast<double>(h));
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t u = 0; u < h; ++u) {
          double pre = c[u];
          for (std::size_t j = 0; j < d; ++j) pre += out.features(i, j) * w(j, u);
          acc += v[u] * std::tanh(pre);
        }
        out.true_scores[i] = acc;
      }
      break;
    }
    case GroundTruth::kProvided:
      if (task.provided_scores.size() != n) {
        throw std::invalid_argument("generate_latent: provided scores must have one entry per sample");
      }
      out.true_scores = task.provided_scores;
      break;
  }
  if (task.noise > 0.0) {
    for (double& y : out.true_scores) y += task.noise * truth_rng.normal();
  }
  return out;
}

/// Random near-equal partition of N samples among K annotators.
inline std::vector<int> partition_disjoint(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw std::invalid_argument("partition_disjoint: need at least one annotator");
  if (n < 2 * k) {
    throw std::invalid_argument("partition_disjoint: " + std::to_string(n) +
                                " samples cannot give " + std::to_string(k) +
                                " annotators two samples each");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seeds::derive(seed, seeds::kPartition));
  rng.shuffle(std::span(order));
  std::vector<int> ids(n);
  for (std::size_t p = 0; p < n; ++p) ids[order[p]] = static_cast<int>(p % k);
  return ids;
}

struct AnnotatorProfile {
  int id = 0;
  double shift = 0.0;         // b_k
  double perturbation = 0.0;  // requested epsilon_k, capped per annotator by the rank guarantee
  double low = -1.0;
  double high = 1.0;
};

enum class OutputRange { kPlusMinusOne, kUnit };

inline std::pair<double, double> bounds(OutputRange r) {
  return r == OutputRange::kUnit ? std::pair{0.0, 1.0} : std::pair{-1.0, 1.0};
}

inline std::string to_string(OutputRange r) { return r == OutputRange::kUnit ? "unit" : "pm1"; }

inline OutputRange parse_output_range(const std::string& tag) {
  if (tag == "pm1") return OutputRange::kPlusMinusOne;
  if (tag == "unit") return OutputRange::kUnit;
  throw std::invalid_argument("unknown output range '" + tag + "' (expected pm1 or unit)");
}

/// Shifts b_k ~ U(-s R, s R) and perturbation scale eps R, with R the spread
/// of the true scores.
inline std::vector<AnnotatorProfile> make_profiles(std::size_t k, double shift_scale,
                                                   double perturb_scale, OutputRange range,
                                                   std::span<const double> true_scores,
                                                   std::uint64_t seed) {
  if (!(shift_scale >= 0.0) || !(perturb_scale >= 0.0)) {
    throw std::invalid_argument("make_profiles: shift and perturbation scales must be >= 0");
  }
  double spread = 0.0;
  if (!true_scores.empty()) {
    const auto [lo, hi] = std::minmax_element(true_scores.begin(), true_scores.end());
    spread = *hi - *lo;
  }
  Rng rng(seeds::derive(seed, seeds::kProfiles));
  const auto [low, high] = bounds(range);
  std::vector<AnnotatorProfile> profiles;
  for (std::size_t a = 0; a < k; ++a) {
    const double b = rng.uniform(-shift_scale * spread, shift_scale * spread);
    profiles.push_back({static_cast<int>(a), b, perturb_scale * spread, low, high});
  }
  return profiles;
}

/// Smallest positive difference between values, +inf if there is none.
inline double min_positive_gap(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i < values.size(); ++i) {
    const double diff = values[i] - values[i - 1];
    if (diff > 0.0) gap = std::min(gap, diff);
  }
  return gap;
}

/// Corrupts true scores with per-annotator shifts and order-preserving local
/// perturbations, then maps into each profile's output range.
///
/// Equal true scores within an annotator share one perturbation, so ties are
/// carried through unchanged.
inline std::vector<double> generate_annotations(std::span<const double> true_scores,
                                                std::span<const int> ids,
                                                std::span<const AnnotatorProfile> profiles,
                                                std::uint64_t seed) {
  if (true_scores.size() != ids.size()) {
    throw std::invalid_argument("generate_annotations: scores and ids differ in length");
  }
  std::map<int, const AnnotatorProfile*> by_id;
  for (const auto& p : profiles) {
    if (!(p.perturbation >= 0.0) || !(p.high > p.low)) {
      throw std::invalid_argument("generate_annotations: invalid profile for annotator " +
                                  std::to_string(p.id));
    }
    by_id[p.id] = &p;
  }
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!by_id.contains(ids[i])) {
      throw std::invalid_argument("generate_annotations: no profile for annotator " +
                                  std::to_string(ids[i]));
    }
    members[ids[i]].push_back(i);
  }

  Rng rng(seeds::derive(seed, seeds::kAnnotations));
  std::vector<double> shifted(true_scores.size());
  for (const auto& [id, idx] : members) {
    const AnnotatorProfile& prof = *by_id.at(id);
    std::vector<double> own;
    own.reserve(idx.size());
    for (std::size_t i : idx) own.push_back(true_scores[i]);
    const double eps = std::min(prof.perturbation, 0.49 * min_positive_gap(own));

    std::map<double, double> delta_of;  // one draw per distinct true score
    for (std::size_t i : idx) {
      auto [it, fresh] = delta_of.try_emplace(true_scores[i], 0.0);
      if (fresh && eps > 0.0) it->second = rng.uniform(-eps, eps);
      shifted[i] = true_scores[i] + prof.shift + it->second;
    }
  }

  if (shifted.empty()) return {};
  const auto [lo_it, hi_it] = std::minmax_element(shifted.begin(), shifted.end());
  const double lo = *lo_it;
  const double span = *hi_it - lo;
  std::vector<double> labels(shifted.size());
  for (std::size_t i = 0; i < shifted.size(); ++i) {
    const AnnotatorProfile& prof = *by_id.at(ids[i]);
    const double unit = span > 0.0 ? (shifted[i] - lo) / span : 0.5;
    labels[i] = std::clamp(prof.low + unit * (prof.high - prof.low), prof.low, prof.high);
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Datasets

enum class Split { kAll, kTrain, kTest };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::kAll: return "all";
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
  }
  return "all";
}

struct AnnotatedDataset {
  Tensor features;                    // N x D
  std::vector<int> annotator_ids;     // N
  std::vector<double> labels;         // N, annotated
  std::vector<double> true_scores;    // N, or empty when unknown
  std::vector<std::int64_t> sample_ids;
  Split split = Split::kAll;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  bool has_true_scores() const { return !true_scores.empty(); }

  std::size_t annotator_count() const {
    int top = -1;
    for (int a : annotator_ids) top = std::max(top, a);
    return static_cast<std::size_t>(top + 1);
  }

  /// Sample indices owned by each annotator, indexed by annotator id.
  std::vector<std::vector<std::size_t>> members() const {
    std::vector<std::vector<std::size_t>> out(annotator_count());
    for (std::size_t i = 0; i < size(); ++i) out[static_cast<std::size_t>(annotator_ids[i])].push_back(i);
    return out;
  }

  AnnotatedDataset subset(std::span<const std::size_t> indices, Split tag) const {
    AnnotatedDataset out;
    out.features = Tensor(indices.size(), dim());
    out.split = tag;
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const std::size_t i = indices[r];
      for (std::size_t c = 0; c < dim(); ++c) out.features(r, c) = features(i, c);
      out.annotator_ids.push_back(annotator_ids[i]);
      out.labels.push_back(labels[i]);
      if (has_true_scores()) out.true_scores.push_back(true_scores[i]);
      out.sample_ids.push_back(sample_ids[i]);
    }
    return out;
  }

  /// Throws if the structural invariants do not hold: consistent lengths,
  /// finite values, and every annotator in [0, K) owning at least two samples.
  void validate() const {
    const std::size_t n = size();
    if (features.rows() != n || annotator_ids.size() != n || sample_ids.size() != n ||
        (has_true_scores() && true_scores.size() != n)) {
      throw std::invalid_argument("dataset: column lengths disagree");
    }
    if (!features.all_finite()) throw DomainError("dataset: non-finite feature");
    for (double v : labels) {
      if (!std::isfinite(v)) throw DomainError("dataset: non-finite label");
    }
    for (int a : annotator_ids) {
      if (a < 0) throw std::invalid_argument("dataset: negative annotator id");
    }
    const auto groups = members();
    for (std::size_t a = 0; a < groups.size(); ++a) {
      if (groups[a].size() < 2) {
        throw std::invalid_argument("dataset: annotator " + std::to_string(a) + " owns " +
                                    std::to_string(groups[a].size()) +
                                    " samples, at least 2 required");
      }
    }
  }
};

/// Every knob of the synthetic protocol; also the body of the manifest.
struct GenerationParams {
  std::size_t n = 2000;
  std::size_t dim = 16;
  std::size_t k = 4;
  std::uint64_t seed = 1;
  double shift_scale = 0.5;
  double perturb_scale = 0.05;
  OutputRange range = OutputRange::kPlusMinusOne;
  GroundTruth truth = GroundTruth::kMlpRandom;
  double noise = 0.0;
};

struct GeneratedDataset {
  AnnotatedDataset dataset;
  std::vector<AnnotatorProfile> profiles;
  GenerationParams params;
};

inline GeneratedDataset generate_dataset(const GenerationParams& params) {
  if (params.truth == GroundTruth::kProvided) {
    throw std::invalid_argument("generate_dataset: 'provided' ground truth needs explicit scores");
  }
  if (params.n < params.k) throw std::invalid_argument("generate_dataset: need n >= k");
  LatentTask task;
  task.dim = params.dim;
  task.samples = params.n;
  task.truth = params.truth;
  task.noise = params.noise;
  Latent latent = generate_latent(task, params.seed);

  GeneratedDataset out;
  out.params = params;
  out.dataset.annotator_ids = partition_disjoint(params.n, params.k, params.seed);
  out.profiles = make_profiles(params.k, params.shift_scale, params.perturb_scale, params.range,
                               latent.true_scores, params.seed);
  out.dataset.labels =
      generate_annotations(latent.true_scores, out.dataset.annotator_ids, out.profiles, params.seed);
  out.dataset.features = std::move(latent.features);
  out.dataset.true_scores = std::move(latent.true_scores);
  out.dataset.sample_ids.resize(params.n);
  std::iota(out.dataset.sample_ids.begin(), out.dataset.sample_ids.end(), std::int64_t{0});
  out.dataset.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

inline nlohmann::json params_to_json(const GenerationParams& p) {
  return {{"n", p.n},
          {"dim", p.dim},
          {"k", p.k},
          {"seed", p.seed},
          {"shift_scale", p.shift_scale},
          {"perturb_scale", p.perturb_scale},
          {"range", to_string(p.range)},
          {"ground_truth", to_string(p.truth)},
          {"noise", p.noise}};
}

inline GenerationParams params_from_json(const nlohmann::json& j) {
  GenerationParams p;
  p.n = j.at("n").get<std::size_t>();
  p.dim = j.at("dim").get<std::size_t>();
  p.k = j.at("k").get<std::size_t>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.shift_scale = j.at("shift_scale").get<double>();
  p.perturb_scale = j.at("perturb_scale").get<double>();
  p.range = parse_output_range(j.at("range").get<std::string>());
  p.truth = parse_ground_truth(j.at("ground_truth").get<std::string>());
  p.noise = j.at("noise").get<double>();
  return p;
}

/// Reproducibility record. Everything outside "metadata" is a pure function
/// of the parameters.
inline nlohmann::json make_manifest(const GeneratedDataset& g, const std::string& timestamp = "") {
  nlohmann::json annotators = nlohmann::json::array();
  const auto groups = g.dataset.members();
  for (const auto& p : g.profiles) {
    annotators.push_back({{"id", p.id},
                          {"shift", p.shift},
                          {"perturbation", p.perturbation},
                          {"low", p.low},
                          {"high", p.high},
                          {"samples", groups.at(static_cast<std::size_t>(p.id)).size()}});
  }
  return {{"format", "dcr-dataset-manifest"},
          {"version", 1},
          {"params", params_to_json(g.params)},
          {"annotators", annotators},
          {"metadata", {{"generated_at", timestamp}}}};
}

// ---------------------------------------------------------------------------
// CSV: id,annotator,label[,true_score],f0..f{D-1}

/// Malformed dataset file. `line` is 1-based; 0 when not tied to a line.
class CsvError : public std::runtime_error {
 public:
  CsvError(std::size_t line, const std::string& message)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline void write_csv(const AnnotatedDataset& ds, std::ostream& out) {
  out << "id,annotator,label";
  if (ds.has_true_scores()) out << ",true_score";
  for (std::size_t c = 0; c < ds.dim(); ++c) out << ",f" << c;
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.sample_ids[i] << ',' << ds.annotator_ids[i] << ',' << format_double(ds.labels[i]);
    if (ds.has_true_scores()) out << ',' << format_double(ds.true_scores[i]);
    for (std::size_t c = 0; c < ds.dim(); ++c) out << ',' << format_double(ds.features(i, c));
    out << '\n';
  }
}

inline void save_csv(const AnnotatedDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_csv(ds, out);
}

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view field, std::size_t line, std::string_view column) {
  T value{};
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last || field.empty()) {
    throw CsvError(line, "column '" + std::string(column) + "': non-numeric value '" +
                             std::string(field) + "'");
  }
  return value;
}

}  // namespace detail

inline AnnotatedDataset read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw CsvError(1, "empty file, header expected");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_fields(line);

  for (std::string_view required : {"id", "annotator", "label"}) {
    if (std::find(header.begin(), header.end(), required) == header.end()) {
      throw CsvError(1, "missing column '" + std::string(required) + "'");
    }
  }
  if (header.size() < 3 || header[0] != "id" || header[1] != "annotator" || header[2] != "label") {
    throw CsvError(1, "header must start with id,annotator,label");
  }
  std::size_t first_feature = 3;
  const bool has_truth = header.size() > 3 && header[3] == "true_score";
  if (has_truth) ++first_feature;
  const std::size_t dim = header.size() - first_feature;
  for (std::size_t c = 0; c < dim; ++c) {
    if (header[first_feature + c] != "f" + std::to_string(c)) {
      throw CsvError(1, "expected column 'f" + std::to_string(c) + "', found '" +
                            std::string(header[first_feature + c]) + "'");
    }
  }
  if (dim == 0) throw CsvError(1, "no feature columns (f0..)");

  AnnotatedDataset ds;
  std::vector<double> feats;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_fields(line);
    if (fields.size() != header.size()) {
      throw CsvError(line_no, "expected " + std::to_string(header.size()) + " fields, found " +
                                  std::to_string(fields.size()));
    }
    ds.sample_ids.push_back(detail::parse_number<std::int64_t>(fields[0], line_no, "id"));
    const int annotator = detail::parse_number<int>(fields[1], line_no, "annotator");
    if (annotator < 0) throw CsvError(line_no, "column 'annotator': negative id");
    ds.annotator_ids.push_back(annotator);
    ds.labels.push_back(detail::parse_number<double>(fields[2], line_no, "label"));
    if (has_truth) ds.true_scores.push_back(detail::parse_number<double>(fields[3], line_no, "true_score"));
    for (std::size_t c = 0; c < dim; ++c) {
      const std::string col = "f" + std::to_string(c);
      feats.push_back(detail::parse_number<double>(fields[first_feature + c], line_no, col));
    }
  }
  const std::size_t n = ds.labels.size();
  if (n == 0) throw CsvError(0, "no data rows");
  ds.features = Tensor(n, dim, std::move(feats));

  const auto groups = ds.members();
  for (std::size_t a = 0; a < groups.size(); ++a) {
    if (groups[a].size() < 2) {
      // report the offending row when there is one
      const std::size_t row = groups[a].empty() ? 0 : groups[a].front() + 2;
      throw CsvError(row, "annotator " + std::to_string(a) + " has " +
                              std::to_string(groups[a].size()) + " samples, at least 2 required");
    }
  }
  try {
    ds.validate();
  } catch (const std::exception& e) {
    throw CsvError(0, e.what());
  }
  return ds;
}

inline AnnotatedDataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CsvError(0, "cannot open " + path.string());
  return read_csv(in);
}

// ---------------------------------------------------------------------------
// Split

/// Per-annotator stratified split; both sides keep every annotator and,
/// when it owns at least four samples, at least two of its samples.
inline std::pair<AnnotatedDataset, AnnotatedDataset> train_test_split(const AnnotatedDataset& ds,
                                                                      double fraction,
                                                                      std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("train_test_split: fraction must lie in (0, 1)");
  }
  const auto groups = ds.members();
  Rng rng(seeds::derive(seed, seeds::kSplit));
  std::vector<std::size_t> train, test;
  for (std::size_t a = 0; a < groups.size(); ++a) {
    std::vector<std::size_t> idx = groups[a];
    const std::size_t n = idx.size();
    if (n < 2) {
      throw std::invalid_argument("train_test_split: annotator " + std::to_string(a) + " has " +
                                  std::to_string(n) + " samples, at least 2 required");
    }
    rng.shuffle(std::span(idx));
    auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    const std::size_t keep = n >= 4 ? 2 : 1;
    n_train = std::clamp(n_train, keep, n - keep);
    train.insert(train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.insert(test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {ds.subset(train, Split::kTrain), ds.subset(test, Split::kTest)};
}

}  // namespace dcr

#endif  // DCR_ANNOTATOR_SIM_HPP
