// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dcr/dcr.hpp"
#include "oracles.hpp"

namespace ad = dcr::ad;
using dcr::Tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!out.pass) ++failures;
  std::printf("%s criterion %d: %s -- %s [%.1f s]\n", out.pass ? "PASS" : "FAIL", id, name.c_str(),
              out.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

// Random batch of predictions, labels and ids with at least one rankable
// same-annotator pair.
struct RandomBatch {
  Tensor predictions;
  Tensor logits;
  std::vector<double> labels;
  std::vector<int> ids;
  double margin = 0.0;
};

RandomBatch random_batch(dcr::Rng& rng, std::size_t k, bool single_annotator) {
  while (true) {
    RandomBatch b;
    const std::size_t n = 4 + rng.below(13);
    b.predictions = Tensor(n, 1);
    b.logits = Tensor(n, k);
    for (std::size_t i = 0; i < n; ++i) {
      b.predictions[i] = rng.normal();
      b.labels.push_back(rng.below(4) == 0 ? 0.5 : rng.uniform(-1.0, 1.0));
      b.ids.push_back(single_annotator ? 0 : static_cast<int>(rng.below(k)));
    }
    for (double& v : b.logits.values()) v = 2.0 * rng.normal();
    b.margin = rng.below(2) == 0 ? 0.0 : rng.uniform(0.0, 0.3);
    bool rankable = false;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        rankable = rankable || (b.ids[i] == b.ids[j] && b.labels[i] != b.labels[j]);
      }
    }
    if (rankable) return b;
  }
}

Outcome gradient_check() {
  dcr::Rng rng(101);
  const dcr::LossWeights weights{0.3, 0.2, 0.25};
  const std::vector<std::string> names{"margin-rank", "disjoint-rank", "regularizer",
                                       "annotator-ce", "confusion", "total"};
  double worst = 0.0;
  std::string where;
  for (int trial = 0; trial < 100; ++trial) {
    const RandomBatch rb = random_batch(rng, 4, false);
    const std::vector<oracle::LossBuilder> terms{
        [&](ad::Graph&, const std::vector<ad::Var>& p) {
          return dcr::margin_ranking_loss({p[0], rb.labels, rb.ids, rb.margin});
        },
        [&](ad::Graph&, const std::vector<ad::Var>& p) {
          return dcr::disjoint_ranking_loss({p[0], rb.labels, rb.ids, rb.margin});
        },
        [&](ad::Graph&, const std::vector<ad::Var>& p) { return dcr::distribution_regularizer(p[0]); },
        [&](ad::Graph&, const std::vector<ad::Var>& p) {
          return dcr::annotator_ce_loss(ad::softmax_rows(p[1]), rb.ids);
        },
        [&](ad::Graph&, const std::vector<ad::Var>& p) {
          return dcr::annotator_confusion_loss(ad::softmax_rows(p[1]), rb.ids);
        },
        [&](ad::Graph&, const std::vector<ad::Var>& p) {
          return dcr::total_loss({p[0], rb.labels, rb.ids, rb.margin}, ad::softmax_rows(p[1]), weights).total;
        },
    };
    for (std::size_t t = 0; t < terms.size(); ++t) {
      const auto r = oracle::check_gradients(terms[t], {rb.predictions, rb.logits});
      if (r.worst > worst) {
        worst = r.worst;
        where = names[t] + " batch " + std::to_string(trial) + " " + r.where;
      }
    }
  }
  return {worst < oracle::kRelTol, "6 terms x 100 batches, worst relative error " + fmt("%.2e", worst) +
                                       (worst < oracle::kRelTol ? "" : " at " + where)};
}

Outcome metric_oracles() {
  dcr::Rng rng(202);
  double worst = 0.0;
  int fixtures = 0, tied = 0;
  while (fixtures < 1000) {
    const std::size_t n = 2 + rng.below(49);
    const bool ties = fixtures % 2 == 0;
    std::vector<double> p(n), l(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = ties ? static_cast<double>(rng.below(n / 2 + 2)) : rng.normal();
      l[i] = ties ? static_cast<double>(rng.below(n / 2 + 2)) : rng.normal();
    }
    auto constant = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    };
    if (constant(p) || constant(l)) continue;
    ++fixtures;
    if (ties) ++tied;
    worst = std::max(worst, std::abs(dcr::pra(p, l) - oracle::pra(p, l)));
    worst = std::max(worst, std::abs(dcr::srocc(p, l) - oracle::spearman(p, l)));
    worst = std::max(worst, std::abs(dcr::plcc(p, l) - oracle::pearson(p, l)));
  }
  return {worst <= 1e-9, std::to_string(fixtures) + " fixtures (" + std::to_string(tied) +
                             " with ties), worst deviation " + fmt("%.2e", worst)};
}

Outcome degeneracy() {
  dcr::Rng rng(303);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const RandomBatch rb = random_batch(rng, 1, true);
    ad::Graph g;
    const dcr::Batch b{g.constant(rb.predictions), rb.labels, rb.ids, rb.margin};
    worst = std::max(worst, std::abs(dcr::disjoint_ranking_loss(b).value().item() -
                                     dcr::margin_ranking_loss(b).value().item()));
  }
  return {worst <= 1e-15, "100 single-annotator batches, max |disjoint - unmasked| = " + fmt("%.1e", worst)};
}

Outcome grl_equivalence() {
  dcr::GenerationParams params;
  params.seed = 404;
  const auto ds = dcr::generate_dataset(params).dataset;
  dcr::TrainConfig config;
  config.weights = {0.2, 0.3, 0.3};
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto model = dcr::init_model(dcr::default_specs(ds.dim(), params.k), 1000 + s);
    const auto idx = dcr::make_batches(ds, config.batch_size, s, 1).front();
    const auto batch = dcr::gather(ds, idx);
    const auto grl = dcr::grl_pass(model, batch, config);
    const auto alt = dcr::representation_pass(model, batch, config);
    for (std::size_t t = 0; t < grl.embedder.size(); ++t) {
      for (std::size_t e = 0; e < grl.embedder[t].size(); ++e) {
        worst = std::max(worst, std::abs(grl.embedder[t][e] - alt.embedder[t][e]));
      }
    }
  }
  return {worst <= 1e-10, "50 batches at lambda2 = lambda3, max embedder gradient difference " + fmt("%.1e", worst)};
}

// Synthetic runs shared by criteria 5-8 and 10.
struct Runs {
  std::map<std::string, std::map<std::uint64_t, dcr::RunResult>> by_name;
  std::map<std::string, double> seconds;
};

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

dcr::RunResult synthetic(const std::string& variant, std::uint64_t seed) {
  dcr::GenerationParams params;  // N = 2000, D = 16, K = 4, shift scale 0.5
  params.seed = seed;
  dcr::TrainConfig config;
  dcr::Method method = dcr::Method::kDcr;
  if (variant == "rank-only") method = dcr::Method::kRankOnly;
  if (variant == "mse-baseline") method = dcr::Method::kMseBaseline;
  if (variant == "dcr lambda1=0") config.weights.regularizer = 0.0;
  if (variant == "dcr lambda1=0.1") config.weights.regularizer = 0.1;
  if (variant == "dcr K=1") params.k = 1;
  return dcr::run_synthetic(params, method, config);
}

Runs& runs() {
  static Runs r;
  return r;
}

const dcr::RunResult& get(const std::string& variant, std::uint64_t seed) {
  auto& slot = runs().by_name[variant];
  if (!slot.contains(seed)) {
    const auto start = std::chrono::steady_clock::now();
    slot.emplace(seed, synthetic(variant, seed));
    runs().seconds[variant] += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
  return slot.at(seed);
}

std::string pra_list(const std::string& variant) {
  std::string out = variant + " PRA";
  for (auto s : kSeeds) out += fmt(" %.3f", get(variant, s).metrics.pra);
  return out;
}

Outcome disjoint_vs_unmasked() {
  bool ok = true;
  for (auto s : kSeeds) ok = ok && get("dcr", s).metrics.pra - get("rank-only", s).metrics.pra >= 0.05;
  const double secs = runs().seconds["dcr"] + runs().seconds["rank-only"];
  ok = ok && secs < 600.0;
  return {ok, pra_list("dcr") + "; " + pra_list("rank-only") + "; need >= 0.05 per seed, training " +
                  fmt("%.0f s", secs) + " (< 600 s)"};
}

Outcome collapse() {
  bool ok = true;
  for (auto s : kSeeds) {
    const double off = get("dcr lambda1=0", s).metrics.pra;
    const double on = get("dcr lambda1=0.1", s).metrics.pra;
    ok = ok && off < 0.70 && on >= 0.85 && on - off >= 0.15;
  }
  return {ok, pra_list("dcr lambda1=0") + "; " + pra_list("dcr lambda1=0.1") +
                  "; need < 0.70, >= 0.85 and a gap >= 0.15 per seed"};
}

Outcome baseline_gap() {
  bool ok = true;
  for (auto s : kSeeds) ok = ok && get("dcr", s).metrics.pra - get("mse-baseline", s).metrics.pra >= 0.10;
  return {ok, pra_list("dcr") + "; " + pra_list("mse-baseline") + "; need >= 0.10 per seed"};
}

Outcome annotator_count() {
  double k4 = 0.0, k1 = 0.0;
  for (auto s : kSeeds) {
    k4 += get("dcr", s).metrics.pra / static_cast<double>(kSeeds.size());
    k1 += get("dcr K=1", s).metrics.pra / static_cast<double>(kSeeds.size());
  }
  return {std::abs(k4 - k1) <= 0.05,
          "mean PRA K=4 " + fmt("%.3f", k4) + ", K=1 " + fmt("%.3f", k1) + "; need |diff| <= 0.05"};
}

Outcome simulator_guarantee() {
  std::size_t checked = 0, violations = 0, cross = 0;
  for (std::uint64_t seed = 1; checked < 100000; ++seed) {
    dcr::GenerationParams params;
    params.seed = seed;
    const auto ds = dcr::generate_dataset(params).dataset;
    const auto groups = ds.members();
    dcr::Rng rng(seed * 7919);
    auto sign = [](double x) { return (x > 0.0) - (x < 0.0); };
    for (int draw = 0; draw < 50000 && checked < 100000; ++draw) {
      const auto& g = groups[rng.below(groups.size())];
      const std::size_t i = g[rng.below(g.size())], j = g[rng.below(g.size())];
      if (ds.true_scores[i] == ds.true_scores[j]) continue;
      ++checked;
      if (sign(ds.labels[i] - ds.labels[j]) != sign(ds.true_scores[i] - ds.true_scores[j])) ++violations;
    }
    for (std::size_t i = 0; i < ds.size(); ++i) {
      for (std::size_t j = i + 1; j < ds.size(); ++j) {
        if (ds.annotator_ids[i] != ds.annotator_ids[j] &&
            sign(ds.labels[i] - ds.labels[j]) != sign(ds.true_scores[i] - ds.true_scores[j])) {
          ++cross;
        }
      }
    }
  }
  return {violations == 0 && cross > 0, std::to_string(checked) + " same-annotator pairs, " +
                                            std::to_string(violations) + " violations; " +
                                            std::to_string(cross) + " cross-annotator violations"};
}

Outcome determinism() {
  bool ok = true;
  std::string detail;
  for (const std::string variant : {"dcr", "mse-baseline"}) {
    const std::string first = dcr::to_json(get(variant, 1).metrics).dump();
    const std::string again = dcr::to_json(synthetic(variant, 1).metrics).dump();
    ok = ok && first == again;
    detail += variant + (first == again ? " identical" : " differs") + "; ";
  }
  return {ok, detail + "seed 1 rerun compared byte for byte"};
}

}  // namespace

int main() {
  report(1, "finite-difference gradients of every loss term", [] {
    const auto start = std::chrono::steady_clock::now();
    Outcome o = gradient_check();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs >= 30.0) o = {false, o.detail + ", too slow"};
    return o;
  });
  report(2, "PRA/SROCC/PLCC match brute-force oracles", [] {
    const auto start = std::chrono::steady_clock::now();
    Outcome o = metric_oracles();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs >= 10.0) o = {false, o.detail + ", too slow"};
    return o;
  });
  report(3, "disjoint loss equals unmasked loss on single-annotator batches", degeneracy);
  report(4, "gradient reversal matches the alternating update", grl_equivalence);
  report(5, "disjoint ranking beats unmasked ranking", disjoint_vs_unmasked);
  report(6, "distribution regularizer prevents collapse", collapse);
  report(7, "DCR beats the MSE baseline", baseline_gap);
  report(8, "four annotators within 5 points of one", annotator_count);
  report(9, "simulator preserves within-annotator ranks and breaks cross-annotator ones", simulator_guarantee);
  report(10, "repeated runs give identical metric JSON", determinism);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
