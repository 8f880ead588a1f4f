// dcr: synthetic disjoint-annotation experiments from the command line.
//
//   dcr generate      --n 2000 --k 4 --seed 7 --out data/
//   dcr train         --method dcr --out runs/dcr [--data data/dataset.csv]
//   dcr ablate        --sweep lambda1 --values 0,0.1,0.2,0.3 --out runs/ablation
//   dcr distributions --k 4 --bins 20 --out runs/hist
//
// Exit codes: 0 success, 1 internal or numerical failure, 2 usage or input error.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dcr/dcr.hpp"

namespace fs = std::filesystem;

namespace {

/// Bad paths or unreadable inputs; maps to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataFlags {
  dcr::GenerationParams params;
  std::string range = "pm1";
  std::string truth = "mlp-random";

  void add(CLI::App& app) {
    app.add_option("--n", params.n, "Number of samples")->check(CLI::PositiveNumber);
    app.add_option("--dim", params.dim, "Feature dimension")->check(CLI::PositiveNumber);
    app.add_option("--k", params.k, "Number of annotators")->check(CLI::PositiveNumber);
    app.add_option("--seed", params.seed, "Seed for every random stream");
    app.add_option("--shift-scale", params.shift_scale, "Annotator mean shift, as a fraction of the true-score range");
    app.add_option("--perturb-scale", params.perturb_scale, "Local perturbation, as a fraction of the true-score range");
    app.add_option("--range", range, "Label range")->check(CLI::IsMember({"pm1", "unit"}));
    app.add_option("--truth", truth, "Hidden score function")->check(CLI::IsMember({"linear", "mlp-random"}));
    app.add_option("--noise", params.noise, "Std of Gaussian noise on the true scores");
  }

  dcr::GenerationParams resolve() const {
    dcr::GenerationParams p = params;
    p.range = dcr::parse_output_range(range);
    p.truth = dcr::parse_ground_truth(truth);
    return p;
  }
};

struct TrainFlags {
  dcr::TrainConfig config;
  std::string adv_mode = "alternate";

  void add(CLI::App& app) {
    app.add_option("--epochs", config.epochs, "Training epochs");
    app.add_option("--batch", config.batch_size, "Mini-batch size (>= 4)");
    app.add_option("--lr", config.learning_rate, "SGD learning rate");
    app.add_option("--momentum", config.momentum, "SGD momentum");
    app.add_option("--weight-decay", config.weight_decay, "SGD weight decay");
    app.add_option("--gamma", config.margin, "Ranking margin");
    app.add_option("--lambda1", config.weights.regularizer, "Weight of the batch distribution regularizer");
    app.add_option("--lambda2", config.weights.classifier, "Weight of the annotator cross-entropy");
    app.add_option("--lambda3", config.weights.confusion, "Weight of the annotator confusion loss");
    app.add_option("--adv-mode", adv_mode, "Adversarial schedule")->check(CLI::IsMember({"alternate", "grl"}));
    app.add_option("--eval-interval", config.eval_interval, "Evaluate every N epochs (0: final epoch only)");
  }

  dcr::TrainConfig resolve(std::uint64_t seed) const {
    dcr::TrainConfig c = config;
    c.mode = dcr::parse_adversarial_mode(adv_mode);
    c.seed = seed;
    return c;
  }
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw InputError("cannot create output directory '" + dir + "'");
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  return out;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

dcr::AnnotatedDataset load_dataset(const std::string& path) {
  if (!fs::exists(path)) throw InputError("dataset '" + path + "' does not exist");
  return dcr::load_csv(path);
}

void print_label_stats(const dcr::AnnotatedDataset& ds) {
  std::cout << "annotator,samples,label_mean,label_std,label_min,label_max\n";
  const auto groups = ds.members();
  for (std::size_t a = 0; a < groups.size(); ++a) {
    double sum = 0.0, sq = 0.0, lo = INFINITY, hi = -INFINITY;
    for (std::size_t i : groups[a]) {
      const double v = ds.labels[i];
      sum += v;
      sq += v * v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double n = static_cast<double>(groups[a].size());
    const double mean = sum / n;
    const double sd = std::sqrt(std::max(0.0, sq / n - mean * mean));
    std::cout << a << ',' << groups[a].size() << ',' << mean << ',' << sd << ',' << lo << ',' << hi << '\n';
  }
}

int cmd_generate(const DataFlags& flags, const std::string& manifest_in, const std::string& out_dir) {
  dcr::GenerationParams params = flags.resolve();
  if (!manifest_in.empty()) {
    std::ifstream in(manifest_in);
    if (!in) throw InputError("cannot read manifest '" + manifest_in + "'");
    params = dcr::params_from_json(nlohmann::json::parse(in).at("params"));
  }
  const dcr::GeneratedDataset g = dcr::generate_dataset(params);
  ensure_dir(out_dir);
  {
    auto out = open_out(fs::path(out_dir) / "dataset.csv");
    dcr::write_csv(g.dataset, out);
  }
  {
    auto out = open_out(fs::path(out_dir) / "manifest.json");
    out << dcr::make_manifest(g, utc_timestamp()).dump(2) << '\n';
  }
  print_label_stats(g.dataset);
  return 0;
}

int cmd_train(const DataFlags& data_flags, const TrainFlags& train_flags, const std::string& method_tag,
              const std::string& data_path, const std::string& out_dir) {
  const dcr::Method method = dcr::parse_method(method_tag);
  const dcr::GenerationParams params = data_flags.resolve();
  const dcr::TrainConfig config = train_flags.resolve(params.seed);

  dcr::AnnotatedDataset full =
      data_path.empty() ? dcr::generate_dataset(params).dataset : load_dataset(data_path);
  const auto [train, test] = dcr::train_test_split(full, dcr::kTrainFraction, params.seed);
  const dcr::RunResult result = dcr::run_method(train, test, method, config);

  ensure_dir(out_dir);
  {
    auto out = open_out(fs::path(out_dir) / "history.jsonl");
    dcr::write_history(result.history, out);
  }
  dcr::save_checkpoint(result.model, fs::path(out_dir) / "checkpoint.json");
  {
    auto out = open_out(fs::path(out_dir) / "metrics.json");
    out << dcr::to_json(result.metrics).dump(2) << '\n';
  }
  {
    nlohmann::json run = {{"method", dcr::to_string(method)},
                          {"train", dcr::to_json(dcr::configure(method, config))},
                          {"data", data_path.empty() ? dcr::params_to_json(params) : nlohmann::json(data_path)}};
    auto out = open_out(fs::path(out_dir) / "run.json");
    out << run.dump(2) << '\n';
  }
  std::cout << "method," << dcr::kMetricCsvHeader << '\n'
            << dcr::to_string(method) << ',' << dcr::to_csv_fields(result.metrics) << '\n';
  return 0;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw std::invalid_argument(std::string("invalid ") + what + " '" + item + "'");
    out.push_back(v);
  }
  return out;
}

int cmd_ablate(const DataFlags& data_flags, const TrainFlags& train_flags, const std::string& sweep,
               const std::string& values, const std::string& methods, const std::string& seeds_text,
               std::size_t jobs, const std::string& out_dir) {
  dcr::ExperimentSpec spec;
  spec.data = data_flags.resolve();
  spec.train = train_flags.resolve(spec.data.seed);
  spec.axis = dcr::parse_sweep_axis(sweep);
  spec.values = parse_list<double>(values, "sweep value");
  spec.methods.clear();
  std::stringstream ms(methods);
  for (std::string m; std::getline(ms, m, ',');) {
    if (!m.empty()) spec.methods.push_back(dcr::parse_method(m));
  }
  spec.seeds = seeds_text.empty() ? std::vector<std::uint64_t>{spec.data.seed}
                                  : parse_list<std::uint64_t>(seeds_text, "seed");
  spec.jobs = jobs;
  if (spec.axis != dcr::SweepAxis::kNone && spec.values.empty()) {
    throw std::invalid_argument("--values is required for a sweep");
  }

  const auto rows = dcr::run_ablation(spec);
  ensure_dir(out_dir);
  {
    auto out = open_out(fs::path(out_dir) / "ablation.csv");
    dcr::write_ablation_csv(rows, out);
  }
  dcr::write_ablation_csv(rows, std::cout);
  return 0;
}

int cmd_distributions(const DataFlags& flags, const std::string& data_path, std::size_t bins,
                      const std::string& out_dir) {
  const dcr::GenerationParams params = flags.resolve();
  double low = 0.0, high = 0.0;
  dcr::AnnotatedDataset ds;
  if (data_path.empty()) {
    ds = dcr::generate_dataset(params).dataset;
    std::tie(low, high) = dcr::bounds(params.range);
  } else {
    ds = load_dataset(data_path);
    const auto [lo, hi] = std::minmax_element(ds.labels.begin(), ds.labels.end());
    low = *lo;
    high = *hi > *lo ? *hi : *lo + 1.0;
  }
  const auto hists = dcr::label_histograms(ds, bins, low, high);
  ensure_dir(out_dir);
  auto out = open_out(fs::path(out_dir) / "histograms.csv");
  dcr::write_histogram_csv(hists, out);
  dcr::write_histogram_csv(hists, std::cout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disjoint contrastive regression on synthetic multi-annotator data"};
  app.require_subcommand(1);

  DataFlags data_flags;
  TrainFlags train_flags;
  std::string out_dir;
  std::string data_path;
  std::string manifest;
  std::string method = "dcr";
  std::string sweep = "none";
  std::string values;
  std::string methods = "dcr";
  std::string seeds;
  std::size_t jobs = 1;
  std::size_t bins = 20;

  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset and its manifest");
  data_flags.add(*generate);
  generate->add_option("--manifest", manifest, "Regenerate from an existing manifest");
  generate->add_option("--out", out_dir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train one method and write history, checkpoint and metrics");
  data_flags.add(*train);
  train_flags.add(*train);
  train->add_option("--method", method, "mse-baseline | dcr-minus | dcr | rank-only");
  train->add_option("--data", data_path, "Dataset CSV (default: generate from the data flags)");
  train->add_option("--out", out_dir, "Output directory")->required();

  auto* ablate = app.add_subcommand("ablate", "Sweep one setting across methods and seeds");
  data_flags.add(*ablate);
  train_flags.add(*ablate);
  ablate->add_option("--sweep", sweep, "lambda1 | gamma | k | none");
  ablate->add_option("--values", values, "Comma-separated sweep values");
  ablate->add_option("--methods", methods, "Comma-separated methods");
  ablate->add_option("--seeds", seeds, "Comma-separated seeds (default: --seed)");
  ablate->add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  ablate->add_option("--out", out_dir, "Output directory")->required();

  auto* dist = app.add_subcommand("distributions", "Per-annotator label histograms");
  data_flags.add(*dist);
  dist->add_option("--data", data_path, "Dataset CSV (default: generate from the data flags)");
  dist->add_option("--bins", bins, "Number of bins")->check(CLI::PositiveNumber);
  dist->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (generate->parsed()) return cmd_generate(data_flags, manifest, out_dir);
    if (train->parsed()) return cmd_train(data_flags, train_flags, method, data_path, out_dir);
    if (ablate->parsed()) {
      return cmd_ablate(data_flags, train_flags, sweep, values, methods, seeds, jobs, out_dir);
    }
    if (dist->parsed()) return cmd_distributions(data_flags, data_path, bins, out_dir);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const dcr::CsvError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
