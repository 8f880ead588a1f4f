// Generate a small disjoint-annotator dataset, train DCR and the MSE
// baseline on it, and print the per-annotator test metrics of both.

#include <iostream>

#include "dcr/dcr.hpp"

int main() {
  dcr::GenerationParams params;
  params.n = 800;
  params.k = 4;
  params.seed = 3;

  dcr::TrainConfig config;
  config.epochs = 60;

  const dcr::GeneratedDataset data = dcr::generate_dataset(params);
  const auto [train, test] = dcr::train_test_split(data.dataset, dcr::kTrainFraction, params.seed);

  for (dcr::Method method : {dcr::Method::kMseBaseline, dcr::Method::kDcr}) {
    config.seed = params.seed;
    const dcr::RunResult result = dcr::run_method(train, test, method, config);
    std::cout << dcr::to_string(method) << ": pra " << result.metrics.pra << ", srocc "
              << result.metrics.srocc << ", plcc " << result.metrics.plcc << '\n';
    for (const auto& m : result.metrics.per_annotator) {
      std::cout << "  annotator " << m.annotator << " (" << m.samples << " samples): pra " << m.pra << '\n';
    }
  }
  return 0;
}
