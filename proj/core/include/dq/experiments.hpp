#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dq/training.hpp"

namespace dq {

/// Test accuracy over seeded runs, in percent.
struct SeedSummary {
  std::vector<RunMetrics> runs;  // ordered by seed
  double mean = 0.0;
  double std = 0.0;
  nlohmann::json to_json() const;
};

/// Runs `runs` trainings with seeds base.seed, base.seed + 1, ... and up to
/// `parallel` of them at once. Results do not depend on `parallel`.
/// `on_result` runs on the worker thread that finished the run.
using RunCallback = std::function<void(const TrainConfig& config, TrainResult& result)>;
SeedSummary run_seeds(const ModelSpec& spec, const Graph& graph, const TrainConfig& base, int runs,
                      int parallel = 1, const RunCallback& on_result = {});

/// Mean and sample standard deviation.
std::pair<double, double> mean_std(std::span<const double> values);

struct SteRow {
  SteMode ste = SteMode::vanilla;
  ObserverKind observer = ObserverKind::minmax;
  int bits = 8;
  SeedSummary summary;
};

/// QAT under the four STE/observer combinations of the sensitivity study:
/// {vanilla, grad_clip} x {minmax, momentum}.
std::vector<SteRow> sweep_ste(const ModelSpec& spec, const Graph& graph, const TrainConfig& base, int runs,
                              int parallel = 1);
void write_ste_csv(const std::vector<SteRow>& rows, const std::filesystem::path& path);

struct DegradeRow {
  std::string site;
  SeedSummary summary;
};

/// Retrains with one site kind at 4 bits and every other site at the base
/// width. An empty site list covers every site of the architecture.
std::vector<DegradeRow> degrade(const ModelSpec& spec, const Graph& graph, const TrainConfig& base,
                                std::vector<std::string> sites, int runs, int parallel = 1);
void write_degrade_csv(const std::vector<DegradeRow>& rows, const std::filesystem::path& path);

}  // namespace dq
