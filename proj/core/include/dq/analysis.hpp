#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dq/model.hpp"
#include "dq/training.hpp"

namespace dq {

/// Least-squares slope of log(ys) against log(xs).
double loglog_slope(std::span<const double> xs, std::span<const double> ys);

struct AggregationOptions {
  std::vector<Index> in_degrees{4, 16, 64, 256};
  int resamples = 100;
  Index feature_dim = 16;
  Index hidden = 16;
  std::uint64_t seed = 0;
};

/// Statistics of the hub's aggregate for one architecture and in-degree.
struct AggregationRow {
  Arch arch = Arch::gcn;
  Index in_degree = 0;
  std::vector<double> channel_mean;
  std::vector<double> channel_var;
  // Mean over channels of |channel_mean|.
  double magnitude = 0.0;
};

struct AggregationStudy {
  std::vector<AggregationRow> rows;
  std::map<Arch, double> slopes;
  nlohmann::json to_json() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Star graphs with the given hub in-degrees; features drawn U(0, 1) afresh
/// for each resample and passed through the first layer of a randomly
/// initialized FP32 model of each architecture.
AggregationStudy analyze_aggregation(const AggregationOptions& options,
                                     std::span<const Arch> archs = {});

/// Same study through the first layer of an existing model. The model's
/// input width sets the feature width.
AggregationStudy analyze_aggregation(Model& model, const AggregationOptions& options);

/// Running ranges of one aggregate site tracked by a percentile and a
/// min/max observer fed the same stream during a training run.
struct RangeTrace {
  std::vector<float> percentile_max;  // per epoch
  std::vector<float> minmax_max;
  float final_percentile_max = 0.0f;
  float final_minmax_max = 0.0f;
  double ratio() const { return final_percentile_max / final_minmax_max; }
  nlohmann::json to_json() const;
};

RangeTrace trace_aggregate_range(const ModelSpec& spec, const Graph& graph, const TrainConfig& config,
                                 int layer = 0);

}  // namespace dq
