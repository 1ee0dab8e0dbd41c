#include "dq/analysis.hpp"

#include <cmath>
#include <fstream>

#include "dq/datasets.hpp"
#include "dq/error.hpp"

namespace dq {

double loglog_slope(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) throw ContractError("loglog_slope: need two or more paired points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) throw ContractError("loglog_slope: values must be positive");
    mx += std::log(xs[i]);
    my += std::log(ys[i]);
  }
  mx /= static_cast<double>(xs.size());
  my /= static_cast<double>(xs.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = std::log(xs[i]) - mx;
    sxy += dx * (std::log(ys[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0.0) throw ContractError("loglog_slope: x values are all equal");
  return sxy / sxx;
}

namespace {

AggregationRow study_one(Model& model, Index degree, const AggregationOptions& o, Rng& rng) {
  const Index width = model.spec().in_dim;
  Graph star = gen_synthetic(SyntheticKind::star, degree + 1, 0.0, o.seed, width);
  const PreparedGraph prepared = PreparedGraph::from(star);
  AggregationRow row;
  row.arch = model.spec().arch;
  row.in_degree = degree;
  std::vector<double> sum, sum_sq;
  ForwardOptions fo;
  fo.on_aggregate = [&](int layer, const Tensor& aggr) {
    if (layer != 0) return;
    const float* hub = aggr.row(0);
    if (sum.empty()) {
      sum.assign(aggr.cols(), 0.0);
      sum_sq.assign(aggr.cols(), 0.0);
    }
    for (std::size_t c = 0; c < aggr.cols(); ++c) {
      sum[c] += hub[c];
      sum_sq[c] += static_cast<double>(hub[c]) * hub[c];
    }
  };
  for (int r = 0; r < o.resamples; ++r) {
    Tensor x(static_cast<std::size_t>(degree + 1), static_cast<std::size_t>(width));
    for (float& v : x.data()) v = rng.uniform();
    model.forward(prepared, x, fo);
  }
  const double n = static_cast<double>(o.resamples);
  for (std::size_t c = 0; c < sum.size(); ++c) {
    const double mean = sum[c] / n;
    row.channel_mean.push_back(mean);
    row.channel_var.push_back(std::max(0.0, sum_sq[c] / n - mean * mean));
    row.magnitude += std::fabs(mean);
  }
  if (!sum.empty()) row.magnitude /= static_cast<double>(sum.size());
  return row;
}

void fit_slopes(AggregationStudy& study) {
  std::map<Arch, std::pair<std::vector<double>, std::vector<double>>> points;
  for (const auto& r : study.rows) {
    points[r.arch].first.push_back(static_cast<double>(r.in_degree));
    points[r.arch].second.push_back(r.magnitude);
  }
  for (auto& [arch, p] : points) study.slopes[arch] = loglog_slope(p.first, p.second);
}

}  // namespace

AggregationStudy analyze_aggregation(Model& model, const AggregationOptions& options) {
  if (options.resamples < 1 || options.in_degrees.size() < 2) {
    throw ConfigError("aggregation study: needs resamples >= 1 and two or more in-degrees");
  }
  AggregationStudy study;
  Rng rng(options.seed);
  for (Index d : options.in_degrees) {
    if (d < 1) throw ConfigError("aggregation study: in-degrees must be positive");
    study.rows.push_back(study_one(model, d, options, rng));
  }
  fit_slopes(study);
  return study;
}

AggregationStudy analyze_aggregation(const AggregationOptions& options, std::span<const Arch> archs) {
  static const Arch kAll[] = {Arch::gcn, Arch::gat, Arch::gin};
  if (archs.empty()) archs = kAll;
  AggregationStudy study;
  for (Arch arch : archs) {
    ModelSpec spec;
    spec.arch = arch;
    spec.in_dim = options.feature_dim;
    spec.out_dim = options.hidden;
    spec.hidden = options.hidden;
    spec.heads = 1;
    spec.out_heads = 1;
    spec.num_layers = 1;
    spec.dropout = 0.0f;
    Model model(spec, QuantScheme::fp32(), Rng(options.seed).next_u64());
    auto part = analyze_aggregation(model, options);
    study.rows.insert(study.rows.end(), part.rows.begin(), part.rows.end());
    study.slopes.insert(part.slopes.begin(), part.slopes.end());
  }
  return study;
}

nlohmann::json AggregationStudy::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"arch", to_string(r.arch)},
                      {"in_degree", r.in_degree},
                      {"magnitude", r.magnitude},
                      {"channel_mean", r.channel_mean},
                      {"channel_var", r.channel_var}});
  }
  nlohmann::json slopes_j = nlohmann::json::object();
  for (const auto& [arch, s] : slopes) slopes_j[to_string(arch)] = s;
  return {{"rows", rows_j}, {"slopes", slopes_j}};
}

void AggregationStudy::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << "arch,in_degree,channel,mean,variance\n";
  for (const auto& r : rows) {
    for (std::size_t c = 0; c < r.channel_mean.size(); ++c) {
      out << to_string(r.arch) << ',' << r.in_degree << ',' << c << ',' << r.channel_mean[c] << ','
          << r.channel_var[c] << '\n';
    }
  }
}

nlohmann::json RangeTrace::to_json() const {
  return {{"percentile_max", percentile_max},
          {"minmax_max", minmax_max},
          {"final_percentile_max", final_percentile_max},
          {"final_minmax_max", final_minmax_max},
          {"ratio", ratio()}};
}

RangeTrace trace_aggregate_range(const ModelSpec& spec, const Graph& graph, const TrainConfig& config, int layer) {
  if (layer < 0 || layer >= spec.num_layers) throw ConfigError("range trace: layer index out of range");
  QuantConfig pc;
  pc.observer = ObserverKind::percentile;
  QuantModule percentile(pc);
  QuantModule minmax(QuantConfig{});
  RangeTrace trace;
  TrainHooks hooks;
  hooks.on_aggregate = [&](int l, const Tensor& aggr) {
    if (l != layer) return;
    percentile.observe(aggr.data());
    minmax.observe(aggr.data());
  };
  hooks.on_epoch = [&](const EpochRecord&) {
    trace.percentile_max.push_back(percentile.x_max());
    trace.minmax_max.push_back(minmax.x_max());
    return true;
  };
  train_node_classifier(spec, graph, config, hooks);
  trace.final_percentile_max = percentile.x_max();
  trace.final_minmax_max = minmax.x_max();
  return trace;
}

}  // namespace dq
