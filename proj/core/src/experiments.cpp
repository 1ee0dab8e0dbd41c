#include "dq/experiments.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "dq/error.hpp"

namespace dq {

std::pair<double, double> mean_std(std::span<const double> v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

nlohmann::json SeedSummary::to_json() const {
  nlohmann::json per_seed = nlohmann::json::array();
  for (const auto& r : runs) {
    per_seed.push_back({{"seed", r.seed},
                        {"test_acc", 100.0 * r.test_acc},
                        {"best_epoch", r.best_epoch},
                        {"epochs", r.epochs.size()},
                        {"wall_seconds", r.wall_seconds}});
  }
  return {{"runs", runs.size()}, {"mean", mean}, {"std", std}, {"per_seed", per_seed}};
}

SeedSummary run_seeds(const ModelSpec& spec, const Graph& graph, const TrainConfig& base, int runs, int parallel,
                      const RunCallback& on_result) {
  if (runs < 1) throw ConfigError("runs must be at least 1");
  if (parallel < 1) throw ConfigError("parallel must be at least 1");
  base.validate();
  SeedSummary s;
  s.runs.resize(static_cast<std::size_t>(runs));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (int i = next++; i < runs; i = next++) {
      try {
        TrainConfig c = base;
        c.seed = base.seed + static_cast<std::uint64_t>(i);
        TrainResult r = train_node_classifier(spec, graph, c);
        if (on_result) on_result(c, r);
        s.runs[static_cast<std::size_t>(i)] = std::move(r.metrics);
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = runs;
      }
    }
  };
  const int workers = std::min(parallel, runs);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  std::vector<double> acc;
  for (const auto& r : s.runs) acc.push_back(100.0 * r.test_acc);
  std::tie(s.mean, s.std) = mean_std(acc);
  return s;
}

std::vector<SteRow> sweep_ste(const ModelSpec& spec, const Graph& graph, const TrainConfig& base, int runs,
                              int parallel) {
  if (runs < 5) throw ConfigError("sweep-ste needs at least 5 runs per configuration");
  std::vector<SteRow> rows;
  for (SteMode ste : {SteMode::vanilla, SteMode::grad_clip}) {
    for (ObserverKind obs : {ObserverKind::minmax, ObserverKind::momentum}) {
      TrainConfig c = base;
      c.regime = Regime::qat;
      c.ste = ste;
      c.observer = obs;
      SteRow row;
      row.ste = ste;
      row.observer = obs;
      row.bits = c.bits;
      row.summary = run_seeds(spec, graph, c, runs, parallel);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_ste_csv(const std::vector<SteRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << "ste,observer,bits,mean,std,runs\n";
  for (const auto& r : rows) {
    out << to_string(r.ste) << ',' << to_string(r.observer) << ',' << r.bits << ',' << r.summary.mean << ','
        << r.summary.std << ',' << r.summary.runs.size() << '\n';
  }
}

std::vector<DegradeRow> degrade(const ModelSpec& spec, const Graph& graph, const TrainConfig& base,
                                std::vector<std::string> sites, int runs, int parallel) {
  if (base.regime == Regime::fp32) throw ConfigError("degrade needs a quantized regime");
  if (sites.empty()) {
    for (SiteKind k : sites_for(spec.arch)) sites.push_back(to_string(k));
  }
  std::vector<DegradeRow> rows;
  for (const auto& site : sites) {
    parse_site(site);
    TrainConfig c = base;
    c.bits_override = {{site, 4}};
    rows.push_back({site, run_seeds(spec, graph, c, runs, parallel)});
  }
  return rows;
}

void write_degrade_csv(const std::vector<DegradeRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << "site,bits,mean,std,runs\n";
  for (const auto& r : rows) {
    out << r.site << ",4," << r.summary.mean << ',' << r.summary.std << ',' << r.summary.runs.size() << '\n';
  }
}

}  // namespace dq
