#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dq/analysis.hpp"
#include "dq/checkpoint.hpp"
#include "dq/datasets.hpp"
#include "dq/error.hpp"
#include "dq/experiments.hpp"
#include "dq/int_inference.hpp"
#include "dq/training.hpp"
#include "dq/version.hpp"

namespace fs = std::filesystem;
using dq::TrainConfig;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kUsage = 2, kNumeric = 3, kUnavailable = 4 };

struct Common {
  std::string dataset = "citation-like";
  std::string arch = "gcn";
  std::optional<std::string> regime;
  std::optional<int> bits;
  std::optional<std::string> ste;
  std::optional<std::string> observer;
  std::optional<float> p_min;
  std::optional<float> p_max;
  std::optional<float> noise_rate;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> patience;
  std::optional<float> lr;
  std::optional<std::string> ablation;
  std::optional<int> hidden;
  std::optional<int> layers;
  bool shared_mask = false;
  std::optional<int> runs;
  int parallel = 1;
  std::string out = ".";
  std::string config;
  std::string checkpoint;
};

void add_train_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--dataset", c.dataset, "cora, citeseer, citation-like, or a graph/corpus JSON file");
  cmd->add_option("--arch", c.arch, "gcn | gat | gin");
  cmd->add_option("--regime", c.regime, "fp32 | qat | nqat | dq");
  cmd->add_option("--bits", c.bits, "4 | 8");
  cmd->add_option("--ste", c.ste, "vanilla | grad_clip");
  cmd->add_option("--observer", c.observer, "minmax | momentum | percentile");
  cmd->add_option("--p-min", c.p_min, "lowest protection probability");
  cmd->add_option("--p-max", c.p_max, "highest protection probability");
  cmd->add_option("--noise-rate", c.noise_rate, "fraction of weights quantized per step (nqat)");
  cmd->add_option("--seed", c.seed, "base seed; run k uses seed + k");
  cmd->add_option("--epochs", c.epochs, "maximum epochs");
  cmd->add_option("--patience", c.patience, "early-stopping patience");
  cmd->add_option("--lr", c.lr, "learning rate");
  cmd->add_option("--ablation", c.ablation, "none | masking_only | percentile_only");
  cmd->add_option("--hidden", c.hidden, "hidden width (per head for GAT)");
  cmd->add_option("--layers", c.layers, "number of message-passing layers");
  cmd->add_flag("--shared-mask", c.shared_mask, "one protection mask per step for all layers");
  cmd->add_option("--runs", c.runs, "number of seeded runs");
  cmd->add_option("--parallel", c.parallel, "runs executed at once")->check(CLI::PositiveNumber);
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_option("--config", c.config, "JSON file with TrainConfig fields");
}

TrainConfig make_config(const Common& c) {
  TrainConfig t;
  if (!c.config.empty()) t = dq::load_train_config(c.config);
  if (c.regime) t.regime = dq::parse_regime(*c.regime);
  if (c.bits) t.bits = *c.bits;
  if (c.ste) t.ste = dq::parse_ste(*c.ste);
  if (c.observer) t.observer = dq::parse_observer(*c.observer);
  if (c.p_min) t.p_min = *c.p_min;
  if (c.p_max) t.p_max = *c.p_max;
  if (c.noise_rate) t.noise_rate = *c.noise_rate;
  if (c.seed) t.seed = *c.seed;
  if (c.epochs) t.epochs = *c.epochs;
  if (c.patience) t.patience = *c.patience;
  if (c.lr) t.lr = *c.lr;
  if (c.ablation) t.ablation = dq::parse_ablation(*c.ablation);
  if (c.shared_mask) t.shared_mask = true;
  t.validate();
  return t;
}

struct Dataset {
  std::string name;
  dq::Graph graph;
  std::vector<dq::Graph> corpus;
  bool graph_level = false;
};

std::string lower_case(std::string s) {
  for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

Dataset load_dataset(const std::string& name) {
  Dataset d;
  d.name = name;
  const std::string key = lower_case(name);
  if (key == "cora" || key == "citeseer") {
    d.graph = dq::load_citation_dataset(key);
  } else if (key == "citation-like") {
    d.graph = dq::gen_citation_like({}, 0);
  } else if (fs::exists(name)) {
    std::ifstream in(name);
    const json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) throw dq::LoadError("cannot parse " + name);
    if (doc.contains("graphs")) {
      d.corpus = dq::load_corpus(name);
      d.graph_level = true;
    } else {
      d.graph = dq::graph_from_json(doc);
    }
  } else {
    throw dq::ConfigError("unknown dataset '" + name + "'");
  }
  return d;
}

dq::ModelSpec make_spec(const Common& c, const Dataset& d) {
  const dq::Arch arch = dq::parse_arch(c.arch);
  dq::ModelSpec s;
  if (d.graph_level) {
    if (d.corpus.empty()) throw dq::LoadError("corpus is empty");
    dq::Index classes = 0;
    for (const auto& g : d.corpus) classes = std::max(classes, g.graph_label + 1);
    s.arch = arch;
    s.in_dim = static_cast<dq::Index>(d.corpus.front().feature_dim());
    s.out_dim = std::max<dq::Index>(classes, 2);
    s.graph_level = true;
    s.heads = 4;
  } else {
    const dq::Index classes = d.graph.num_classes;
    s = dq::ModelSpec::citation(arch, static_cast<dq::Index>(d.graph.feature_dim()), classes);
  }
  if (c.hidden) s.hidden = *c.hidden;
  if (c.layers) s.num_layers = *c.layers;
  s.validate();
  return s;
}

json envelope(const std::string& command, const TrainConfig* config, std::uint64_t seed) {
  json j = {{"command", command}, {"version", dq::kVersion}, {"build", dq::kBuildId}, {"seed", seed}};
  if (config) j["config"] = dq::to_json(*config);
  return j;
}

void write_json(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  std::ofstream out(path);
  if (!out) throw dq::LoadError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int cmd_train(const Common& c) {
  const TrainConfig config = make_config(c);
  const Dataset d = load_dataset(c.dataset);
  const dq::ModelSpec spec = make_spec(c, d);
  const int runs = c.runs.value_or(1);
  const fs::path out(c.out);
  fs::create_directories(out);
  json summary = envelope("train", &config, config.seed);
  summary["dataset"] = d.name;
  summary["model"] = dq::to_json(spec);
  std::mutex io;
  auto save = [&](const TrainConfig& run_config, dq::TrainResult& r) {
    const std::string tag = "seed" + std::to_string(run_config.seed);
    dq::save_checkpoint(*r.model, dq::to_json(run_config), out / ("checkpoint-" + tag + ".dqck"));
    dq::write_metrics_csv(r.metrics, out / ("metrics-" + tag + ".csv"));
    std::lock_guard lock(io);
    std::printf("seed %llu: test acc %.2f%% (best epoch %d)\n", static_cast<unsigned long long>(run_config.seed),
                100.0 * r.metrics.test_acc, r.metrics.best_epoch);
  };
  if (d.graph_level) {
    std::vector<double> acc;
    json per_seed = json::array();
    for (int i = 0; i < runs; ++i) {
      TrainConfig rc = config;
      rc.seed = config.seed + static_cast<std::uint64_t>(i);
      dq::TrainResult r = dq::train_graph_classifier(spec, d.corpus, rc);
      save(rc, r);
      acc.push_back(100.0 * r.metrics.test_acc);
      per_seed.push_back(dq::to_json(r.metrics));
    }
    const auto [m, s] = dq::mean_std(acc);
    summary["result"] = {{"runs", runs}, {"mean", m}, {"std", s}, {"per_seed", per_seed}};
  } else {
    const dq::SeedSummary s = dq::run_seeds(spec, d.graph, config, runs, c.parallel, save);
    summary["result"] = s.to_json();
    std::printf("mean test acc %.2f ± %.2f over %d run(s)\n", s.mean, s.std, runs);
  }
  write_json(out / "train.json", summary);
  return kOk;
}

int cmd_eval(const Common& c, const std::string& split_name) {
  auto ck = dq::load_checkpoint(c.checkpoint);
  const Dataset d = load_dataset(c.dataset);
  json summary = envelope("eval", nullptr, ck.train_config.value("seed", std::uint64_t{0}));
  summary["config"] = ck.train_config;
  summary["checkpoint"] = c.checkpoint;
  summary["dataset"] = d.name;
  if (d.graph_level) {
    const auto split = dq::split_corpus(d.corpus.size(), ck.train_config.value("seed", std::uint64_t{0}));
    const auto& members = split_name == "train" ? split.train : split_name == "val" ? split.val : split.test;
    const auto r = dq::evaluate_graphs(*ck.model, d.corpus, members);
    summary["result"] = {{"split", split_name}, {"accuracy", 100.0 * r.accuracy}, {"loss", r.loss}};
  } else {
    if (d.graph.feature_dim() != static_cast<std::size_t>(ck.model->spec().in_dim)) {
      throw dq::LoadError("checkpoint expects " + std::to_string(ck.model->spec().in_dim) + " features, dataset has " +
                          std::to_string(d.graph.feature_dim()));
    }
    const dq::Split split = split_name == "train" ? dq::Split::train : split_name == "val" ? dq::Split::val : dq::Split::test;
    const auto r = dq::evaluate(*ck.model, dq::PreparedGraph::from(d.graph), d.graph, split);
    summary["result"] = {{"split", split_name}, {"accuracy", 100.0 * r.accuracy}, {"loss", r.loss}};
  }
  std::printf("%s accuracy %.2f%%\n", split_name.c_str(), summary["result"]["accuracy"].get<double>());
  write_json(fs::path(c.out) / "eval.json", summary);
  return kOk;
}

int cmd_lower(const Common& c) {
  auto ck = dq::load_checkpoint(c.checkpoint);
  const dq::IntModel im = dq::lower(*ck.model);
  const fs::path out(c.out);
  fs::create_directories(out);
  const fs::path im_path = out / "model.dqim";
  im.save(im_path);
  json summary = envelope("lower", nullptr, ck.train_config.value("seed", std::uint64_t{0}));
  summary["config"] = ck.train_config;
  summary["checkpoint"] = c.checkpoint;
  summary["int_model"] = im_path.string();
  summary["checkpoint_bytes"] = fs::file_size(c.checkpoint);
  summary["int_model_bytes"] = fs::file_size(im_path);
  if (!c.dataset.empty()) {
    const Dataset d = load_dataset(c.dataset);
    if (d.graph_level) throw dq::UnsupportedError("lower: graph-level datasets are not supported");
    const dq::Equivalence e = dq::compare_outputs(*ck.model, im, d.graph);
    summary["dataset"] = d.name;
    summary["argmax_agreement"] = e.argmax_agreement;
    summary["max_deviation_steps"] = e.max_steps;
    std::printf("argmax agreement %.4f, max deviation %lld steps\n", e.argmax_agreement,
                static_cast<long long>(e.max_steps));
  }
  write_json(out / "lower.json", summary);
  return kOk;
}

struct BenchFlags {
  int threads = 1;
  int reps = 30;
  int warmup = 5;
  dq::Index nodes = 100000;
  dq::Index features = 128;
  dq::Index width = 128;
  double edges_per_node = 4;
  std::uint64_t seed = 0;
};

int cmd_bench(const Common& c, const BenchFlags& b, bool dataset_given) {
  std::unique_ptr<dq::Model> model;
  dq::Graph graph;
  std::string graph_name;
  if (dataset_given) {
    const Dataset d = load_dataset(c.dataset);
    if (d.graph_level) throw dq::UnsupportedError("bench: graph-level datasets are not supported");
    graph = d.graph;
    graph_name = d.name;
  } else {
    graph = dq::gen_synthetic(dq::SyntheticKind::preferential_attachment, b.nodes, b.edges_per_node, b.seed, b.features);
    graph_name = "preferential_attachment_n" + std::to_string(b.nodes) + "_f" + std::to_string(b.features);
  }
  if (!c.checkpoint.empty()) {
    model = std::move(dq::load_checkpoint(c.checkpoint).model);
  } else {
    model = dq::random_calibrated_model(dq::parse_arch(c.arch), static_cast<dq::Index>(graph.feature_dim()), b.width,
                                        b.edges_per_node, b.seed, std::min<dq::Index>(graph.num_nodes, 2000));
  }
  const dq::IntModel im = dq::lower(*model);
  const dq::Fp32Engine fp32(*model);
  dq::BenchOptions o;
  o.threads = b.threads;
  o.reps = b.reps;
  o.warmup = b.warmup;
  const dq::BenchReport r = dq::benchmark(im, fp32, graph, graph_name, o);
  json summary = envelope("bench", nullptr, b.seed);
  summary["config"] = {{"threads", b.threads},   {"reps", b.reps},         {"warmup", b.warmup},
                       {"nodes", graph.num_nodes}, {"features", graph.feature_dim()}, {"width", b.width},
                       {"checkpoint", c.checkpoint}, {"int_kernels_vectorized", dq::int_kernels_vectorized()}};
  summary["results"] = r.to_json();
  std::printf("%s %s: fp32 %.2f ms, int8 %.2f ms (median of %d), speedup %.2fx, %d thread(s)\n", graph_name.c_str(),
              r.arch.c_str(), r.fp32.median_ms, r.int8.median_ms, r.reps, r.speedup, r.threads);
  write_json(fs::path(c.out) / "bench.json", summary);
  return kOk;
}

int cmd_sweep_ste(const Common& c) {
  TrainConfig config = make_config(c);
  const Dataset d = load_dataset(c.dataset);
  const dq::ModelSpec spec = make_spec(c, d);
  const int runs = c.runs.value_or(10);
  const auto rows = dq::sweep_ste(spec, d.graph, config, runs, c.parallel);
  const fs::path out(c.out);
  fs::create_directories(out);
  dq::write_ste_csv(rows, out / "sweep_ste.csv");
  json summary = envelope("sweep-ste", &config, config.seed);
  summary["dataset"] = d.name;
  summary["model"] = dq::to_json(spec);
  json rows_j = json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"ste", dq::to_string(r.ste)}, {"observer", dq::to_string(r.observer)}, {"bits", r.bits},
                      {"summary", r.summary.to_json()}});
    std::printf("%-9s %-8s W%dA%d: %.2f ± %.2f\n", dq::to_string(r.ste).c_str(), dq::to_string(r.observer).c_str(), r.bits,
                r.bits, r.summary.mean, r.summary.std);
  }
  summary["rows"] = rows_j;
  write_json(out / "sweep_ste.json", summary);
  return kOk;
}

struct AggregationFlags {
  int resamples = 100;
  std::vector<dq::Index> degrees{4, 16, 64, 256};
  dq::Index features = 16;
  dq::Index width = 16;
  std::uint64_t seed = 0;
  std::vector<std::string> archs;
};

int cmd_analyze(const Common& c, const AggregationFlags& a) {
  dq::AggregationOptions o;
  o.resamples = a.resamples;
  o.in_degrees = a.degrees;
  o.feature_dim = a.features;
  o.hidden = a.width;
  o.seed = a.seed;
  dq::AggregationStudy study;
  if (!c.checkpoint.empty()) {
    auto ck = dq::load_checkpoint(c.checkpoint);
    if (ck.model->scheme().enabled) throw dq::ConfigError("analyze-aggregation expects an FP32 checkpoint");
    study = dq::analyze_aggregation(*ck.model, o);
  } else {
    std::vector<dq::Arch> archs;
    for (const auto& s : a.archs) archs.push_back(dq::parse_arch(s));
    study = dq::analyze_aggregation(o, archs);
  }
  const fs::path out(c.out);
  fs::create_directories(out);
  study.write_csv(out / "aggregation.csv");
  json summary = envelope("analyze-aggregation", nullptr, a.seed);
  summary["config"] = {{"resamples", a.resamples}, {"in_degrees", a.degrees}, {"features", a.features},
                       {"width", a.width}, {"checkpoint", c.checkpoint}};
  summary["study"] = study.to_json();
  for (const auto& [arch, slope] : study.slopes) std::printf("%s slope %.3f\n", dq::to_string(arch).c_str(), slope);
  write_json(out / "aggregation.json", summary);
  return kOk;
}

int cmd_degrade(const Common& c, const std::vector<std::string>& sites) {
  TrainConfig config;
  dq::ModelSpec spec;
  const Dataset d = load_dataset(c.dataset);
  if (!c.checkpoint.empty()) {
    auto ck = dq::load_checkpoint(c.checkpoint);
    config = dq::train_config_from_json(ck.train_config);
    spec = ck.model->spec();
    if (c.seed) config.seed = *c.seed;
    if (c.epochs) config.epochs = *c.epochs;
  } else {
    config = make_config(c);
    if (!c.regime) config.regime = dq::Regime::qat;
    spec = make_spec(c, d);
  }
  if (config.bits != 8) throw dq::ConfigError("degrade starts from a W8A8 configuration");
  const auto rows = dq::degrade(spec, d.graph, config, sites, c.runs.value_or(10), c.parallel);
  const fs::path out(c.out);
  fs::create_directories(out);
  dq::write_degrade_csv(rows, out / "degrade.csv");
  json summary = envelope("degrade", &config, config.seed);
  summary["dataset"] = d.name;
  summary["model"] = dq::to_json(spec);
  json rows_j = json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"site", r.site}, {"bits", 4}, {"summary", r.summary.to_json()}});
    std::printf("%-10s at 4 bits: %.2f ± %.2f\n", r.site.c_str(), r.summary.mean, r.summary.std);
  }
  summary["rows"] = rows_j;
  write_json(out / "degrade.json", summary);
  return kOk;
}

int cmd_ablate(const Common& c, const std::string& mode) {
  TrainConfig config = make_config(c);
  config.ablation = dq::parse_ablation(mode);
  if (config.ablation == dq::Ablation::none) throw dq::ConfigError("ablate: mode must be masking_only or percentile_only");
  config.regime = config.ablation == dq::Ablation::masking_only ? dq::Regime::dq : dq::Regime::nqat;
  if (config.ablation == dq::Ablation::masking_only && config.observer == dq::ObserverKind::percentile) {
    config.observer.reset();
  }
  config.validate();
  const Dataset d = load_dataset(c.dataset);
  const dq::ModelSpec spec = make_spec(c, d);
  const dq::SeedSummary s = dq::run_seeds(spec, d.graph, config, c.runs.value_or(10), c.parallel);
  json summary = envelope("ablate", &config, config.seed);
  summary["dataset"] = d.name;
  summary["model"] = dq::to_json(spec);
  summary["mode"] = dq::to_string(config.ablation);
  summary["result"] = s.to_json();
  std::printf("%s W%dA%d: %.2f ± %.2f\n", dq::to_string(config.ablation).c_str(), config.bits, config.bits, s.mean, s.std);
  write_json(fs::path(c.out) / "ablate.json", summary);
  return kOk;
}

struct GenFlags {
  std::string kind = "preferential_attachment";
  dq::Index nodes = 1000;
  double param = 4;
  dq::Index features = 16;
  dq::Index graphs = 200;
  std::uint64_t seed = 0;
};

int cmd_gen(const Common& c, const GenFlags& g) {
  const fs::path out(c.out);
  fs::create_directories(out);
  const fs::path path = out / (g.kind + ".json");
  json summary = envelope("gen-data", nullptr, g.seed);
  summary["config"] = {{"kind", g.kind}, {"nodes", g.nodes}, {"param", g.param}, {"features", g.features},
                       {"graphs", g.graphs}};
  if (g.kind == "corpus") {
    const dq::Index lo = std::max<dq::Index>(4, g.nodes / 2);
    const auto corpus = dq::gen_graph_classification_corpus(g.graphs, lo, g.nodes,
                                                            static_cast<dq::Index>(g.param), g.seed, g.features);
    dq::save_corpus(corpus, path);
    summary["graphs"] = corpus.size();
  } else if (g.kind == "citation-like") {
    dq::CitationLikeOptions o;
    o.num_nodes = g.nodes;
    const dq::Graph graph = dq::gen_citation_like(o, g.seed);
    dq::save_graph(graph, path);
    summary["edges"] = graph.num_edges();
  } else {
    const dq::Graph graph = dq::gen_synthetic(dq::parse_synthetic_kind(g.kind), g.nodes, g.param, g.seed, g.features);
    dq::save_graph(graph, path);
    summary["edges"] = graph.num_edges();
  }
  summary["path"] = path.string();
  std::printf("wrote %s\n", path.string().c_str());
  write_json(out / "gen-data.json", summary);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Degree-Quant training and integer inference for graph neural networks"};
  app.set_version_flag("--version", std::string(dq::kBuildId));
  app.require_subcommand(1);

  Common common;
  auto* train = app.add_subcommand("train", "train a node or graph classifier over seeded runs");
  add_train_flags(train, common);

  std::string split = "test";
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  eval->add_option("--checkpoint", common.checkpoint, "checkpoint file")->required();
  eval->add_option("--dataset", common.dataset, "dataset");
  eval->add_option("--split", split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  eval->add_option("--out", common.out, "output directory");

  auto* lower = app.add_subcommand("lower", "convert a quantized checkpoint to an integer model");
  lower->add_option("--checkpoint", common.checkpoint, "checkpoint file")->required();
  lower->add_option("--dataset", common.dataset, "graph used to verify the integer model (empty to skip)");
  lower->add_option("--out", common.out, "output directory");

  BenchFlags bench_flags;
  auto* bench = app.add_subcommand("bench", "time integer against FP32 inference");
  bench->add_option("--checkpoint", common.checkpoint, "checkpoint (default: calibrated random GCN)");
  auto* bench_dataset = bench->add_option("--dataset", common.dataset, "graph (default: synthetic)");
  bench->add_option("--arch", common.arch, "architecture of the random model");
  bench->add_option("--threads", bench_flags.threads, "worker threads")->check(CLI::PositiveNumber);
  bench->add_option("--reps", bench_flags.reps, "timed repetitions (>= 30)");
  bench->add_option("--warmup", bench_flags.warmup, "warmup repetitions (>= 5)");
  bench->add_option("--nodes", bench_flags.nodes, "synthetic graph size");
  bench->add_option("--features", bench_flags.features, "synthetic feature width");
  bench->add_option("--width", bench_flags.width, "layer width of the random model");
  bench->add_option("--edges-per-node", bench_flags.edges_per_node, "preferential-attachment edges per new node");
  bench->add_option("--seed", bench_flags.seed, "seed");
  bench->add_option("--out", common.out, "output directory");

  auto* sweep = app.add_subcommand("sweep-ste", "QAT under the four STE/observer combinations");
  add_train_flags(sweep, common);

  AggregationFlags agg;
  auto* analyze = app.add_subcommand("analyze-aggregation", "aggregate statistics against in-degree on star graphs");
  analyze->add_option("--checkpoint", common.checkpoint, "FP32 checkpoint (default: random init)");
  analyze->add_option("--arch", agg.archs, "architectures (default: all)");
  analyze->add_option("--resamples", agg.resamples, "feature resamples per graph");
  analyze->add_option("--degrees", agg.degrees, "hub in-degrees");
  analyze->add_option("--features", agg.features, "feature width");
  analyze->add_option("--width", agg.width, "layer width");
  analyze->add_option("--seed", agg.seed, "seed");
  analyze->add_option("--out", common.out, "output directory");

  std::vector<std::string> sites;
  auto* degrade = app.add_subcommand("degrade", "retrain with one site kind at 4 bits");
  add_train_flags(degrade, common);
  degrade->add_option("--checkpoint", common.checkpoint, "W8A8 checkpoint providing model and config");
  degrade->add_option("--site", sites, "site kinds (default: all of the architecture)");

  std::string mode;
  auto* ablate = app.add_subcommand("ablate", "Degree-Quant with one of its two elements");
  add_train_flags(ablate, common);
  ablate->add_option("--mode", mode, "masking_only | percentile_only")->required();

  GenFlags gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic graph or corpus as JSON");
  gen_cmd->add_option("--kind", gen.kind, "erdos_renyi | preferential_attachment | star | citation-like | corpus");
  gen_cmd->add_option("--nodes", gen.nodes, "nodes (largest graph size for corpora)");
  gen_cmd->add_option("--param", gen.param, "edge probability or edges per node");
  gen_cmd->add_option("--features", gen.features, "feature width");
  gen_cmd->add_option("--graphs", gen.graphs, "corpus size");
  gen_cmd->add_option("--seed", gen.seed, "seed");
  gen_cmd->add_option("--out", common.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(common);
    if (*eval) return cmd_eval(common, split);
    if (*lower) {
      if (lower->count("--dataset") == 0) common.dataset.clear();
      return cmd_lower(common);
    }
    if (*bench) return cmd_bench(common, bench_flags, bench_dataset->count() > 0);
    if (*sweep) return cmd_sweep_ste(common);
    if (*analyze) return cmd_analyze(common, agg);
    if (*degrade) return cmd_degrade(common, sites);
    if (*ablate) return cmd_ablate(common, mode);
    if (*gen_cmd) return cmd_gen(common, gen);
  } catch (const dq::NumericError& e) {
    std::fprintf(stderr, "aborted: %s (epoch %d, site %s)\n", e.what(), e.epoch(), e.site().c_str());
    return kNumeric;
  } catch (const dq::ConfigError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return kUsage;
  } catch (const dq::LoadError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    if (std::getenv("DQ_DATA_DIR") == nullptr && std::string_view(e.what()).find("dataset") != std::string_view::npos)
      std::fprintf(stderr, "hint: set DQ_DATA_DIR to the dataset root\n");
    return kUnavailable;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kFailure;
}
