#include "dq/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "dq/degree_quant.hpp"
#include "dq/error.hpp"

namespace dq {

std::string to_string(Regime r) {
  switch (r) {
    case Regime::fp32: return "fp32";
    case Regime::qat: return "qat";
    case Regime::nqat: return "nqat";
    case Regime::dq: return "dq";
  }
  return "?";
}

Regime parse_regime(const std::string& s) {
  if (s == "fp32") return Regime::fp32;
  if (s == "qat") return Regime::qat;
  if (s == "nqat") return Regime::nqat;
  if (s == "dq") return Regime::dq;
  throw ConfigError("unknown regime '" + s + "'");
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::none: return "none";
    case Ablation::masking_only: return "masking_only";
    case Ablation::percentile_only: return "percentile_only";
  }
  return "?";
}

Ablation parse_ablation(const std::string& s) {
  if (s == "none" || s.empty()) return Ablation::none;
  if (s == "masking_only" || s == "masking-only") return Ablation::masking_only;
  if (s == "percentile_only" || s == "percentile-only") return Ablation::percentile_only;
  throw ConfigError("unknown ablation mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (quantized() && (bits < 2 || bits > 16)) throw ConfigError("train: bits must lie in [2, 16]");
  if (lr && !(*lr > 0.0f)) throw ConfigError("train: learning rate must be positive");
  if (weight_decay < 0.0f) throw ConfigError("train: weight decay must be non-negative");
  if (dropout && !(*dropout >= 0.0f && *dropout < 1.0f)) throw ConfigError("train: dropout must lie in [0, 1)");
  if (epochs < 1 || patience < 1) throw ConfigError("train: epochs and patience must be positive");
  if (!(p_min >= 0.0f && p_max <= 1.0f && p_min <= p_max)) {
    throw ConfigError("train: need 0 <= p_min <= p_max <= 1");
  }
  if (!(noise_rate >= 0.0f && noise_rate <= 1.0f)) throw ConfigError("train: noise rate must lie in [0, 1]");
  if (ablation == Ablation::masking_only && regime != Regime::dq) {
    throw ConfigError("train: masking_only ablation requires the dq regime");
  }
  if (ablation == Ablation::percentile_only && regime != Regime::nqat) {
    throw ConfigError("train: percentile_only ablation requires the nqat regime");
  }
  if (ablation == Ablation::masking_only && observer == ObserverKind::percentile) {
    throw ConfigError("train: masking_only ablation excludes percentile observers");
  }
  if (batch_size < 1) throw ConfigError("train: batch size must be positive");
  for (const auto& [site, b] : bits_override) {
    parse_site(site);
    if (b < 2 || (b > 16 && b < 32)) throw ConfigError("train: override bits for '" + site + "' out of range");
  }
}

ObserverKind TrainConfig::effective_observer() const {
  if (observer) return *observer;
  if (ablation == Ablation::percentile_only) return ObserverKind::percentile;
  if (regime == Regime::dq && ablation == Ablation::none) return ObserverKind::percentile;
  return ObserverKind::minmax;
}

float TrainConfig::effective_lr(Arch arch) const {
  if (lr) return *lr;
  const float base = arch == Arch::gat ? 0.005f : 0.01f;
  return quantized() ? base * 0.5f : base;
}

std::optional<float> TrainConfig::nqat_rate() const {
  if (regime == Regime::nqat) return noise_rate;
  return std::nullopt;
}

QuantScheme TrainConfig::scheme() const {
  QuantScheme s;
  if (quantized()) s = QuantScheme::uniform(bits, ste, effective_observer());
  for (const auto& [site, b] : bits_override) s.bits_override[parse_site(site)] = b;
  if (regime == Regime::dq && ablation == Ablation::none) s.readout_observer = ObserverKind::percentile;
  return s;
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json d = {{"regime", to_string(c.regime)},
                      {"weight_decay", c.weight_decay},
                      {"epochs", c.epochs},
                      {"patience", c.patience},
                      {"seed", c.seed},
                      {"batch_size", c.batch_size}};
  if (c.quantized()) {
    d["bits"] = c.bits;
    d["ste"] = to_string(c.ste);
    d["observer"] = to_string(c.effective_observer());
  }
  if (c.lr) d["lr"] = *c.lr;
  if (c.dropout) d["dropout"] = *c.dropout;
  if (c.regime == Regime::dq) {
    d["p_min"] = c.p_min;
    d["p_max"] = c.p_max;
    d["shared_mask"] = c.shared_mask;
  }
  if (c.regime == Regime::nqat) d["noise_rate"] = c.noise_rate;
  if (!c.bits_override.empty()) d["bits_override"] = c.bits_override;
  if (c.ablation != Ablation::none) d["ablation"] = to_string(c.ablation);
  return d;
}

TrainConfig train_config_from_json(const nlohmann::json& d) {
  static const std::vector<std::string> known = {
      "regime", "bits", "ste", "observer", "lr", "weight_decay", "dropout", "epochs", "patience", "seed",
      "p_min", "p_max", "shared_mask", "noise_rate", "bits_override", "ablation", "batch_size"};
  if (!d.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& [k, v] : d.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown config key '" + k + "'");
  }
  TrainConfig c;
  try {
    c.regime = parse_regime(d.value("regime", std::string("fp32")));
    c.bits = d.value("bits", c.bits);
    c.ste = parse_ste(d.value("ste", std::string("vanilla")));
    if (d.contains("observer")) c.observer = parse_observer(d.at("observer").get<std::string>());
    if (d.contains("lr")) c.lr = d.at("lr").get<float>();
    c.weight_decay = d.value("weight_decay", c.weight_decay);
    if (d.contains("dropout")) c.dropout = d.at("dropout").get<float>();
    c.epochs = d.value("epochs", c.epochs);
    c.patience = d.value("patience", c.patience);
    c.seed = d.value("seed", c.seed);
    c.p_min = d.value("p_min", c.p_min);
    c.p_max = d.value("p_max", c.p_max);
    c.shared_mask = d.value("shared_mask", c.shared_mask);
    c.noise_rate = d.value("noise_rate", c.noise_rate);
    if (d.contains("bits_override")) c.bits_override = d.at("bits_override").get<std::map<std::string, int>>();
    c.ablation = parse_ablation(d.value("ablation", std::string("none")));
    c.batch_size = d.value("batch_size", c.batch_size);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open config " + path.string());
  nlohmann::json d;
  try {
    in >> d;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return train_config_from_json(d);
}

Adam::Adam(std::vector<Tensor> params, float lr, float weight_decay, float beta1, float beta2, float eps)
    : params_(std::move(params)), lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0f);
    v_.emplace_back(p.size(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const float gk = g[k] + weight_decay_ * w[k];
      m[k] = beta1_ * m[k] + (1.0f - beta1_) * gk;
      v[k] = beta2_ * v[k] + (1.0f - beta2_) * gk * gk;
      const float mhat = m[k] / bc1;
      const float vhat = v[k] / bc2;
      w[k] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Tensor cross_entropy(const Tensor& logits, std::span<const Index> labels, std::span<const std::uint8_t> mask) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) throw DimensionError("cross_entropy: label count does not match rows");
  if (!mask.empty() && mask.size() != n) throw DimensionError("cross_entropy: mask length does not match rows");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n; ++i)
    if (mask.empty() || mask[i]) rows.push_back(i);
  if (rows.empty()) throw ContractError("cross_entropy: mask selects no rows");

  std::vector<float> probs(rows.size() * c);
  double total = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const float* z = logits.row(rows[k]);
    const Index y = labels[rows[k]];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw IndexError("cross_entropy: label out of range");
    const float mx = *std::max_element(z, z + c);
    double se = 0.0;
    for (std::size_t j = 0; j < c; ++j) se += std::exp(static_cast<double>(z[j]) - mx);
    const double lse = std::log(se) + mx;
    total += lse - z[y];
    for (std::size_t j = 0; j < c; ++j) probs[k * c + j] = static_cast<float>(std::exp(z[j] - lse));
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(rows.size())));
  if (needs_recording({&logits})) {
    auto li = logits.shared_impl();
    std::vector<Index> y(labels.begin(), labels.end());
    Tape::active()->record({logits}, out, [li, rows = std::move(rows), probs = std::move(probs), y = std::move(y), c](std::span<const float> g) {
      std::vector<float> dz(li->data.size(), 0.0f);
      const float w = g[0] / static_cast<float>(rows.size());
      for (std::size_t k = 0; k < rows.size(); ++k) {
        float* d = dz.data() + rows[k] * c;
        for (std::size_t j = 0; j < c; ++j) d[j] = w * probs[k * c + j];
        d[y[rows[k]]] -= w;
      }
      accumulate_grad(*li, dz);
    });
  }
  return out;
}

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw DimensionError("l1_loss: shape mismatch");
  if (pred.size() == 0) throw ContractError("l1_loss: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) total += std::fabs(pred.data()[i] - target.data()[i]);
  const float inv = 1.0f / static_cast<float>(pred.size());
  Tensor out = Tensor::scalar(static_cast<float>(total / static_cast<double>(pred.size())));
  if (needs_recording({&pred, &target})) {
    auto pi = pred.shared_impl(), ti = target.shared_impl();
    Tape::active()->record({pred, target}, out, [pi, ti, inv](std::span<const float> g) {
      std::vector<float> d(pi->data.size());
      for (std::size_t i = 0; i < d.size(); ++i) {
        const float diff = pi->data[i] - ti->data[i];
        d[i] = g[0] * inv * static_cast<float>((diff > 0.0f) - (diff < 0.0f));
      }
      accumulate_grad(*pi, d);
      for (float& v : d) v = -v;
      accumulate_grad(*ti, d);
    });
  }
  return out;
}

std::vector<Index> argmax_rows(const Tensor& logits) {
  std::vector<Index> out(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const float* r = logits.row(i);
    out[i] = static_cast<Index>(std::max_element(r, r + logits.cols()) - r);
  }
  return out;
}

namespace {

const std::vector<std::uint8_t>& split_mask(const Graph& g, Split s) {
  switch (s) {
    case Split::train: return g.train_mask;
    case Split::val: return g.val_mask;
    case Split::test: return g.test_mask;
  }
  return g.test_mask;
}

EvalResult score(const Tensor& logits, std::span<const Index> labels, std::span<const std::uint8_t> mask) {
  EvalResult r;
  r.loss = cross_entropy(logits, labels, mask).item();
  const auto pred = argmax_rows(logits);
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    ++total;
    hit += pred[i] == labels[i];
  }
  r.accuracy = static_cast<double>(hit) / static_cast<double>(total);
  return r;
}

struct Snapshot {
  std::vector<std::vector<float>> params;
  std::vector<std::tuple<float, float, bool>> quant;

  static Snapshot take(Model& model) {
    Snapshot s;
    for (auto& p : model.parameters()) s.params.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    model.for_each_quant([&](const std::string&, QuantModule& qm) {
      s.quant.emplace_back(qm.x_min(), qm.x_max(), qm.initialized());
    });
    return s;
  }

  void restore(Model& model) const {
    auto params_now = model.parameters();
    for (std::size_t i = 0; i < params_now.size(); ++i)
      std::copy(params[i].begin(), params[i].end(), params_now[i].tensor.data().begin());
    std::size_t k = 0;
    model.for_each_quant([&](const std::string&, QuantModule& qm) {
      const auto& [lo, hi, init] = quant[k++];
      qm.restore(lo, hi, init);
    });
  }
};

// Names the first non-finite parameter or observer range, for diagnostics.
std::string find_nonfinite(Model& model) {
  for (auto& p : model.parameters()) {
    for (float v : p.tensor.data())
      if (!std::isfinite(v)) return p.name;
  }
  std::string site;
  model.for_each_quant([&](const std::string& name, QuantModule& qm) {
    if (site.empty() && qm.initialized() && !(std::isfinite(qm.x_min()) && std::isfinite(qm.x_max()))) site = name;
  });
  return site.empty() ? "loss" : site;
}

void check_finite(const Tensor& loss, Model& model, int epoch) {
  if (std::isfinite(loss.item())) return;
  const std::string site = find_nonfinite(model);
  throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + " (site " + site + ")", epoch, site);
}

std::vector<Tensor> param_tensors(Model& model) {
  std::vector<Tensor> out;
  for (auto& p : model.parameters()) out.push_back(p.tensor);
  return out;
}

struct Streams {
  std::uint64_t init_seed;
  Rng dropout, mask, noise;

  explicit Streams(std::uint64_t seed)
      : init_seed(Rng(seed).next_u64()),
        dropout(seed ^ 0x5bd1e9955bd1e995ULL),
        mask(seed ^ 0x27d4eb2f165667c5ULL),
        noise(seed ^ 0x94d049bb133111ebULL) {}
};

void apply_dropout_override(ModelSpec& spec, const TrainConfig& config) {
  if (!config.dropout) return;
  spec.dropout = *config.dropout;
  if (spec.arch == Arch::gat) spec.attention_dropout = *config.dropout;
}

}  // namespace

EvalResult evaluate(Model& model, const PreparedGraph& prepared, const Graph& graph, Split split) {
  ForwardOptions opts;
  Tensor logits = model.forward(prepared, graph.x, opts);
  return score(logits, graph.y, split_mask(graph, split));
}

Graph prepare_for_training(const Graph& graph, const TrainConfig& config) {
  Graph g = graph;
  if (g.in_degree.size() != static_cast<std::size_t>(g.num_nodes)) g.refresh_degree();
  if (config.uses_masks()) attach_prob_mask(g, config.p_min, config.p_max);
  else g.prob_mask.clear();
  return g;
}

TrainResult train_node_classifier(ModelSpec spec, const Graph& graph_in, const TrainConfig& config,
                                  const TrainHooks& hooks) {
  config.validate();
  apply_dropout_override(spec, config);
  const auto t0 = std::chrono::steady_clock::now();
  const Graph graph = prepare_for_training(graph_in, config);
  const PreparedGraph prepared = PreparedGraph::from(graph);

  Streams rng(config.seed);
  auto model = std::make_unique<Model>(spec, config.scheme(), rng.init_seed);
  Adam opt(param_tensors(*model), config.effective_lr(spec.arch), config.weight_decay);

  ForwardOptions train_opts;
  train_opts.training = true;
  train_opts.rng = &rng.dropout;
  train_opts.mask_rng = config.uses_masks() ? &rng.mask : nullptr;
  train_opts.noise_rng = &rng.noise;
  train_opts.shared_mask = config.shared_mask;
  train_opts.nqat_rate = config.nqat_rate();
  train_opts.on_aggregate = hooks.on_aggregate;

  RunMetrics metrics;
  metrics.seed = config.seed;
  double best = std::numeric_limits<double>::infinity();
  Snapshot best_state = Snapshot::take(*model);
  int since_best = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Tape tape;
    double train_loss;
    {
      TapeScope scope(tape);
      Tensor logits = model->forward(prepared, graph.x, train_opts);
      Tensor loss = cross_entropy(logits, graph.y, graph.train_mask);
      check_finite(loss, *model, epoch);
      train_loss = loss.item();
      opt.zero_grad();
      tape.backward(loss);
    }
    opt.step();

    const EvalResult val = evaluate(*model, prepared, graph, Split::val);
    if (!std::isfinite(val.loss)) {
      const std::string site = find_nonfinite(*model);
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch) + " (site " + site + ")",
                         epoch, site);
    }
    EpochRecord rec{epoch, train_loss, val.loss, val.accuracy};
    metrics.epochs.push_back(rec);
    if (val.loss < best) {
      best = val.loss;
      best_state = Snapshot::take(*model);
      metrics.best_epoch = epoch;
      metrics.best_val_loss = val.loss;
      metrics.best_val_acc = val.accuracy;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
    if (hooks.on_epoch && !hooks.on_epoch(rec)) break;
  }

  best_state.restore(*model);
  const EvalResult test = evaluate(*model, prepared, graph, Split::test);
  metrics.test_acc = test.accuracy;
  metrics.test_loss = test.loss;
  metrics.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(metrics), std::move(model)};
}

CorpusSplit split_corpus(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed ^ 0x6a09e667f3bcc909ULL);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const std::size_t n_train = n * 8 / 10, n_val = n / 10;
  CorpusSplit s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

namespace {

struct PreparedBatch {
  GraphBatch batch;
  PreparedGraph prepared;
};

PreparedBatch make_prepared(const std::vector<Graph>& corpus, std::span<const std::size_t> members,
                            const TrainConfig* config) {
  std::vector<const Graph*> ptrs;
  for (std::size_t i : members) ptrs.push_back(&corpus[i]);
  PreparedBatch pb;
  pb.batch = make_batch(std::span<const Graph* const>(ptrs));
  if (config && config->uses_masks()) attach_prob_mask(pb.batch, config->p_min, config->p_max);
  pb.prepared = PreparedGraph::from(pb.batch.merged);
  return pb;
}

EvalResult eval_batch(Model& model, const PreparedBatch& pb) {
  ForwardOptions opts;
  opts.batch = &pb.batch.batch;
  opts.num_graphs = pb.batch.num_graphs;
  Tensor logits = model.forward(pb.prepared, pb.batch.merged.x, opts);
  return score(logits, pb.batch.labels, {});
}

}  // namespace

EvalResult evaluate_graphs(Model& model, const std::vector<Graph>& corpus, std::span<const std::size_t> members) {
  if (members.empty()) throw ContractError("evaluate_graphs: empty selection");
  return eval_batch(model, make_prepared(corpus, members, nullptr));
}

TrainResult train_graph_classifier(ModelSpec spec, const std::vector<Graph>& corpus, const TrainConfig& config,
                                   const TrainHooks& hooks) {
  config.validate();
  apply_dropout_override(spec, config);
  if (!spec.graph_level) throw ConfigError("train_graph_classifier: model spec is not graph-level");
  if (corpus.size() < 10) throw ContractError("train_graph_classifier: corpus needs at least 10 graphs");
  const auto t0 = std::chrono::steady_clock::now();
  const CorpusSplit split = split_corpus(corpus.size(), config.seed);

  std::vector<PreparedBatch> batches;
  for (std::size_t b = 0; b < split.train.size(); b += static_cast<std::size_t>(config.batch_size)) {
    const std::size_t e = std::min(split.train.size(), b + static_cast<std::size_t>(config.batch_size));
    batches.push_back(make_prepared(corpus, std::span(split.train).subspan(b, e - b), &config));
  }
  const PreparedBatch val = make_prepared(corpus, split.val, nullptr);
  const PreparedBatch test = make_prepared(corpus, split.test, nullptr);

  Streams rng(config.seed);
  auto model = std::make_unique<Model>(spec, config.scheme(), rng.init_seed);
  Adam opt(param_tensors(*model), config.effective_lr(spec.arch), config.weight_decay);
  Rng order_rng(config.seed ^ 0xbb67ae8584caa73bULL);

  RunMetrics metrics;
  metrics.seed = config.seed;
  double best = std::numeric_limits<double>::infinity();
  Snapshot best_state = Snapshot::take(*model);
  int since_best = 0;
  std::vector<std::size_t> order(batches.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
    double total = 0.0;
    for (std::size_t bi : order) {
      const PreparedBatch& pb = batches[bi];
      ForwardOptions o;
      o.training = true;
      o.rng = &rng.dropout;
      o.mask_rng = config.uses_masks() ? &rng.mask : nullptr;
      o.noise_rng = &rng.noise;
      o.shared_mask = config.shared_mask;
      o.nqat_rate = config.nqat_rate();
      o.on_aggregate = hooks.on_aggregate;
      o.batch = &pb.batch.batch;
      o.num_graphs = pb.batch.num_graphs;
      Tape tape;
      {
        TapeScope scope(tape);
        Tensor logits = model->forward(pb.prepared, pb.batch.merged.x, o);
        Tensor loss = cross_entropy(logits, pb.batch.labels);
        check_finite(loss, *model, epoch);
        total += loss.item() * pb.batch.num_graphs;
        opt.zero_grad();
        tape.backward(loss);
      }
      opt.step();
    }
    const EvalResult v = eval_batch(*model, val);
    EpochRecord rec{epoch, total / static_cast<double>(split.train.size()), v.loss, v.accuracy};
    metrics.epochs.push_back(rec);
    if (v.loss < best) {
      best = v.loss;
      best_state = Snapshot::take(*model);
      metrics.best_epoch = epoch;
      metrics.best_val_loss = v.loss;
      metrics.best_val_acc = v.accuracy;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
    if (hooks.on_epoch && !hooks.on_epoch(rec)) break;
  }
  best_state.restore(*model);
  const EvalResult t = eval_batch(*model, test);
  metrics.test_acc = t.accuracy;
  metrics.test_loss = t.loss;
  metrics.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(metrics), std::move(model)};
}

nlohmann::json to_json(const RunMetrics& m) {
  return {{"seed", m.seed},
          {"epochs_run", m.epochs.size()},
          {"best_epoch", m.best_epoch},
          {"best_val_loss", m.best_val_loss},
          {"best_val_acc", m.best_val_acc},
          {"test_acc", m.test_acc},
          {"test_loss", m.test_loss},
          {"wall_seconds", m.wall_seconds}};
}

void write_metrics_csv(const RunMetrics& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,val_acc\n";
  for (const auto& e : m.epochs) out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_acc << '\n';
}

}  // namespace dq
