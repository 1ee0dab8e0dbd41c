#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dq/graph.hpp"
#include "dq/model.hpp"

namespace dq {

enum class Regime { fp32, qat, nqat, dq };
enum class Ablation { none, masking_only, percentile_only };

std::string to_string(Regime r);
Regime parse_regime(const std::string& s);
std::string to_string(Ablation a);
Ablation parse_ablation(const std::string& s);

struct TrainConfig {
  Regime regime = Regime::fp32;
  int bits = 8;
  SteMode ste = SteMode::vanilla;
  // Unset: percentile for dq, minmax otherwise.
  std::optional<ObserverKind> observer;
  // Unset: architecture default, halved for quantized regimes.
  std::optional<float> lr;
  float weight_decay = 5e-4f;
  // Unset: the model spec's value.
  std::optional<float> dropout;
  int epochs = 300;
  int patience = 50;
  std::uint64_t seed = 0;
  float p_min = 0.0f;
  float p_max = 0.1f;
  bool shared_mask = false;
  float noise_rate = 0.8f;
  std::map<std::string, int> bits_override;
  Ablation ablation = Ablation::none;
  int batch_size = 32;

  void validate() const;
  bool quantized() const { return regime != Regime::fp32; }
  bool uses_masks() const { return regime == Regime::dq; }
  ObserverKind effective_observer() const;
  float effective_lr(Arch arch) const;
  std::optional<float> nqat_rate() const;
  QuantScheme scheme() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& doc);
TrainConfig load_train_config(const std::filesystem::path& path);

class Adam {
 public:
  Adam(std::vector<Tensor> params, float lr, float weight_decay = 0.0f, float beta1 = 0.9f,
       float beta2 = 0.999f, float eps = 1e-8f);
  /// One update from the accumulated gradients; parameters without a
  /// gradient are left untouched.
  void step();
  void zero_grad();
  int steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<float>> m_, v_;
  float lr_, weight_decay_, beta1_, beta2_, eps_;
  int t_ = 0;
};

/// Mean cross-entropy over rows selected by `mask` (empty = all rows), with a
/// max-shifted log-softmax.
Tensor cross_entropy(const Tensor& logits, std::span<const Index> labels, std::span<const std::uint8_t> mask = {});
/// Mean absolute error.
Tensor l1_loss(const Tensor& pred, const Tensor& target);

enum class Split { train, val, test };

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

std::vector<Index> argmax_rows(const Tensor& logits);

/// Eval-mode metrics on one node split.
EvalResult evaluate(Model& model, const PreparedGraph& prepared, const Graph& graph, Split split);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
};

struct RunMetrics {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  double best_val_acc = 0.0;
  double test_acc = 0.0;
  double test_loss = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const RunMetrics& m);
void write_metrics_csv(const RunMetrics& m, const std::filesystem::path& path);

struct TrainHooks {
  // Called on every training-mode aggregate tensor.
  std::function<void(int layer, const Tensor& aggregate)> on_aggregate;
  // Called after each epoch; returning false stops training.
  std::function<bool(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  RunMetrics metrics;
  // Restored to the best-validation state.
  std::unique_ptr<Model> model;
};

/// Node classification with early stopping on validation loss. Throws
/// NumericError when the loss or a tracked tensor becomes non-finite.
TrainResult train_node_classifier(ModelSpec spec, const Graph& graph, const TrainConfig& config,
                                  const TrainHooks& hooks = {});

struct CorpusSplit {
  std::vector<std::size_t> train, val, test;
};
/// Seeded 80/10/10 split of a graph corpus.
CorpusSplit split_corpus(std::size_t n, std::uint64_t seed);

/// Graph classification over a corpus with minibatches.
TrainResult train_graph_classifier(ModelSpec spec, const std::vector<Graph>& corpus, const TrainConfig& config,
                                   const TrainHooks& hooks = {});

EvalResult evaluate_graphs(Model& model, const std::vector<Graph>& corpus, std::span<const std::size_t> members);

/// Graph with the protection probabilities required by `config` attached.
Graph prepare_for_training(const Graph& graph, const TrainConfig& config);

}  // namespace dq
