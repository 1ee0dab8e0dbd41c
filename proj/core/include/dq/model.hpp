#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dq/layers.hpp"

namespace dq {

struct ModelSpec {
  Arch arch = Arch::gcn;
  Index in_dim = 0;
  Index out_dim = 0;
  // Per-head width for GAT.
  Index hidden = 16;
  Index num_layers = 2;
  Index heads = 8;
  Index out_heads = 1;
  Index gin_mlp_layers = 1;
  float dropout = 0.5f;
  float attention_dropout = 0.0f;
  // Graph-level tasks pool node states and classify with a readout MLP.
  bool graph_level = false;
  PoolMode pool = PoolMode::sum;
  Index readout_hidden = 0;  // 0: same as hidden width

  /// Two-layer citation configuration: 16 hidden for GCN/GIN, 8 heads of 8
  /// for GAT with 0.6 dropout on features and attention.
  static ModelSpec citation(Arch arch, Index in_dim, Index num_classes);
  void validate() const;
};

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const QuantConfig& c);
QuantConfig quant_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const QuantScheme& s);
QuantScheme quant_scheme_from_json(const nlohmann::json& doc);

struct ForwardOptions {
  bool training = false;
  // Calibration passes run in training mode without dropout.
  bool dropout = true;
  Rng* rng = nullptr;        // dropout
  Rng* mask_rng = nullptr;   // protection masks; null disables masking
  Rng* noise_rng = nullptr;  // noisy-QAT weight masks
  bool shared_mask = false;
  std::optional<float> nqat_rate;
  std::function<void(int layer, const Tensor& aggregate)> on_aggregate;
  // Graph-level batches.
  const std::vector<Index>* batch = nullptr;
  Index num_graphs = 0;
};

class Model {
 public:
  Model(ModelSpec spec, QuantScheme scheme, std::uint64_t init_seed);

  /// Node logits [N x C], or graph logits [G x C] for graph-level specs.
  Tensor forward(const PreparedGraph& graph, const Tensor& x, const ForwardOptions& options);

  /// Parameters under stable names, e.g. "layers.0.weight", "readout.1.bias".
  std::vector<NamedTensor> parameters();
  /// Every quantizer under a stable name, e.g. "layers.1.aggregate_low".
  void for_each_quant(const std::function<void(const std::string&, QuantModule&)>& fn);

  const ModelSpec& spec() const { return spec_; }
  const QuantScheme& scheme() const { return scheme_; }
  std::vector<std::unique_ptr<GnnLayer>>& layers() { return layers_; }
  Readout* readout() { return readout_.get(); }
  std::size_t num_parameters();

 private:
  ModelSpec spec_;
  QuantScheme scheme_;
  std::vector<std::unique_ptr<GnnLayer>> layers_;
  std::unique_ptr<Readout> readout_;
};

}  // namespace dq
