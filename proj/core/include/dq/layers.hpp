#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dq/graph.hpp"
#include "dq/quantizer.hpp"
#include "dq/rng.hpp"

namespace dq {

enum class Arch { gcn, gat, gin };
std::string to_string(Arch a);
Arch parse_arch(const std::string& s);

/// Named positions in a layer pipeline that own quantizers.
enum class SiteKind { inputs, weights, features, norm, attention, message, aggregate, update };
inline constexpr std::array<SiteKind, 8> kAllSites = {
    SiteKind::inputs, SiteKind::weights,   SiteKind::features,  SiteKind::norm,
    SiteKind::attention, SiteKind::message, SiteKind::aggregate, SiteKind::update};

std::string to_string(SiteKind s);
SiteKind parse_site(const std::string& s);
/// The sites a given architecture actually has.
std::vector<SiteKind> sites_for(Arch arch);

/// Chooses the QuantConfig of every site in a model.
struct QuantScheme {
  bool enabled = false;
  QuantConfig activation;  // affine
  QuantConfig weight;      // symmetric, signed
  // Single-site bit-width overrides (degradation studies).
  std::map<SiteKind, int> bits_override;
  // Observer used by graph-level readout sites, when set.
  std::optional<ObserverKind> readout_observer;

  QuantConfig config_for(SiteKind site) const;
  QuantConfig readout_config_for(SiteKind site) const;

  static QuantScheme fp32() { return {}; }
  /// Activations and weights at `bits` with the given STE and observer.
  static QuantScheme uniform(int bits, SteMode ste, ObserverKind observer);
};

/// Low-precision quantizer plus the protected path. The high path defaults
/// to pass-through.
struct QuantSite {
  QuantModule low;
  QuantModule high{QuantConfig::passthrough()};
};

/// All quantizers of one layer.
struct LayerQuantSites {
  QuantSite inputs;
  std::vector<QuantSite> features;  // one per dense product in the layer
  QuantModule norm{QuantConfig::passthrough()};
  QuantModule attention{QuantConfig::passthrough()};
  QuantSite message;
  QuantSite aggregate;
  QuantSite update;
  std::vector<QuantModule> weights;  // one per parameter tensor

  LayerQuantSites() = default;
  LayerQuantSites(Arch arch, const QuantScheme& scheme, std::size_t num_weights,
                  std::size_t num_features);

  /// Visits every module under its checkpoint name (e.g. "inputs_low",
  /// "weights_low.1", "features_high.0", "norm").
  void for_each(const std::function<void(const std::string&, QuantModule&)>& fn);
};

/// Edge list with its node count.
struct EdgeList {
  Index num_nodes = 0;
  std::vector<Index> src;
  std::vector<Index> dst;
  std::size_t size() const { return src.size(); }
};

/// Graph-derived data reused by every forward pass.
struct PreparedGraph {
  EdgeList plain;
  EdgeList looped;             // with a self-loop on every node
  std::vector<float> gcn_norm;  // per looped edge
  std::vector<float> prob_mask;

  static PreparedGraph from(const Graph& graph);
};

/// 1/sqrt(d_src * d_dst) per edge, with d the in-degree of the given
/// (self-looped) edge list.
std::vector<float> gcn_norm(const EdgeList& looped);

/// Per-forward state shared by the layers of one model.
struct ForwardContext {
  bool training = false;
  // Dropout draws.
  Rng* rng = nullptr;
  // Noisy-QAT element draws.
  Rng* noise_rng = nullptr;
  // Node protection mask for the layer being run; empty means none.
  std::span<const std::uint8_t> mask;
  // Fraction of weight elements quantized per step (noisy QAT).
  std::optional<float> nqat_rate;
  float attention_dropout = 0.0f;
  // Observation hook for each layer's aggregate before it is quantized.
  std::function<void(int layer, const Tensor& aggregate)> on_aggregate;
  int layer_index = 0;
};

/// Quantizes a parameter tensor, observing it first in training. Applies the
/// noisy-QAT element mask when ctx.nqat_rate is set.
Tensor quantize_weight(const Tensor& w, QuantModule& qm, ForwardContext& ctx);

/// Per-element noisy-QAT view: each element is fake-quantized with
/// probability `noise_rate` and passed at full precision otherwise.
Tensor nqat_weight_view(const Tensor& w, const QuantModule& qm, float noise_rate, Rng& rng);

/// Message -> aggregate -> update with the message, aggregate and update
/// sites. Messages inherit protection from their source node; aggregate and
/// update rows from their target node. `update` defaults to identity.
Tensor propagate(const Tensor& messages, const EdgeList& edges, LayerQuantSites& sites,
                 ForwardContext& ctx, const std::function<Tensor(const Tensor&)>& update = {});

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class GnnLayer {
 public:
  virtual ~GnnLayer() = default;
  virtual Arch arch() const = 0;
  virtual Tensor forward(const Tensor& x, const PreparedGraph& graph, ForwardContext& ctx) = 0;
  virtual std::vector<NamedTensor> parameters() = 0;
  virtual Index in_dim() const = 0;
  virtual Index out_dim() const = 0;
  LayerQuantSites& sites() { return sites_; }

 protected:
  LayerQuantSites sites_;
};

class GcnLayer final : public GnnLayer {
 public:
  GcnLayer(Index in_dim, Index out_dim, const QuantScheme& scheme, Rng& init);
  Arch arch() const override { return Arch::gcn; }
  Tensor forward(const Tensor& x, const PreparedGraph& graph, ForwardContext& ctx) override;
  std::vector<NamedTensor> parameters() override;
  Index in_dim() const override { return static_cast<Index>(weight_.rows()); }
  Index out_dim() const override { return static_cast<Index>(weight_.cols()); }

  Tensor weight_;  // [in x out]
  Tensor bias_;    // [1 x out]
};

class GatLayer final : public GnnLayer {
 public:
  GatLayer(Index in_dim, Index heads, Index head_dim, const QuantScheme& scheme, Rng& init);
  Arch arch() const override { return Arch::gat; }
  Tensor forward(const Tensor& x, const PreparedGraph& graph, ForwardContext& ctx) override;
  std::vector<NamedTensor> parameters() override;
  Index in_dim() const override { return static_cast<Index>(weight_.rows()); }
  Index out_dim() const override { return heads_ * head_dim_; }
  Index heads() const { return heads_; }
  Index head_dim() const { return head_dim_; }

  Tensor weight_;   // [in x heads*head_dim]
  Tensor att_src_;  // [1 x heads*head_dim]
  Tensor att_dst_;  // [1 x heads*head_dim]
  Tensor bias_;     // [1 x heads*head_dim]

 private:
  Index heads_;
  Index head_dim_;
};

class GinLayer final : public GnnLayer {
 public:
  /// `dims` lists the MLP widths, e.g. {in, out} for a single linear layer.
  GinLayer(std::vector<Index> dims, const QuantScheme& scheme, Rng& init);
  Arch arch() const override { return Arch::gin; }
  Tensor forward(const Tensor& x, const PreparedGraph& graph, ForwardContext& ctx) override;
  std::vector<NamedTensor> parameters() override;
  Index in_dim() const override { return static_cast<Index>(weights_.front().rows()); }
  Index out_dim() const override { return static_cast<Index>(weights_.back().cols()); }

  Tensor eps_;  // [1 x 1], trained, starts at 0
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
};

// Per-head helpers used by GAT.
/// out[i, h] = sum_f x[i, h*F + f] * a[0, h*F + f].
Tensor head_dot(const Tensor& x, const Tensor& a, Index heads);
/// out[e, h*F + f] = x[e, h*F + f] * alpha[e, h].
Tensor scale_heads(const Tensor& x, const Tensor& alpha, Index heads);

enum class PoolMode { sum, mean };
std::string to_string(PoolMode m);
PoolMode parse_pool(const std::string& s);

/// Per-graph reduction of node rows by the batch-assignment vector.
Tensor global_pool(const Tensor& h, std::span<const Index> batch, Index num_graphs, PoolMode mode);

/// Graph-level readout MLP with its own quantization sites. Never masked.
class Readout {
 public:
  Readout(std::vector<Index> dims, const QuantScheme& scheme, Rng& init);
  Tensor forward(const Tensor& pooled, ForwardContext& ctx);
  std::vector<NamedTensor> parameters();
  LayerQuantSites& sites() { return sites_; }

  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;

 private:
  LayerQuantSites sites_;
};

/// Glorot-uniform initialized [rows x cols] parameter.
Tensor glorot(Index rows, Index cols, Rng& rng, Index fan_in = 0, Index fan_out = 0);

}  // namespace dq
