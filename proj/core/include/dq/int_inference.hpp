#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "dq/layers.hpp"
#include "dq/model.hpp"

namespace dq {

/// Adjacency in compressed-row form keyed by target node. Each row lists its
/// incoming edges in original edge order.
struct CsrAdjacency {
  Index num_nodes = 0;
  std::vector<Index> row_ptr;  // [N + 1]
  std::vector<Index> col_idx;  // source node per entry
  std::vector<Index> edge_id;  // position of the entry in the source edge list
  // Optional quantized per-edge values (GCN norm codes), in CSR entry order.
  std::vector<std::int8_t> edge_val_q;
  QParams edge_qp;

  static CsrAdjacency from_edges(const EdgeList& edges);
  std::size_t num_entries() const { return col_idx.size(); }
  Index max_row_length() const;
  void validate() const;
};

/// v / 2^shift + zero_point rounded half to even, the way the float path
/// rounds x / s + z: values closer to a tie than half an f32 ulp of the
/// result count as ties.
std::int64_t rounding_shift_half_even(std::int64_t v, int shift, std::int32_t zero_point = 0);

/// Fixed-point rescaling of integer accumulators onto a quantized grid:
///   q = clamp(round_half_even((acc * multiplier + offset) / 2^shift + zero_point))
struct Requantizer {
  std::int64_t multiplier = 0;
  int shift = 0;
  std::int32_t zero_point = 0;
  std::int32_t q_min = -128;
  std::int32_t q_max = 127;

  /// Multiplier/shift for real scale `m`. With several scales, the shift is
  /// shared so that terms can be summed before rounding.
  static Requantizer from_real(double m, const QParams& out);
  static std::vector<Requantizer> from_reals(std::span<const double> ms, const QParams& out);
  /// Real-valued additive term (in output grid units) at this shift.
  std::int64_t offset_for(double value) const;

  std::int32_t apply(std::int64_t acc, std::int64_t offset = 0) const {
    const std::int64_t r = rounding_shift_half_even(acc * multiplier + offset, shift, zero_point);
    return static_cast<std::int32_t>(r < q_min ? q_min : (r > q_max ? q_max : r));
  }
};

/// Int8 codes with their grid.
struct QTensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int8_t> data;
  QParams qp;

  const std::int8_t* row(std::size_t r) const { return data.data() + r * cols; }
};

QTensor quantize_tensor(const Tensor& x, const QParams& qp);
Tensor dequantize_tensor(const QTensor& q);

/// 256-entry code-to-code map indexed by (code + 128).
using CodeTable = std::array<std::int8_t, 256>;
CodeTable make_code_table(const QParams& in, const QParams& out, const std::function<float(float)>& fn);
void apply_code_table(const CodeTable& table, std::span<std::int8_t> codes);

/// Symmetric int8 weight matrix [K x N] packed for the dot-product kernels.
struct PackedWeights {
  std::size_t k = 0;
  std::size_t n = 0;
  std::size_t k4 = 0;   // K rounded up to 4
  std::size_t n16 = 0;  // N rounded up to 16
  std::vector<std::int8_t> packed;    // [k4/4][n16][4]
  std::vector<std::int32_t> col_sum;  // sum over k of w[k, j]
  std::vector<std::int8_t> raw;       // row-major [K x N]
};
PackedWeights pack_weights(std::span<const std::int8_t> w, std::size_t k, std::size_t n);

/// True when the vector int8 kernels are compiled in.
bool int_kernels_vectorized();

/// out[i, j] = rq[j].apply(sum_k (x[i,k] - z_x) * w[k,j], offset[j]).
/// `offsets` may be empty. Rows are split across `threads` workers.
void int_linear(const QTensor& x, const PackedWeights& w, const Requantizer& rq,
                std::span<const std::int64_t> offsets, QTensor& out, int threads = 1);

/// Int32 accumulators of int_linear without requantization (for tests).
std::vector<std::int32_t> int_linear_accumulate(const QTensor& x, const PackedWeights& w);

/// Integer aggregation over CSR rows:
///   acc[i, f] = sum_{e in row i} (T_e[x[src_e, f]] - msg_zero_point)
/// with T_e = tables[table_index[e]], the single table when `table_index` is
/// empty, or the identity map when `tables` is empty; followed by
/// requantization with `rq`.
void int_spmm(const CsrAdjacency& adj, const QTensor& x, std::span<const CodeTable> tables,
              std::span<const std::uint16_t> table_index, std::int32_t msg_zero_point,
              const Requantizer& rq, QTensor& out, int threads = 1);

/// Int32 accumulators of int_spmm (identity tables) for tests.
std::vector<std::int32_t> int_spmm_accumulate(const CsrAdjacency& adj, const QTensor& x, std::int32_t zero_point);

/// Per-column bias add and rescale: out = rq.apply(x - z_x, offset[col]).
void int_requantize_rows(const QTensor& x, const Requantizer& rq, std::span<const std::int64_t> offsets,
                         QTensor& out, int threads = 1);

struct IntWeight {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int8_t> q;
  float scale = 1.0f;
};

enum class Activation { none, relu, elu };

/// Lowered layer: frozen site grids plus integer weights.
struct IntLayer {
  Arch arch = Arch::gcn;
  Index heads = 1;
  QParams inputs, norm, attention, message, aggregate, update;
  std::vector<QParams> features;
  std::vector<IntWeight> weights;  // GCN: W,b; GAT: W,a_src,a_dst,b; GIN: (W,b) per MLP layer
  float eps = 0.0f;
  Activation act_after = Activation::none;

  // Derived at build time.
  std::vector<PackedWeights> packed;
  std::vector<Requantizer> linear_rq;
  std::vector<std::vector<std::int64_t>> linear_offsets;
  Requantizer aggregate_rq;
  Requantizer update_rq;
  std::vector<std::int64_t> update_offsets;
  std::vector<Requantizer> combine_rq;  // GIN: x term, aggregate term
  CodeTable message_table{};            // GIN
  CodeTable act_table{};                // into the next layer's inputs grid
};

/// Graph-specific data for integer inference.
struct IntGraph {
  CsrAdjacency plain;
  CsrAdjacency looped;
  std::vector<float> gcn_norm;  // per looped edge, in edge-list order
  std::vector<float> norm_csr;  // per looped CSR entry
  std::vector<Index> looped_src;
  std::vector<Index> looped_dst;
  // Per GCN layer: distinct norm codes -> message tables, and per CSR entry
  // the table used.
  std::vector<std::vector<CodeTable>> tables;
  std::vector<std::vector<std::uint16_t>> table_index;
};

/// CSR forms and GCN norms of a graph, without per-layer tables.
IntGraph csr_graph(const Graph& graph);

class IntModel {
 public:
  IntModel() = default;
  explicit IntModel(std::vector<IntLayer> layers, ModelSpec spec);

  /// Binds a graph: CSR forms, norm codes and per-edge tables. Throws
  /// UnsupportedError when aggregation could overflow int32.
  IntGraph prepare(const Graph& graph) const;

  /// Integer forward pass; returns the final layer's codes.
  QTensor forward_codes(const IntGraph& graph, const Tensor& x, int threads = 1,
                        std::vector<double>* layer_ms = nullptr) const;
  /// Dequantized logits.
  Tensor forward(const IntGraph& graph, const Tensor& x, int threads = 1) const;

  const std::vector<IntLayer>& layers() const { return layers_; }
  const ModelSpec& spec() const { return spec_; }
  /// Grid of the final layer output.
  const QParams& output_qparams() const { return layers_.back().update; }

  void save(const std::filesystem::path& path) const;
  static IntModel load(const std::filesystem::path& path);

 private:
  void build();
  std::vector<IntLayer> layers_;
  ModelSpec spec_;
};

/// Freezes a trained quantized model into integer form. Throws
/// UnsupportedError for FP32-only models, widths above 8 bits, graph-level
/// models, or sites that never observed data.
IntModel lower(Model& model);

struct Equivalence {
  double argmax_agreement = 0.0;
  // Largest per-element gap between the two outputs, in output grid steps.
  std::int64_t max_steps = 0;
};

/// Eval forward of `model` against the lowered model on the same graph.
Equivalence compare_outputs(Model& model, const IntModel& lowered, const Graph& graph, int threads = 1);

/// Runs one eval-style forward with observers updating (no dropout, no
/// masks) so that every site of a fresh model has a range.
void calibrate(Model& model, const PreparedGraph& graph, const Tensor& x);

/// Randomly initialized two-layer W8A8 model with every layer `width` wide,
/// calibrated on a preferential-attachment graph. Stands in for a trained
/// checkpoint in latency runs.
std::unique_ptr<Model> random_calibrated_model(Arch arch, Index in_dim, Index width, Index edges_per_node,
                                               std::uint64_t seed, Index calibration_nodes = 2000);

/// FP32 inference with fused CSR aggregation (no per-edge tensors).
class Fp32Engine {
 public:
  explicit Fp32Engine(Model& model);
  Tensor forward(const IntGraph& graph, const Tensor& x, int threads = 1,
                 std::vector<double>* layer_ms = nullptr) const;

 private:
  struct Layer {
    Arch arch;
    Index heads = 1;
    std::vector<Tensor> weights;
    float eps = 0.0f;
    Activation act_after = Activation::none;
  };
  std::vector<Layer> layers_;
};

/// Dense f32 product used by the FP32 engine: out = x * w (+ bias row).
void fp32_linear(const Tensor& x, const Tensor& w, const float* bias, Tensor& out, int threads = 1);

struct BenchOptions {
  int reps = 30;
  int warmup = 5;
  int threads = 1;
};

struct LatencyStats {
  double median_ms = 0.0;
  double p95_ms = 0.0;
  std::vector<double> layer_median_ms;
};

struct BenchReport {
  std::string graph;
  std::string arch;
  LatencyStats fp32;
  LatencyStats int8;
  double speedup = 0.0;
  int threads = 1;
  int reps = 0;
  int warmup = 0;
  nlohmann::json to_json() const;
};

/// Times both engines on the same graph and inputs. Requires reps >= 30 and
/// warmup >= 5.
BenchReport benchmark(const IntModel& int_model, const Fp32Engine& fp32, const Graph& graph,
                      const std::string& graph_name, const BenchOptions& options);

}  // namespace dq
