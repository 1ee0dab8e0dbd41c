#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dq/ops.hpp"
#include "dq/tensor.hpp"

namespace dq {

/// A graph with node features. Node-level tasks carry per-node labels and
/// split masks; graph-level tasks carry `graph_label` instead.
struct Graph {
  Index num_nodes = 0;
  // edge_index: row 0 = sources, row 1 = targets.
  std::vector<Index> src;
  std::vector<Index> dst;
  Tensor x;
  std::vector<Index> y;
  Index graph_label = -1;
  Index num_classes = 0;
  std::vector<std::uint8_t> train_mask;
  std::vector<std::uint8_t> val_mask;
  std::vector<std::uint8_t> test_mask;
  std::vector<Index> in_degree;
  // Per-node protection probability, filled by build_prob_mask().
  std::vector<float> prob_mask;

  std::size_t num_edges() const { return src.size(); }
  std::size_t feature_dim() const { return x.defined() ? x.cols() : 0; }

  /// Recomputes in_degree from the edge list.
  void refresh_degree();

  /// Throws IndexError / DimensionError / ContractError when an invariant
  /// (endpoint range, degree consistency, disjoint splits, p in [0,1]) fails.
  void validate() const;
};

/// Bincount of edge targets.
std::vector<Index> compute_in_degree(const Graph& graph);
std::vector<Index> compute_in_degree(std::span<const Index> dst, Index num_nodes);

/// Appends (i -> i) for every node that lacks a self-loop. Idempotent.
Graph add_self_loops(const Graph& graph);

/// Removes repeated (src, dst) pairs, keeping first occurrences in order.
void deduplicate_edges(Graph& graph);

/// Disjoint union of graphs for graph-level tasks.
struct GraphBatch {
  Graph merged;
  // Graph id of each node; non-decreasing.
  std::vector<Index> batch;
  std::vector<Index> labels;
  Index num_graphs = 0;
  // First node of each member graph, plus a trailing total.
  std::vector<Index> node_offsets;
};

GraphBatch make_batch(std::span<const Graph> graphs);
GraphBatch make_batch(std::span<const Graph* const> graphs);

}  // namespace dq
