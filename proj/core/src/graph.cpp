#include "dq/graph.hpp"

#include <algorithm>
#include <set>
#include <string>
#include <utility>

#include "dq/error.hpp"

namespace dq {

void Graph::refresh_degree() { in_degree = compute_in_degree(dst, num_nodes); }

void Graph::validate() const {
  if (src.size() != dst.size()) throw DimensionError("Graph: src/dst length mismatch");
  for (std::size_t e = 0; e < src.size(); ++e) {
    if (src[e] < 0 || src[e] >= num_nodes || dst[e] < 0 || dst[e] >= num_nodes) {
      throw IndexError("Graph: edge " + std::to_string(e) + " has an endpoint outside [0, " +
                       std::to_string(num_nodes) + ")");
    }
  }
  if (x.defined() && x.rows() != static_cast<std::size_t>(num_nodes)) {
    throw DimensionError("Graph: feature rows != num_nodes");
  }
  if (!in_degree.empty() && in_degree != compute_in_degree(dst, num_nodes)) {
    throw ContractError("Graph: stale in_degree");
  }
  const auto n = static_cast<std::size_t>(num_nodes);
  for (const auto* m : {&train_mask, &val_mask, &test_mask}) {
    if (!m->empty() && m->size() != n) throw DimensionError("Graph: split mask length");
  }
  auto flag = [](const std::vector<std::uint8_t>& m, std::size_t i) { return m.empty() ? 0 : (m[i] ? 1 : 0); };
  for (std::size_t i = 0; i < n; ++i) {
    if (flag(train_mask, i) + flag(val_mask, i) + flag(test_mask, i) > 1) {
      throw ContractError("Graph: node " + std::to_string(i) + " is in more than one split");
    }
  }
  for (float p : prob_mask) {
    if (!(p >= 0.0f && p <= 1.0f)) throw ContractError("Graph: prob_mask entry outside [0, 1]");
  }
}

std::vector<Index> compute_in_degree(std::span<const Index> dst, Index num_nodes) {
  std::vector<Index> deg(static_cast<std::size_t>(num_nodes), 0);
  for (Index t : dst) ++deg[t];
  return deg;
}

std::vector<Index> compute_in_degree(const Graph& graph) {
  return compute_in_degree(graph.dst, graph.num_nodes);
}

Graph add_self_loops(const Graph& graph) {
  Graph out = graph;
  std::vector<std::uint8_t> has_loop(static_cast<std::size_t>(graph.num_nodes), 0);
  for (std::size_t e = 0; e < graph.src.size(); ++e)
    if (graph.src[e] == graph.dst[e]) has_loop[graph.src[e]] = 1;
  for (Index i = 0; i < graph.num_nodes; ++i) {
    if (!has_loop[i]) {
      out.src.push_back(i);
      out.dst.push_back(i);
    }
  }
  out.refresh_degree();
  out.prob_mask.clear();
  return out;
}

void deduplicate_edges(Graph& graph) {
  std::set<std::pair<Index, Index>> seen;
  std::vector<Index> src, dst;
  src.reserve(graph.src.size());
  dst.reserve(graph.dst.size());
  for (std::size_t e = 0; e < graph.src.size(); ++e) {
    if (seen.emplace(graph.src[e], graph.dst[e]).second) {
      src.push_back(graph.src[e]);
      dst.push_back(graph.dst[e]);
    }
  }
  graph.src = std::move(src);
  graph.dst = std::move(dst);
  graph.refresh_degree();
}

GraphBatch make_batch(std::span<const Graph* const> graphs) {
  GraphBatch out;
  out.num_graphs = static_cast<Index>(graphs.size());
  std::size_t total_nodes = 0;
  std::size_t feat = 0;
  for (const Graph* g : graphs) {
    total_nodes += static_cast<std::size_t>(g->num_nodes);
    if (feat == 0) feat = g->feature_dim();
    if (g->feature_dim() != feat) throw DimensionError("make_batch: feature dims differ");
  }
  Graph& m = out.merged;
  m.num_nodes = static_cast<Index>(total_nodes);
  m.x = Tensor(total_nodes, feat);
  out.batch.reserve(total_nodes);
  Index offset = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const Graph& g = *graphs[gi];
    out.node_offsets.push_back(offset);
    for (std::size_t e = 0; e < g.src.size(); ++e) {
      m.src.push_back(g.src[e] + offset);
      m.dst.push_back(g.dst[e] + offset);
    }
    if (feat > 0) {
      std::copy(g.x.data().begin(), g.x.data().end(),
                m.x.data().begin() + static_cast<std::ptrdiff_t>(offset) * feat);
    }
    m.prob_mask.insert(m.prob_mask.end(), g.prob_mask.begin(), g.prob_mask.end());
    out.batch.insert(out.batch.end(), static_cast<std::size_t>(g.num_nodes), static_cast<Index>(gi));
    out.labels.push_back(g.graph_label);
    m.num_classes = std::max(m.num_classes, g.num_classes);
    offset += g.num_nodes;
  }
  out.node_offsets.push_back(offset);
  if (m.prob_mask.size() != total_nodes) m.prob_mask.clear();
  m.refresh_degree();
  return out;
}

GraphBatch make_batch(std::span<const Graph> graphs) {
  std::vector<const Graph*> ptrs;
  ptrs.reserve(graphs.size());
  for (const auto& g : graphs) ptrs.push_back(&g);
  return make_batch(std::span<const Graph* const>(ptrs));
}

}  // namespace dq
