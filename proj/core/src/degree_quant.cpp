#include "dq/degree_quant.hpp"

#include <algorithm>

#include "dq/error.hpp"

namespace dq {

std::vector<float> build_prob_mask(std::span<const Index> in_degree, float p_min, float p_max) {
  if (!(p_min >= 0.0f && p_max <= 1.0f)) throw ConfigError("build_prob_mask: probabilities must lie in [0, 1]");
  if (p_min > p_max) throw ConfigError("build_prob_mask: p_min > p_max");
  const std::size_t n = in_degree.size();
  if (n == 0) return {};
  const Index max_degree = *std::max_element(in_degree.begin(), in_degree.end());
  std::vector<std::int64_t> counts(static_cast<std::size_t>(max_degree) + 1, 0);
  for (Index d : in_degree) {
    if (d < 0) throw ContractError("build_prob_mask: negative in-degree");
    ++counts[d];
  }
  std::vector<float> per_degree(counts.size());
  std::int64_t cumulative = 0;
  const double step = (static_cast<double>(p_max) - p_min) / static_cast<double>(n);
  for (std::size_t d = 0; d < counts.size(); ++d) {
    cumulative += counts[d];
    per_degree[d] = cumulative == static_cast<std::int64_t>(n)
                        ? p_max
                        : static_cast<float>(p_min + step * static_cast<double>(cumulative));
    per_degree[d] = std::clamp(per_degree[d], p_min, p_max);
  }
  std::vector<float> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = per_degree[in_degree[i]];
  return p;
}

void attach_prob_mask(Graph& graph, float p_min, float p_max) {
  if (graph.in_degree.size() != static_cast<std::size_t>(graph.num_nodes)) graph.refresh_degree();
  graph.prob_mask = build_prob_mask(graph.in_degree, p_min, p_max);
}

void attach_prob_mask(GraphBatch& batch, float p_min, float p_max) {
  Graph& m = batch.merged;
  if (m.in_degree.size() != static_cast<std::size_t>(m.num_nodes)) m.refresh_degree();
  m.prob_mask.assign(static_cast<std::size_t>(m.num_nodes), 0.0f);
  for (Index gi = 0; gi < batch.num_graphs; ++gi) {
    const auto begin = static_cast<std::size_t>(batch.node_offsets[gi]);
    const auto end = static_cast<std::size_t>(batch.node_offsets[gi + 1]);
    // Edges never cross graphs, so the merged in-degrees are per-graph ones.
    auto p = build_prob_mask(std::span<const Index>(m.in_degree).subspan(begin, end - begin), p_min, p_max);
    std::copy(p.begin(), p.end(), m.prob_mask.begin() + static_cast<std::ptrdiff_t>(begin));
  }
}

std::vector<std::uint8_t> sample_mask(std::span<const float> p, Rng& rng) {
  std::vector<std::uint8_t> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = rng.bernoulli(p[i]) ? 1 : 0;
  return m;
}

}  // namespace dq
