#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dq/graph.hpp"
#include "dq/rng.hpp"

namespace dq {

/// Per-node protection probabilities interpolated between p_min and p_max by
/// the cumulative in-degree distribution:
///
///   counts = bincount(in_degree)
///   p(d)   = p_min + (p_max - p_min) * (sum_{d' <= d} counts[d']) / N
///
/// Nodes with equal in-degree share a probability, probabilities never
/// decrease with in-degree, and the highest occupied degree gets p_max.
std::vector<float> build_prob_mask(std::span<const Index> in_degree, float p_min, float p_max);

/// Fills graph.prob_mask.
void attach_prob_mask(Graph& graph, float p_min, float p_max);

/// Batched corpora: probabilities are computed per member graph.
void attach_prob_mask(GraphBatch& batch, float p_min, float p_max);

/// m_i ~ Bernoulli(p_i), drawn in node order from `rng`.
std::vector<std::uint8_t> sample_mask(std::span<const float> p, Rng& rng);

struct ProtectionMask {
  std::vector<float> p;
  std::vector<std::uint8_t> m;
};

}  // namespace dq
