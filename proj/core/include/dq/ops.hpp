#pragma once

#include <cstdint>
#include <span>

#include "dq/rng.hpp"
#include "dq/tensor.hpp"

namespace dq {

using Index = std::int32_t;

// Differentiable primitives. Each records its backward rule on the active
// tape when an input requires a gradient.

/// Standard product [m x k] * [k x n]. Zero entries of `a` are skipped, which
/// matters for sparse bag-of-words inputs.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Elementwise sum. `b` may also be a row vector [1 x n], a column vector
/// [m x 1] or a scalar, broadcast over `a`.
Tensor add(const Tensor& a, const Tensor& b);
/// Elementwise product with the same broadcasting rules as add().
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float factor);

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, float slope = 0.2f);
Tensor elu(const Tensor& a, float alpha = 1.0f);

/// Inverted dropout: retained entries are scaled by 1/(1-p) in training;
/// identity when `training` is false or p == 0.
Tensor dropout(const Tensor& a, float p, Rng& rng, bool training);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count);

/// [m x n] -> [m x 1]
Tensor row_sum(const Tensor& a);
/// Sum of all entries as a 1x1 tensor.
Tensor sum(const Tensor& a);
/// Mean of all entries as a 1x1 tensor.
Tensor mean(const Tensor& a);

/// out[e] = src[index[e]].
Tensor gather(const Tensor& src, std::span<const Index> index);

/// out[i] = sum of src[e] over e with index[e] == i; rows with no
/// contributors are zero. Accumulation runs in edge order.
Tensor scatter_add(const Tensor& src, std::span<const Index> index, std::size_t dim_size);

/// Softmax over the rows sharing a segment id, independently per column.
Tensor segment_softmax(const Tensor& logits, std::span<const Index> seg, std::size_t n_segments);

}  // namespace dq
