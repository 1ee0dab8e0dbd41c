#include "dq/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dq/error.hpp"

namespace dq {

namespace {

std::string shape_str(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

enum class Broadcast { same, row, col, scalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::same;
  if (b.is_scalar()) return Broadcast::scalar;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::row;
  if (b.cols() == 1 && b.rows() == a.rows()) return Broadcast::col;
  throw DimensionError(std::string(op) + ": cannot combine " + shape_str(a) + " with " +
                       shape_str(b));
}

inline std::size_t bidx(Broadcast k, std::size_t r, std::size_t c, std::size_t cols) {
  switch (k) {
    case Broadcast::same: return r * cols + c;
    case Broadcast::row: return c;
    case Broadcast::col: return r;
    case Broadcast::scalar: return 0;
  }
  return 0;
}

void check_index(std::span<const Index> index, std::size_t bound, const char* op) {
  for (std::size_t e = 0; e < index.size(); ++e) {
    if (index[e] < 0 || static_cast<std::size_t>(index[e]) >= bound) {
      throw IndexError(std::string(op) + ": index[" + std::to_string(e) + "] = " +
                       std::to_string(index[e]) + " outside [0, " + std::to_string(bound) + ")");
    }
  }
}

template <typename F>
Tensor unary(const Tensor& a, F f) {
  Tensor out(a.rows(), a.cols());
  auto in = a.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ (" + shape_str(a) + " * " +
                         shape_str(b) + ")");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const float* ar = a.row(i);
    float* orow = out.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const float av = ar[p];
      if (av == 0.0f) continue;
      const float* br = b.row(p);
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * br[j];
    }
  }
  if (needs_recording({&a, &b})) {
    auto ai = a.shared_impl();
    auto bi = b.shared_impl();
    Tape::active()->record({a, b}, out, [ai, bi, m, k, n](std::span<const float> g) {
      if (ai->requires_grad) {
        std::vector<float> da(m * k, 0.0f);
        for (std::size_t i = 0; i < m; ++i) {
          const float* gr = g.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const float* br = bi->data.data() + p * n;
            float acc = 0.0f;
            for (std::size_t j = 0; j < n; ++j) acc += gr[j] * br[j];
            da[i * k + p] = acc;
          }
        }
        accumulate_grad(*ai, da);
      }
      if (bi->requires_grad) {
        std::vector<float> db(k * n, 0.0f);
        for (std::size_t i = 0; i < m; ++i) {
          const float* ar = ai->data.data() + i * k;
          const float* gr = g.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const float av = ar[p];
            if (av == 0.0f) continue;
            float* dr = db.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) dr[j] += av * gr[j];
          }
        }
        accumulate_grad(*bi, db);
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(a, b, "add");
  const std::size_t rows = a.rows(), cols = a.cols();
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out(r, c) = a(r, c) + b.data()[bidx(kind, r, c, cols)];
  if (needs_recording({&a, &b})) {
    auto ai = a.shared_impl();
    auto bi = b.shared_impl();
    Tape::active()->record({a, b}, out, [ai, bi, kind, rows, cols](std::span<const float> g) {
      accumulate_grad(*ai, g);
      if (bi->requires_grad) {
        std::vector<float> db(bi->data.size(), 0.0f);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) db[bidx(kind, r, c, cols)] += g[r * cols + c];
        accumulate_grad(*bi, db);
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Broadcast kind = broadcast_kind(a, b, "mul");
  const std::size_t rows = a.rows(), cols = a.cols();
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out(r, c) = a(r, c) * b.data()[bidx(kind, r, c, cols)];
  if (needs_recording({&a, &b})) {
    auto ai = a.shared_impl();
    auto bi = b.shared_impl();
    Tape::active()->record({a, b}, out, [ai, bi, kind, rows, cols](std::span<const float> g) {
      if (ai->requires_grad) {
        std::vector<float> da(rows * cols);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c)
            da[r * cols + c] = g[r * cols + c] * bi->data[bidx(kind, r, c, cols)];
        accumulate_grad(*ai, da);
      }
      if (bi->requires_grad) {
        std::vector<float> db(bi->data.size(), 0.0f);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c)
            db[bidx(kind, r, c, cols)] += g[r * cols + c] * ai->data[r * cols + c];
        accumulate_grad(*bi, db);
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, float factor) {
  Tensor out = unary(a, [factor](float v) { return v * factor; });
  if (needs_recording({&a})) {
    auto ai = a.shared_impl();
    Tape::active()->record({a}, out, [ai, factor](std::span<const float> g) {
      std::vector<float> da(g.begin(), g.end());
      for (auto& v : da) v *= factor;
      accumulate_grad(*ai, da);
    });
  }
  return out;
}

namespace {

// Pointwise op whose derivative depends only on the input value.
template <typename F, typename D>
Tensor pointwise(const Tensor& a, F f, D df) {
  Tensor out = unary(a, f);
  if (needs_recording({&a})) {
    auto ai = a.shared_impl();
    Tape::active()->record({a}, out, [ai, df](std::span<const float> g) {
      std::vector<float> da(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * df(ai->data[i]);
      accumulate_grad(*ai, da);
    });
  }
  return out;
}

}  // namespace

Tensor relu(const Tensor& a) {
  return pointwise(
      a, [](float v) { return v < 0.0f ? 0.0f : v; },
      [](float v) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor leaky_relu(const Tensor& a, float slope) {
  return pointwise(
      a, [slope](float v) { return v > 0.0f ? v : slope * v; },
      [slope](float v) { return v > 0.0f ? 1.0f : slope; });
}

Tensor elu(const Tensor& a, float alpha) {
  return pointwise(
      a, [alpha](float v) { return v > 0.0f ? v : alpha * std::expm1(v); },
      [alpha](float v) { return v > 0.0f ? 1.0f : alpha * std::exp(v); });
}

Tensor dropout(const Tensor& a, float p, Rng& rng, bool training) {
  if (p < 0.0f || p >= 1.0f) throw ConfigError("dropout: p must lie in [0, 1)");
  if (!training || p == 0.0f) return a;
  const float keep_scale = 1.0f / (1.0f - p);
  std::vector<float> factor(a.size());
  for (auto& f : factor) f = rng.bernoulli(p) ? 0.0f : keep_scale;
  Tensor out(a.rows(), a.cols());
  for (std::size_t i = 0; i < factor.size(); ++i) out.data()[i] = a.data()[i] * factor[i];
  if (needs_recording({&a})) {
    auto ai = a.shared_impl();
    Tape::active()->record({a}, out, [ai, factor = std::move(factor)](std::span<const float> g) {
      std::vector<float> da(g.size());
      for (std::size_t i = 0; i < g.size(); ++i) da[i] = g[i] * factor[i];
      accumulate_grad(*ai, da);
    });
  }
  return out;
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(p.row(r), p.row(r) + p.cols(), out.row(r) + offset);
    offset += p.cols();
  }
  bool record = false;
  for (const auto& p : parts) record = record || needs_recording({&p});
  if (record) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const auto& p : parts) impls.push_back(p.shared_impl());
    Tape::active()->record(std::vector<Tensor>(parts.begin(), parts.end()), out,
                           [impls, rows, cols](std::span<const float> g) {
                             std::size_t off = 0;
                             for (const auto& impl : impls) {
                               const std::size_t pc = impl->cols;
                               if (impl->requires_grad) {
                                 std::vector<float> d(rows * pc);
                                 for (std::size_t r = 0; r < rows; ++r)
                                   std::copy(g.data() + r * cols + off,
                                             g.data() + r * cols + off + pc, d.data() + r * pc);
                                 accumulate_grad(*impl, d);
                               }
                               off += pc;
                             }
                           });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t count) {
  if (begin + count > a.cols()) throw DimensionError("slice_cols: range exceeds columns");
  const std::size_t rows = a.rows(), cols = a.cols();
  Tensor out(rows, count);
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(a.row(r) + begin, a.row(r) + begin + count, out.row(r));
  if (needs_recording({&a})) {
    auto ai = a.shared_impl();
    Tape::active()->record({a}, out, [ai, rows, cols, begin, count](std::span<const float> g) {
      std::vector<float> da(rows * cols, 0.0f);
      for (std::size_t r = 0; r < rows; ++r)
        std::copy(g.data() + r * count, g.data() + (r + 1) * count, da.data() + r * cols + begin);
      accumulate_grad(*ai, da);
    });
  }
  return out;
}

Tensor row_sum(const Tensor& a) {
  const std::size_t rows = a.rows(), cols = a.cols();
  Tensor out(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    float acc = 0.0f;
    for (std::size_t c = 0; c < cols; ++c) acc += a(r, c);
    out(r, 0) = acc;
  }
  if (needs_recording({&a})) {
    auto ai = a.shared_impl();
    Tape::active()->record({a}, out, [ai, rows, cols](std::span<const float> g) {
      std::vector<float> da(rows * cols);
      for (std::size_t r = 0; r < rows; ++r)
        std::fill(da.begin() + r * cols, da.begin() + (r + 1) * cols, g[r]);
      accumulate_grad(*ai, da);
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  float acc = 0.0f;
  for (float v : a.data()) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (needs_recording({&a})) {
    auto ai = a.shared_impl();
    Tape::active()->record({a}, out, [ai](std::span<const float> g) {
      std::vector<float> da(ai->data.size(), g[0]);
      accumulate_grad(*ai, da);
    });
  }
  return out;
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ContractError("mean: empty tensor");
  return scale(sum(a), 1.0f / static_cast<float>(a.size()));
}

Tensor gather(const Tensor& src, std::span<const Index> index) {
  check_index(index, src.rows(), "gather");
  const std::size_t cols = src.cols();
  const std::size_t n = src.rows();
  Tensor out(index.size(), cols);
  for (std::size_t e = 0; e < index.size(); ++e)
    std::copy(src.row(index[e]), src.row(index[e]) + cols, out.row(e));
  if (needs_recording({&src})) {
    auto si = src.shared_impl();
    std::vector<Index> idx(index.begin(), index.end());
    Tape::active()->record({src}, out, [si, idx = std::move(idx), n, cols](std::span<const float> g) {
      std::vector<float> ds(n * cols, 0.0f);
      for (std::size_t e = 0; e < idx.size(); ++e) {
        float* d = ds.data() + static_cast<std::size_t>(idx[e]) * cols;
        const float* ge = g.data() + e * cols;
        for (std::size_t c = 0; c < cols; ++c) d[c] += ge[c];
      }
      accumulate_grad(*si, ds);
    });
  }
  return out;
}

Tensor scatter_add(const Tensor& src, std::span<const Index> index, std::size_t dim_size) {
  if (index.size() != src.rows()) {
    throw DimensionError("scatter_add: " + std::to_string(index.size()) + " indices for " +
                         std::to_string(src.rows()) + " rows");
  }
  check_index(index, dim_size, "scatter_add");
  const std::size_t cols = src.cols();
  Tensor out(dim_size, cols);
  for (std::size_t e = 0; e < index.size(); ++e) {
    float* o = out.row(index[e]);
    const float* s = src.row(e);
    for (std::size_t c = 0; c < cols; ++c) o[c] += s[c];
  }
  if (needs_recording({&src})) {
    auto si = src.shared_impl();
    std::vector<Index> idx(index.begin(), index.end());
    Tape::active()->record({src}, out, [si, idx = std::move(idx), cols](std::span<const float> g) {
      std::vector<float> ds(idx.size() * cols);
      for (std::size_t e = 0; e < idx.size(); ++e)
        std::copy(g.data() + static_cast<std::size_t>(idx[e]) * cols,
                  g.data() + (static_cast<std::size_t>(idx[e]) + 1) * cols, ds.data() + e * cols);
      accumulate_grad(*si, ds);
    });
  }
  return out;
}

Tensor segment_softmax(const Tensor& logits, std::span<const Index> seg, std::size_t n_segments) {
  if (seg.size() != logits.rows()) throw DimensionError("segment_softmax: segment ids vs rows");
  check_index(seg, n_segments, "segment_softmax");
  const std::size_t rows = logits.rows(), cols = logits.cols();
  std::vector<float> seg_max(n_segments * cols, -std::numeric_limits<float>::infinity());
  for (std::size_t e = 0; e < rows; ++e)
    for (std::size_t c = 0; c < cols; ++c) {
      float& m = seg_max[seg[e] * cols + c];
      m = std::max(m, logits(e, c));
    }
  Tensor out(rows, cols);
  std::vector<float> seg_sum(n_segments * cols, 0.0f);
  for (std::size_t e = 0; e < rows; ++e)
    for (std::size_t c = 0; c < cols; ++c) {
      const float v = std::exp(logits(e, c) - seg_max[seg[e] * cols + c]);
      out(e, c) = v;
      seg_sum[seg[e] * cols + c] += v;
    }
  for (std::size_t e = 0; e < rows; ++e)
    for (std::size_t c = 0; c < cols; ++c) out(e, c) /= seg_sum[seg[e] * cols + c];
  if (needs_recording({&logits})) {
    auto li = logits.shared_impl();
    auto probs = out.data();
    std::vector<float> y(probs.begin(), probs.end());
    std::vector<Index> s(seg.begin(), seg.end());
    Tape::active()->record({logits}, out, [li, y = std::move(y), s = std::move(s), n_segments, rows,
                                           cols](std::span<const float> g) {
      // dl = y * (g - sum_seg(g * y))
      std::vector<float> dot(n_segments * cols, 0.0f);
      for (std::size_t e = 0; e < rows; ++e)
        for (std::size_t c = 0; c < cols; ++c) dot[s[e] * cols + c] += g[e * cols + c] * y[e * cols + c];
      std::vector<float> dl(rows * cols);
      for (std::size_t e = 0; e < rows; ++e)
        for (std::size_t c = 0; c < cols; ++c)
          dl[e * cols + c] = y[e * cols + c] * (g[e * cols + c] - dot[s[e] * cols + c]);
      accumulate_grad(*li, dl);
    });
  }
  return out;
}

}  // namespace dq
