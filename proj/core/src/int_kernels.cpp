#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <thread>

#if defined(__AVX512F__) && defined(__AVX512BW__) && defined(__AVX512VNNI__)
#define DQ_HAVE_VNNI 1
#include <immintrin.h>
#endif
#if defined(__AVX512VBMI__) && defined(DQ_HAVE_VNNI)
#define DQ_HAVE_VBMI 1
#endif

#include "dq/error.hpp"
#include "dq/int_inference.hpp"

namespace dq {

std::int64_t rounding_shift_half_even(std::int64_t v, int shift, std::int32_t zero_point) {
  if (shift <= 0) return v + zero_point;
  const std::int64_t q = (v >> shift) + zero_point;  // floor
  const std::int64_t r = v & ((std::int64_t{1} << shift) - 1);
  const std::int64_t half = std::int64_t{1} << (shift - 1);
  // Half an f32 ulp at the larger of |x/s| and |x/s + z|.
  const std::uint64_t mag = std::max<std::uint64_t>(std::max(std::abs(q), std::abs(q - zero_point)), 1);
  const int t = shift + static_cast<int>(std::bit_width(mag)) - 1 - 24;
  const std::int64_t tol = t >= 0 ? std::int64_t{1} << t : 0;
  if (r > half + tol || (r >= half - tol && (q & 1))) return q + 1;
  return q;
}

namespace {

constexpr int kMultiplierBits = 30;

int shift_for(double m) {
  if (!std::isfinite(m)) throw ContractError("requantizer: scale must be finite");
  if (m == 0.0) return std::numeric_limits<int>::max();
  int exp = 0;
  std::frexp(std::fabs(m), &exp);  // m = f * 2^exp, f in [0.5, 1)
  return kMultiplierBits - exp;
}

}  // namespace

Requantizer Requantizer::from_real(double m, const QParams& out) {
  const double ms[1] = {m};
  return from_reals(ms, out).front();
}

std::vector<Requantizer> Requantizer::from_reals(std::span<const double> ms, const QParams& out) {
  int shift = std::numeric_limits<int>::max();
  for (double m : ms) shift = std::min(shift, shift_for(m));
  if (shift == std::numeric_limits<int>::max()) throw ContractError("requantizer: all scales are zero");
  if (shift < 1 || shift > 62) throw UnsupportedError("requantizer: scale ratio outside the fixed-point range");
  std::vector<Requantizer> rqs;
  for (double m : ms) {
    Requantizer r;
    r.multiplier = static_cast<std::int64_t>(std::nearbyint(std::ldexp(m, shift)));
    r.shift = shift;
    r.zero_point = out.zero_point;
    r.q_min = out.q_min;
    r.q_max = out.q_max;
    rqs.push_back(r);
  }
  return rqs;
}

std::int64_t Requantizer::offset_for(double value) const {
  const double v = std::ldexp(value, shift);
  if (std::fabs(v) > 9.0e17) throw UnsupportedError("requantizer: offset does not fit the fixed-point range");
  return static_cast<std::int64_t>(std::nearbyint(v));
}

QTensor quantize_tensor(const Tensor& x, const QParams& qp) {
  if (qp.q_min < -128 || qp.q_max > 127) throw UnsupportedError("quantize_tensor: grid wider than int8");
  QTensor q;
  q.rows = x.rows();
  q.cols = x.cols();
  q.qp = qp;
  q.data.resize(x.size());
  const float* src = x.data().data();
  std::size_t i = 0;
#ifdef DQ_HAVE_VNNI
  const __m512 scale = _mm512_set1_ps(qp.scale);
  const __m512 zero = _mm512_set1_ps(static_cast<float>(qp.zero_point));
  const __m512 lo = _mm512_set1_ps(static_cast<float>(qp.q_min));
  const __m512 hi = _mm512_set1_ps(static_cast<float>(qp.q_max));
  for (; i + 16 <= x.size(); i += 16) {
    __m512 v = _mm512_add_ps(_mm512_div_ps(_mm512_loadu_ps(src + i), scale), zero);
    v = _mm512_roundscale_ps(v, _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
    v = _mm512_min_ps(_mm512_max_ps(v, lo), hi);
    _mm_storeu_si128(reinterpret_cast<__m128i*>(q.data.data() + i), _mm512_cvtepi32_epi8(_mm512_cvtps_epi32(v)));
  }
#endif
  for (; i < x.size(); ++i) q.data[i] = static_cast<std::int8_t>(quantize_code(src[i], qp));
  return q;
}

Tensor dequantize_tensor(const QTensor& q) {
  Tensor out(q.rows, q.cols);
  for (std::size_t i = 0; i < q.data.size(); ++i) out.data()[i] = dequantize_code(q.data[i], q.qp);
  return out;
}

CodeTable make_code_table(const QParams& in, const QParams& out, const std::function<float(float)>& fn) {
  CodeTable t{};
  for (int c = -128; c <= 127; ++c) {
    const std::int32_t cc = std::clamp<std::int32_t>(c, in.q_min, in.q_max);
    t[static_cast<std::size_t>(c + 128)] = static_cast<std::int8_t>(quantize_code(fn(dequantize_code(cc, in)), out));
  }
  return t;
}

void apply_code_table(const CodeTable& table, std::span<std::int8_t> codes) {
  std::size_t i = 0;
#ifdef DQ_HAVE_VBMI
  const __m512i t0 = _mm512_loadu_si512(table.data());
  const __m512i t1 = _mm512_loadu_si512(table.data() + 64);
  const __m512i t2 = _mm512_loadu_si512(table.data() + 128);
  const __m512i t3 = _mm512_loadu_si512(table.data() + 192);
  const __m512i bias = _mm512_set1_epi8(static_cast<char>(0x80));
  for (; i + 64 <= codes.size(); i += 64) {
    const __m512i idx = _mm512_xor_si512(_mm512_loadu_si512(codes.data() + i), bias);
    const __m512i lo = _mm512_permutex2var_epi8(t0, idx, t1);
    const __m512i hi = _mm512_permutex2var_epi8(t2, idx, t3);
    const __mmask64 sel = _mm512_movepi8_mask(idx);
    _mm512_storeu_si512(codes.data() + i, _mm512_mask_blend_epi8(sel, lo, hi));
  }
#endif
  for (; i < codes.size(); ++i) codes[i] = table[static_cast<std::uint8_t>(codes[i] + 128)];
}

PackedWeights pack_weights(std::span<const std::int8_t> w, std::size_t k, std::size_t n) {
  if (w.size() != k * n) throw DimensionError("pack_weights: size does not match shape");
  PackedWeights p;
  p.k = k;
  p.n = n;
  p.k4 = (k + 3) / 4 * 4;
  p.n16 = (n + 15) / 16 * 16;
  p.packed.assign(p.k4 * p.n16, 0);
  p.col_sum.assign(n, 0);
  p.raw.assign(w.begin(), w.end());
  for (std::size_t kk = 0; kk < k; ++kk) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::int8_t v = w[kk * n + j];
      p.packed[((kk / 4) * p.n16 + j) * 4 + kk % 4] = v;
      p.col_sum[j] += v;
    }
  }
  return p;
}

bool int_kernels_vectorized() {
#ifdef DQ_HAVE_VNNI
  return true;
#else
  return false;
#endif
}

namespace {

void requantize_row(const std::int32_t* acc, std::size_t n, const Requantizer& rq, const std::int64_t* offsets,
                    std::int8_t* out);

template <typename Fn>
void parallel_rows(std::size_t rows, int threads, Fn&& fn) {
  const std::size_t t = static_cast<std::size_t>(std::max(1, threads));
  if (t == 1 || rows < 2 * t) {
    fn(std::size_t{0}, rows);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (rows + t - 1) / t;
  for (std::size_t w = 0; w < t; ++w) {
    const std::size_t b = w * chunk, e = std::min(rows, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& th : pool) th.join();
}

// Accumulates one row of sum_k (x[k] + 128) * w[k, j] into acc[0..n16).
void row_dot_u8(const std::int8_t* x, const PackedWeights& w, std::int32_t* acc) {
#ifdef DQ_HAVE_VNNI
  const std::size_t blocks = w.n16 / 16;
  const std::size_t kb_count = w.k4 / 4;
  const std::uint32_t flip = 0x80808080u;
  auto word = [&](std::size_t kb) {
    std::uint32_t v = 0x80808080u;  // codes of the padding map to 0 after the flip
    const std::size_t base = kb * 4;
    if (base + 4 <= w.k) {
      std::memcpy(&v, x + base, 4);
    } else {
      for (std::size_t t = 0; base + t < w.k; ++t)
        v = (v & ~(0xffu << (8 * t))) | (static_cast<std::uint32_t>(static_cast<std::uint8_t>(x[base + t])) << (8 * t));
    }
    return v ^ flip;
  };
  const std::size_t full = w.k / 4;
  for (std::size_t jb = 0; jb < blocks; jb += 8) {
    const std::size_t nb = std::min<std::size_t>(8, blocks - jb);
    __m512i a[8];
    for (std::size_t b = 0; b < 8; ++b) a[b] = _mm512_setzero_si512();
    const std::int8_t* base = w.packed.data() + jb * 64;
    const auto step = [&](std::size_t kb, std::uint32_t u) {
      const __m512i xb = _mm512_set1_epi32(static_cast<int>(u));
      const std::int8_t* wp = base + kb * w.n16 * 4;
      if (nb == 1) {
        a[0] = _mm512_dpbusd_epi32(a[0], xb, _mm512_loadu_si512(wp));
      } else if (nb == 8) {
        for (std::size_t b = 0; b < 8; ++b) a[b] = _mm512_dpbusd_epi32(a[b], xb, _mm512_loadu_si512(wp + b * 64));
      } else {
        for (std::size_t b = 0; b < nb; ++b) a[b] = _mm512_dpbusd_epi32(a[b], xb, _mm512_loadu_si512(wp + b * 64));
      }
    };
    for (std::size_t kb = 0; kb < full; ++kb) {
      std::uint32_t u;
      std::memcpy(&u, x + kb * 4, 4);
      u ^= flip;
      if (u != 0) step(kb, u);
    }
    for (std::size_t kb = full; kb < kb_count; ++kb) {
      const std::uint32_t u = word(kb);
      if (u != 0) step(kb, u);
    }
    for (std::size_t b = 0; b < nb; ++b) _mm512_storeu_si512(acc + (jb + b) * 16, a[b]);
  }
#else
  std::fill(acc, acc + w.n16, 0);
  for (std::size_t kk = 0; kk < w.k; ++kk) {
    const std::int32_t xu = static_cast<std::int32_t>(x[kk]) + 128;
    if (xu == 0) continue;
    const std::int8_t* wr = w.raw.data() + kk * w.n;
    for (std::size_t j = 0; j < w.n; ++j) acc[j] += xu * wr[j];
  }
#endif
}

}  // namespace

std::vector<std::int32_t> int_linear_accumulate(const QTensor& x, const PackedWeights& w) {
  if (x.cols != w.k) throw DimensionError("int_linear: input width does not match weights");
  std::vector<std::int32_t> out(x.rows * w.n);
  std::vector<std::int32_t> acc(w.n16);
  const std::int32_t corr = 128 + x.qp.zero_point;
  for (std::size_t i = 0; i < x.rows; ++i) {
    row_dot_u8(x.row(i), w, acc.data());
    for (std::size_t j = 0; j < w.n; ++j) out[i * w.n + j] = acc[j] - corr * w.col_sum[j];
  }
  return out;
}

void int_linear(const QTensor& x, const PackedWeights& w, const Requantizer& rq,
                std::span<const std::int64_t> offsets, QTensor& out, int threads) {
  if (x.cols != w.k) throw DimensionError("int_linear: input width does not match weights");
  if (!offsets.empty() && offsets.size() != w.n) throw DimensionError("int_linear: offset count does not match width");
  out.rows = x.rows;
  out.cols = w.n;
  out.data.resize(x.rows * w.n);
  const std::int32_t corr = 128 + x.qp.zero_point;
  std::vector<std::int64_t> off(w.n);
  for (std::size_t j = 0; j < w.n; ++j) off[j] = offsets.empty() ? 0 : offsets[j];
  parallel_rows(x.rows, threads, [&](std::size_t b, std::size_t e) {
    std::vector<std::int32_t> acc(w.n16);
    for (std::size_t i = b; i < e; ++i) {
      row_dot_u8(x.row(i), w, acc.data());
      for (std::size_t j = 0; j < w.n; ++j) acc[j] -= corr * w.col_sum[j];
      requantize_row(acc.data(), w.n, rq, off.data(), out.data.data() + i * w.n);
    }
  });
}

CsrAdjacency CsrAdjacency::from_edges(const EdgeList& edges) {
  CsrAdjacency a;
  a.num_nodes = edges.num_nodes;
  a.row_ptr.assign(static_cast<std::size_t>(edges.num_nodes) + 1, 0);
  for (Index d : edges.dst) {
    if (d < 0 || d >= edges.num_nodes) throw IndexError("csr: edge target out of range");
    ++a.row_ptr[static_cast<std::size_t>(d) + 1];
  }
  for (std::size_t i = 1; i < a.row_ptr.size(); ++i) a.row_ptr[i] += a.row_ptr[i - 1];
  a.col_idx.resize(edges.size());
  a.edge_id.resize(edges.size());
  std::vector<Index> fill(a.row_ptr.begin(), a.row_ptr.end() - 1);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const Index s = edges.src[e];
    if (s < 0 || s >= edges.num_nodes) throw IndexError("csr: edge source out of range");
    const Index pos = fill[edges.dst[e]]++;
    a.col_idx[pos] = s;
    a.edge_id[pos] = static_cast<Index>(e);
  }
  return a;
}

Index CsrAdjacency::max_row_length() const {
  Index m = 0;
  for (std::size_t i = 0; i + 1 < row_ptr.size(); ++i) m = std::max(m, row_ptr[i + 1] - row_ptr[i]);
  return m;
}

void CsrAdjacency::validate() const {
  if (row_ptr.size() != static_cast<std::size_t>(num_nodes) + 1 || row_ptr.front() != 0) {
    throw ContractError("csr: row_ptr has the wrong length or start");
  }
  for (std::size_t i = 1; i < row_ptr.size(); ++i)
    if (row_ptr[i] < row_ptr[i - 1]) throw ContractError("csr: row_ptr decreases");
  if (static_cast<std::size_t>(row_ptr.back()) != col_idx.size()) throw ContractError("csr: row_ptr[N] != E");
  for (Index c : col_idx)
    if (c < 0 || c >= num_nodes) throw IndexError("csr: column index out of range");
}

std::vector<std::int32_t> int_spmm_accumulate(const CsrAdjacency& adj, const QTensor& x, std::int32_t zero_point) {
  std::vector<std::int32_t> acc(static_cast<std::size_t>(adj.num_nodes) * x.cols, 0);
  for (Index i = 0; i < adj.num_nodes; ++i) {
    std::int32_t* a = acc.data() + static_cast<std::size_t>(i) * x.cols;
    for (Index p = adj.row_ptr[i]; p < adj.row_ptr[i + 1]; ++p) {
      const std::int8_t* xr = x.row(static_cast<std::size_t>(adj.col_idx[p]));
      for (std::size_t f = 0; f < x.cols; ++f) a[f] += static_cast<std::int32_t>(xr[f]) - zero_point;
    }
  }
  return acc;
}

namespace {

#ifdef DQ_HAVE_VNNI
// Vector requantization of 16 int32 accumulators.
inline __m128i requantize16(__m512i acc, const Requantizer& rq, const std::int64_t* offsets) {
  const __m512i m = _mm512_set1_epi64(rq.multiplier);
  const __m512i one = _mm512_set1_epi64(1);
  const __m512i zp = _mm512_set1_epi64(rq.zero_point);
  const __m512i half = _mm512_set1_epi64(std::int64_t{1} << (rq.shift - 1));
  const __m512i low_mask = _mm512_set1_epi64((std::int64_t{1} << rq.shift) - 1);
  const __m512i tol_base = _mm512_set1_epi64(rq.shift + 63 - 24);
  const __m128i sh = _mm_cvtsi32_si128(rq.shift);
  __m512i res[2];
  for (int h = 0; h < 2; ++h) {
    const __m256i part = h == 0 ? _mm512_castsi512_si256(acc) : _mm512_extracti64x4_epi64(acc, 1);
    __m512i v = _mm512_mullo_epi64(_mm512_cvtepi32_epi64(part), m);
    if (offsets) v = _mm512_add_epi64(v, _mm512_loadu_si512(offsets + 8 * h));
    const __m512i floor = _mm512_sra_epi64(v, sh);
    __m512i q = _mm512_add_epi64(floor, zp);
    const __m512i r = _mm512_and_si512(v, low_mask);
    const __m512i mag = _mm512_max_epu64(_mm512_max_epu64(_mm512_abs_epi64(q), _mm512_abs_epi64(floor)), one);
    // shift + bit_width(mag) - 1 - 24; negative counts become huge and yield 0.
    const __m512i tol = _mm512_sllv_epi64(one, _mm512_sub_epi64(tol_base, _mm512_lzcnt_epi64(mag)));
    const __mmask8 up = _mm512_cmpgt_epi64_mask(r, _mm512_add_epi64(half, tol)) |
                        (_mm512_cmpge_epi64_mask(r, _mm512_sub_epi64(half, tol)) & _mm512_test_epi64_mask(q, one));
    res[h] = _mm512_mask_add_epi64(q, up, q, one);
  }
  __m512i q = _mm512_inserti64x4(_mm512_castsi256_si512(_mm512_cvtepi64_epi32(res[0])), _mm512_cvtepi64_epi32(res[1]), 1);
  q = _mm512_max_epi32(q, _mm512_set1_epi32(rq.q_min));
  q = _mm512_min_epi32(q, _mm512_set1_epi32(rq.q_max));
  return _mm512_cvtepi32_epi8(q);
}
#endif

void requantize_row(const std::int32_t* acc, std::size_t n, const Requantizer& rq, const std::int64_t* offsets,
                    std::int8_t* out) {
  std::size_t j = 0;
#ifdef DQ_HAVE_VNNI
  for (; j + 16 <= n; j += 16) {
    const __m128i r = requantize16(_mm512_loadu_si512(acc + j), rq, offsets ? offsets + j : nullptr);
    _mm_storeu_si128(reinterpret_cast<__m128i*>(out + j), r);
  }
#endif
  for (; j < n; ++j) out[j] = static_cast<std::int8_t>(rq.apply(acc[j], offsets ? offsets[j] : 0));
}

#ifdef DQ_HAVE_VBMI
inline __m512i lookup64(const __m512i idx_signed, const CodeTable& t) {
  const __m512i idx = _mm512_xor_si512(idx_signed, _mm512_set1_epi8(static_cast<char>(0x80)));
  const __m512i lo = _mm512_permutex2var_epi8(_mm512_loadu_si512(t.data()), idx, _mm512_loadu_si512(t.data() + 64));
  const __m512i hi = _mm512_permutex2var_epi8(_mm512_loadu_si512(t.data() + 128), idx, _mm512_loadu_si512(t.data() + 192));
  return _mm512_mask_blend_epi8(_mm512_movepi8_mask(idx), lo, hi);
}

#endif

}  // namespace

#ifdef DQ_HAVE_VBMI
namespace {

// Sums the (looked-up) codes of one 64-column chunk over a CSR row, keeping
// B blocks of 16 int32 lanes in registers.
template <int B>
void accumulate_chunk(const CsrAdjacency& adj, const QTensor& x, std::size_t c0, __mmask64 lanes, Index p0, Index p1,
                      std::span<const CodeTable> tables, std::span<const std::uint16_t> table_index, bool single,
                      std::int32_t* acc) {
  __m512i a[B];
  for (int b = 0; b < B; ++b) a[b] = _mm512_setzero_si512();
  for (Index p = p0; p < p1; ++p) {
    __m512i v = _mm512_maskz_loadu_epi8(lanes, x.row(static_cast<std::size_t>(adj.col_idx[p])) + c0);
    if (!tables.empty()) v = lookup64(v, single ? tables.front() : tables[table_index[p]]);
    for (int b = 0; b < B; ++b) a[b] = _mm512_add_epi32(a[b], _mm512_cvtepi8_epi32(_mm512_extracti32x4_epi32(v, b)));
  }
  for (int b = 0; b < B; ++b) _mm512_storeu_si512(acc + c0 + 16 * b, a[b]);
}

}  // namespace
#endif

void int_spmm(const CsrAdjacency& adj, const QTensor& x, std::span<const CodeTable> tables,
              std::span<const std::uint16_t> table_index, std::int32_t msg_zero_point,
              const Requantizer& rq, QTensor& out, int threads) {
  if (x.rows != static_cast<std::size_t>(adj.num_nodes)) throw DimensionError("int_spmm: feature rows != nodes");
  const bool single = tables.size() == 1 && table_index.empty();
  if (!tables.empty() && !single && table_index.size() != adj.num_entries()) {
    throw DimensionError("int_spmm: one table index per CSR entry is required");
  }
  const std::size_t f = x.cols;
  out.rows = x.rows;
  out.cols = f;
  out.data.resize(x.rows * f);
  parallel_rows(x.rows, threads, [&](std::size_t b, std::size_t e) {
    std::vector<std::int32_t> acc((f + 63) / 64 * 64);
    for (std::size_t i = b; i < e; ++i) {
      const Index p0 = adj.row_ptr[i], p1 = adj.row_ptr[i + 1];
#ifdef DQ_HAVE_VBMI
      for (std::size_t c0 = 0; c0 < f; c0 += 64) {
        const std::size_t w = std::min<std::size_t>(64, f - c0);
        const __mmask64 lanes = ~std::uint64_t{0} >> (64 - w);
        switch ((w + 15) / 16) {
          case 1: accumulate_chunk<1>(adj, x, c0, lanes, p0, p1, tables, table_index, single, acc.data()); break;
          case 2: accumulate_chunk<2>(adj, x, c0, lanes, p0, p1, tables, table_index, single, acc.data()); break;
          case 3: accumulate_chunk<3>(adj, x, c0, lanes, p0, p1, tables, table_index, single, acc.data()); break;
          default: accumulate_chunk<4>(adj, x, c0, lanes, p0, p1, tables, table_index, single, acc.data()); break;
        }
      }
#else
      std::fill(acc.begin(), acc.end(), 0);
      for (Index p = p0; p < p1; ++p) {
        const std::int8_t* xr = x.row(static_cast<std::size_t>(adj.col_idx[p]));
        if (tables.empty()) {
          for (std::size_t k = 0; k < f; ++k) acc[k] += xr[k];
          continue;
        }
        const CodeTable& t = single ? tables.front() : tables[table_index[p]];
        for (std::size_t k = 0; k < f; ++k) acc[k] += t[static_cast<std::uint8_t>(xr[k] + 128)];
      }
#endif
      const std::int32_t corr = (p1 - p0) * msg_zero_point;
      for (std::size_t k = 0; k < f; ++k) acc[k] -= corr;
      requantize_row(acc.data(), f, rq, nullptr, out.data.data() + i * f);
    }
  });
}

void int_requantize_rows(const QTensor& x, const Requantizer& rq, std::span<const std::int64_t> offsets,
                         QTensor& out, int threads) {
  if (!offsets.empty() && offsets.size() != x.cols) throw DimensionError("requantize: offset count != width");
  out.rows = x.rows;
  out.cols = x.cols;
  out.data.resize(x.data.size());
  parallel_rows(x.rows, threads, [&](std::size_t b, std::size_t e) {
    std::vector<std::int32_t> acc(x.cols);
    for (std::size_t i = b; i < e; ++i) {
      const std::int8_t* xr = x.row(i);
      for (std::size_t k = 0; k < x.cols; ++k) acc[k] = static_cast<std::int32_t>(xr[k]) - x.qp.zero_point;
      requantize_row(acc.data(), x.cols, rq, offsets.empty() ? nullptr : offsets.data(), out.data.data() + i * x.cols);
    }
  });
}

}  // namespace dq
