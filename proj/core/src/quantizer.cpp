#include "dq/quantizer.hpp"

#include <algorithm>
#include <limits>

#include "dq/error.hpp"

namespace dq {

std::string to_string(SteMode m) { return m == SteMode::vanilla ? "vanilla" : "grad_clip"; }

std::string to_string(ObserverKind k) {
  switch (k) {
    case ObserverKind::minmax: return "minmax";
    case ObserverKind::momentum: return "momentum";
    case ObserverKind::percentile: return "percentile";
  }
  return "?";
}

SteMode parse_ste(const std::string& s) {
  if (s == "vanilla") return SteMode::vanilla;
  if (s == "grad_clip" || s == "gc" || s == "clip") return SteMode::grad_clip;
  throw ConfigError("unknown STE mode '" + s + "'");
}

ObserverKind parse_observer(const std::string& s) {
  if (s == "minmax" || s == "min_max") return ObserverKind::minmax;
  if (s == "momentum") return ObserverKind::momentum;
  if (s == "percentile") return ObserverKind::percentile;
  throw ConfigError("unknown observer '" + s + "'");
}

std::int32_t QuantConfig::q_min() const {
  if (bypass()) return std::numeric_limits<std::int32_t>::min();
  return is_signed ? -(1 << (bits - 1)) : 0;
}

std::int32_t QuantConfig::q_max() const {
  if (bypass()) return std::numeric_limits<std::int32_t>::max();
  return is_signed ? (1 << (bits - 1)) - 1 : (1 << bits) - 1;
}

void QuantConfig::validate() const {
  if (!bypass() && (bits < 2 || bits > 16)) {
    throw ConfigError("quant config: bits must be in [2, 16] or >= 32 (pass-through)");
  }
  if (symmetric && !is_signed) throw ConfigError("quant config: symmetric ranges need signed codes");
  if (!(momentum > 0.0f && momentum <= 1.0f)) throw ConfigError("quant config: momentum must lie in (0, 1]");
  if (!(percentile > 0.0f && percentile < 0.5f)) {
    throw ConfigError("quant config: percentile fraction must lie in (0, 0.5)");
  }
  if (percentile_base == ObserverKind::percentile) {
    throw ConfigError("quant config: percentile base tracker must be minmax or momentum");
  }
}

namespace {

// k-th smallest (0-based) of `v`, with zeros handled as one block: sparse
// activations are common and this keeps selection proportional to the
// number of nonzeros.
struct OrderStats {
  std::vector<float> neg;
  std::vector<float> pos;
  std::size_t zeros = 0;

  explicit OrderStats(std::vector<float>& values) {
    for (float v : values) {
      if (v < 0.0f) neg.push_back(v);
      else if (v > 0.0f) pos.push_back(v);
      else ++zeros;
    }
  }

  std::size_t size() const { return neg.size() + zeros + pos.size(); }

  float kth(std::size_t k) {
    if (k < neg.size()) {
      std::nth_element(neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(k), neg.end());
      return neg[k];
    }
    k -= neg.size();
    if (k < zeros) return 0.0f;
    k -= zeros;
    std::nth_element(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(k), pos.end());
    return pos[k];
  }
};

}  // namespace

float quantile_inplace(std::vector<float>& values, double q) {
  if (values.empty()) throw ContractError("quantile of an empty set");
  q = std::clamp(q, 0.0, 1.0);
  OrderStats stats(values);
  const double h = static_cast<double>(stats.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - static_cast<double>(lo);
  const float a = stats.kth(lo);
  if (frac == 0.0 || lo + 1 >= stats.size()) return a;
  const float b = stats.kth(lo + 1);
  return static_cast<float>(static_cast<double>(a) + frac * (static_cast<double>(b) - a));
}

float quantile(std::span<const float> values, double q) {
  std::vector<float> scratch(values.begin(), values.end());
  return quantile_inplace(scratch, q);
}

QuantModule::QuantModule(QuantConfig config) : config_(config) { config_.validate(); }

void QuantModule::set_config(const QuantConfig& config) {
  config.validate();
  config_ = config;
}

void QuantModule::restore(float x_min, float x_max, bool initialized) {
  x_min_ = x_min;
  x_max_ = x_max;
  initialized_ = initialized;
}

void QuantModule::track(float lo, float hi) {
  const ObserverKind rule =
      config_.observer == ObserverKind::percentile ? config_.percentile_base : config_.observer;
  if (!initialized_) {
    x_min_ = lo;
    x_max_ = hi;
    initialized_ = true;
    return;
  }
  if (rule == ObserverKind::momentum) {
    const float c = config_.momentum;
    x_min_ = (1.0f - c) * x_min_ + c * lo;
    x_max_ = (1.0f - c) * x_max_ + c * hi;
  } else {
    x_min_ = std::min(x_min_, lo);
    x_max_ = std::max(x_max_, hi);
  }
}

void QuantModule::observe(std::span<const float> x) {
  if (x.empty() || config_.bypass()) return;
  if (config_.observer == ObserverKind::percentile) {
    std::vector<float> scratch(x.begin(), x.end());
    OrderStats stats(scratch);
    auto at = [&stats](double q) {
      const double h = static_cast<double>(stats.size() - 1) * q;
      const auto lo = static_cast<std::size_t>(std::floor(h));
      const double frac = h - static_cast<double>(lo);
      const float a = stats.kth(lo);
      if (frac == 0.0 || lo + 1 >= stats.size()) return a;
      const float b = stats.kth(lo + 1);
      return static_cast<float>(static_cast<double>(a) + frac * (static_cast<double>(b) - a));
    };
    const float lo = at(config_.percentile);
    const float hi = at(1.0 - config_.percentile);
    track(lo, hi);
    return;
  }
  const auto [mn, mx] = std::minmax_element(x.begin(), x.end());
  track(*mn, *mx);
}

QParams QuantModule::qparams() const {
  if (config_.bypass()) throw ContractError("qparams: pass-through site has no integer grid");
  if (!initialized_) throw ContractError("qparams: quantization site has not observed any data");
  QParams qp;
  qp.q_min = config_.q_min();
  qp.q_max = config_.q_max();
  if (config_.symmetric) {
    const double bound = std::max(std::fabs(static_cast<double>(x_min_)), std::fabs(static_cast<double>(x_max_)));
    if (bound == 0.0) return qp;
    qp.scale = static_cast<float>(bound / qp.q_max);
    qp.zero_point = 0;
    return qp;
  }
  // The range always contains 0 so that it is exactly representable.
  const double lo = std::min(0.0, static_cast<double>(x_min_));
  const double hi = std::max(0.0, static_cast<double>(x_max_));
  if (hi == lo) {
    qp.scale = 1.0f;
    qp.zero_point = std::clamp<std::int32_t>(0, qp.q_min, qp.q_max);
    return qp;
  }
  const double s = (hi - lo) / static_cast<double>(qp.q_max - qp.q_min);
  qp.scale = static_cast<float>(s);
  const double z = std::nearbyint(static_cast<double>(qp.q_min) - lo / s);
  qp.zero_point = static_cast<std::int32_t>(std::clamp(z, static_cast<double>(qp.q_min),
                                                       static_cast<double>(qp.q_max)));
  return qp;
}

namespace {

// Quantizes values in place and records per-element gradient gates.
void quantize_span(std::span<const float> in, std::span<float> out, std::span<std::uint8_t> gate,
                   const QParams& qp, SteMode ste) {
  const float lo = static_cast<float>(qp.q_min), hi = static_cast<float>(qp.q_max);
  for (std::size_t i = 0; i < in.size(); ++i) {
    out[i] = fake_quantize_value(in[i], qp);
    if (ste == SteMode::grad_clip) {
      const float raw = in[i] / qp.scale + static_cast<float>(qp.zero_point);
      gate[i] = (raw >= lo && raw <= hi) ? 1 : 0;
    }
  }
}

Tensor record_gated(const Tensor& x, Tensor out, std::vector<std::uint8_t> gate, bool any_clip) {
  if (needs_recording({&x})) {
    auto xi = x.shared_impl();
    Tape::active()->record({x}, out, [xi, gate = std::move(gate), any_clip](std::span<const float> g) {
      if (!any_clip) {
        accumulate_grad(*xi, g);
        return;
      }
      std::vector<float> dx(g.begin(), g.end());
      for (std::size_t i = 0; i < dx.size(); ++i)
        if (!gate[i]) dx[i] = 0.0f;
      accumulate_grad(*xi, dx);
    });
  }
  return out;
}

}  // namespace

Tensor fake_quantize(const Tensor& x, const QuantModule& qm) {
  if (qm.bypass()) return x;
  const QParams qp = qm.qparams();
  const SteMode ste = qm.config().ste;
  Tensor out(x.rows(), x.cols());
  std::vector<std::uint8_t> gate(ste == SteMode::grad_clip ? x.size() : 0, 1);
  quantize_span(x.data(), out.data(), gate, qp, ste);
  return record_gated(x, std::move(out), std::move(gate), ste == SteMode::grad_clip);
}

Tensor quantize_rows(const Tensor& x, QuantModule& low, QuantModule& high,
                     std::span<const std::uint8_t> protect, bool training) {
  if (!protect.empty() && protect.size() != x.rows()) {
    throw ContractError("quantize_rows: mask length " + std::to_string(protect.size()) +
                        " != rows " + std::to_string(x.rows()));
  }
  if (!training) {
    if (low.bypass() || !low.initialized()) return x;
    return fake_quantize(x, low);
  }
  const bool masked = !protect.empty() && std::any_of(protect.begin(), protect.end(), [](auto m) { return m != 0; });
  if (!masked) {
    if (low.bypass()) return x;
    low.observe(x.data());
    return fake_quantize(x, low);
  }
  if (low.bypass() && high.bypass()) return x;

  const std::size_t cols = x.cols();
  std::vector<float> low_vals, high_vals;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto& dst = protect[r] ? high_vals : low_vals;
    dst.insert(dst.end(), x.row(r), x.row(r) + cols);
  }
  low.observe(low_vals);
  high.observe(high_vals);

  Tensor out = x.clone();
  std::vector<std::uint8_t> gate(x.size(), 1);
  bool any_clip = false;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    QuantModule& qm = protect[r] ? high : low;
    if (qm.bypass() || !qm.initialized()) continue;
    const QParams qp = qm.qparams();
    const auto span_in = x.data().subspan(r * cols, cols);
    quantize_span(span_in, out.data().subspan(r * cols, cols),
                  std::span<std::uint8_t>(gate).subspan(r * cols, cols), qp, qm.config().ste);
    any_clip = any_clip || qm.config().ste == SteMode::grad_clip;
  }
  return record_gated(x, std::move(out), std::move(gate), any_clip);
}

Tensor quantize_rows(const Tensor& x, QuantModule& low, std::span<const std::uint8_t> protect,
                     bool training) {
  QuantModule identity(QuantConfig::passthrough());
  return quantize_rows(x, low, identity, protect, training);
}

std::vector<std::int32_t> integer_quantize(std::span<const float> x, const QParams& qp) {
  std::vector<std::int32_t> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = quantize_code(x[i], qp);
  return out;
}

Tensor dequantize(std::span<const std::int32_t> q, std::size_t rows, std::size_t cols, const QParams& qp) {
  if (q.size() != rows * cols) throw DimensionError("dequantize: size does not match shape");
  Tensor out(rows, cols);
  for (std::size_t i = 0; i < q.size(); ++i) out.data()[i] = dequantize_code(q[i], qp);
  return out;
}

}  // namespace dq
