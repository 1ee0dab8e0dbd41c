#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dq/tensor.hpp"

namespace dq {

enum class SteMode { vanilla, grad_clip };
enum class ObserverKind { minmax, momentum, percentile };

std::string to_string(SteMode m);
std::string to_string(ObserverKind k);
SteMode parse_ste(const std::string& s);
ObserverKind parse_observer(const std::string& s);

/// Configuration of one quantization site. bits >= 32 means pass-through.
struct QuantConfig {
  int bits = 8;
  bool is_signed = true;
  // Symmetric (z = 0) range, used for weights.
  bool symmetric = false;
  SteMode ste = SteMode::vanilla;
  ObserverKind observer = ObserverKind::minmax;
  float momentum = 0.01f;
  // Fraction clipped at each tail by the percentile observer.
  float percentile = 0.001f;
  // Running rule applied to per-batch percentiles (minmax or momentum).
  ObserverKind percentile_base = ObserverKind::minmax;

  bool bypass() const { return bits >= 32; }
  std::int32_t q_min() const;
  std::int32_t q_max() const;
  void validate() const;

  static QuantConfig passthrough() {
    QuantConfig c;
    c.bits = 32;
    return c;
  }
};

struct QParams {
  float scale = 1.0f;
  std::int32_t zero_point = 0;
  std::int32_t q_min = -128;
  std::int32_t q_max = 127;
};

/// Integer code of `x`: clamp(round_half_even(x / s + z), q_min, q_max).
inline std::int32_t quantize_code(float x, const QParams& qp) {
  const float v = std::nearbyint(x / qp.scale + static_cast<float>(qp.zero_point));
  const float lo = static_cast<float>(qp.q_min), hi = static_cast<float>(qp.q_max);
  if (std::isnan(v)) return qp.zero_point;
  return static_cast<std::int32_t>(v < lo ? lo : (v > hi ? hi : v));
}

inline float dequantize_code(std::int32_t q, const QParams& qp) {
  return static_cast<float>(q - qp.zero_point) * qp.scale;
}

/// (q - z) * s of the rounded value; what the fake-quantized forward emits.
/// NaN passes through so non-finite training state stays visible.
inline float fake_quantize_value(float x, const QParams& qp) {
  if (std::isnan(x)) return x;
  return dequantize_code(quantize_code(x, qp), qp);
}

/// Linear-interpolation quantile over the order statistics of `values`
/// (position (n-1)*q). `values` is used as scratch and reordered.
float quantile_inplace(std::vector<float>& values, double q);
float quantile(std::span<const float> values, double q);

/// One quantization site: a running range observer plus derived qparams.
class QuantModule {
 public:
  QuantModule() = default;
  explicit QuantModule(QuantConfig config);

  /// Updates the running range from `x` (no-op for empty input or
  /// pass-through sites).
  void observe(std::span<const float> x);

  /// Scale, zero-point and integer range. Throws ContractError when the
  /// module has not observed anything yet.
  QParams qparams() const;

  bool initialized() const { return initialized_; }
  float x_min() const { return x_min_; }
  float x_max() const { return x_max_; }
  const QuantConfig& config() const { return config_; }
  void set_config(const QuantConfig& config);
  bool bypass() const { return config_.bypass(); }

  /// Restores checkpointed observer state.
  void restore(float x_min, float x_max, bool initialized);

 private:
  void track(float lo, float hi);

  QuantConfig config_;
  float x_min_ = 0.0f;
  float x_max_ = 0.0f;
  bool initialized_ = false;
};

/// Fake-quantizes `x` with the module's current qparams. Backward follows
/// the module's STE mode: vanilla passes gradients unchanged, grad_clip
/// zeroes them where x/s + z falls outside [q_min, q_max].
/// Pass-through modules return `x` itself.
Tensor fake_quantize(const Tensor& x, const QuantModule& qm);

/// Row-wise protected quantization.
///
/// In training, rows flagged in `protect` go through `high` and the others
/// through `low`; each observer only sees its own rows. An empty `protect`
/// means no row is protected. Outside training only `low` is used and
/// observers stay frozen. An uninitialized low module (it never saw an
/// unprotected row) acts as pass-through at evaluation time.
Tensor quantize_rows(const Tensor& x, QuantModule& low, QuantModule& high,
                     std::span<const std::uint8_t> protect, bool training);

/// Same as quantize_rows() with an identity high path.
Tensor quantize_rows(const Tensor& x, QuantModule& low, std::span<const std::uint8_t> protect,
                     bool training);

std::vector<std::int32_t> integer_quantize(std::span<const float> x, const QParams& qp);
Tensor dequantize(std::span<const std::int32_t> q, std::size_t rows, std::size_t cols,
                  const QParams& qp);

}  // namespace dq
