#pragma once

#include <cstdint>
#include <random>

namespace dq {

/// Seeded random source shared by initialization, dropout and mask sampling.
/// Every draw is a pure function of the seed and the draw order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 24 bits of resolution, exact in f32.
  float uniform() {
    return static_cast<float>(engine_() >> 40) * (1.0f / 16777216.0f);
  }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  /// True with probability p; p <= 0 never fires and p >= 1 always does.
  bool bernoulli(float p) { return uniform() < p; }

  float normal() { return normal_(engine_); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  /// Derives an independent stream, e.g. one per run or per worker.
  Rng fork() { return Rng(engine_() ^ 0x9e3779b97f4a7c15ULL); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<float> normal_{0.0f, 1.0f};
};

}  // namespace dq
