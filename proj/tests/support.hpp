#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "dq/ops.hpp"
#include "dq/rng.hpp"
#include "dq/tensor.hpp"

#include <gtest/gtest.h>

namespace dq::test {

// Scratch directory named after the running test, removed on destruction.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = std::filesystem::temp_directory_path() /
            ("dq_" + std::string(info->test_suite_name()) + "_" + info->name());
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed, float lo = -1.0f,
                            float hi = 1.0f) {
  Rng rng(seed);
  Tensor t(rows, cols);
  for (float& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// |a - b| / max(|a|, |b|, 1): relative for large gradients, absolute near zero.
inline double grad_error(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1.0});
}

// Taped gradient of sum(out * weights) (sum(out) when weights is undefined)
// against central differences of the same quantity reduced in f64.
inline double max_grad_error_weighted(std::vector<Tensor> wrt, const std::function<Tensor()>& out,
                                      const Tensor& weights, float eps = 1e-3f) {
  auto reduce = [&](const Tensor& o) {
    double acc = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) {
      acc += static_cast<double>(o.data()[i]) * (weights.defined() ? weights.data()[i] : 1.0);
    }
    return acc;
  };
  for (auto& t : wrt) t.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor o = out();
    tape.backward(weights.defined() ? sum(mul(o, weights)) : sum(o));
  }
  std::vector<std::vector<float>> analytic;
  for (const auto& t : wrt) {
    std::vector<float> g(t.size(), 0.0f);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), g.begin());
    analytic.push_back(std::move(g));
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    auto data = wrt[k].data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float saved = data[i];
      data[i] = saved + eps;
      const double up = reduce(out());
      data[i] = saved - eps;
      const double down = reduce(out());
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * static_cast<double>(eps));
      worst = std::max(worst, grad_error(analytic[k][i], numeric));
    }
  }
  return worst;
}

inline Tensor param(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

// Largest grad_error between the taped gradient of `loss` and central
// differences with step `eps`, over every entry of every tensor in `wrt`.
inline double max_grad_error(std::vector<Tensor> wrt, const std::function<Tensor()>& loss, float eps = 1e-3f) {
  return max_grad_error_weighted(std::move(wrt), loss, Tensor(), eps);
}

}  // namespace dq::test
