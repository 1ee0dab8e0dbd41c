#include <gtest/gtest.h>

#include <numeric>

#include "dq/error.hpp"
#include "dq/quantizer.hpp"
#include "support.hpp"

using namespace dq;
using dq::test::random_tensor;

namespace {

QuantConfig affine(int bits, bool is_signed, ObserverKind obs = ObserverKind::minmax) {
  QuantConfig c;
  c.bits = bits;
  c.is_signed = is_signed;
  c.observer = obs;
  return c;
}

QuantModule unsigned_0_255() {
  QuantModule qm(affine(8, false));
  const std::vector<float> range{0.0f, 2.55f};
  qm.observe(range);
  return qm;
}

}  // namespace

TEST(QuantConfig, IntegerRanges) {
  EXPECT_EQ(affine(8, true).q_min(), -128);
  EXPECT_EQ(affine(8, true).q_max(), 127);
  EXPECT_EQ(affine(8, false).q_min(), 0);
  EXPECT_EQ(affine(8, false).q_max(), 255);
  EXPECT_EQ(affine(4, true).q_min(), -8);
  EXPECT_EQ(affine(4, true).q_max(), 7);
  EXPECT_TRUE(QuantConfig::passthrough().bypass());
}

TEST(QuantConfig, Validation) {
  QuantConfig c;
  c.percentile = 0.5f;
  EXPECT_THROW(c.validate(), ConfigError);
  c = QuantConfig{};
  c.momentum = 0.0f;
  EXPECT_THROW(c.validate(), ConfigError);
  c = QuantConfig{};
  c.bits = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_observer("ema"), ConfigError);
  EXPECT_THROW(parse_ste("soft"), ConfigError);
}

TEST(Observer, MinMax) {
  QuantModule qm(affine(8, true));
  const std::vector<float> a{-1.0f, 2.0f}, b{-0.5f, 3.0f};
  qm.observe(a);
  qm.observe(b);
  EXPECT_FLOAT_EQ(qm.x_min(), -1.0f);
  EXPECT_FLOAT_EQ(qm.x_max(), 3.0f);
}

TEST(Observer, Momentum) {
  QuantModule qm(affine(8, true, ObserverKind::momentum));
  const std::vector<float> a{-1.0f, 2.0f}, b{0.0f, 4.0f};
  qm.observe(a);
  qm.observe(b);
  EXPECT_NEAR(qm.x_min(), -0.99f, 1e-6f);
  EXPECT_NEAR(qm.x_max(), 2.02f, 1e-6f);
}

TEST(Observer, Percentile) {
  QuantModule qm(affine(8, true, ObserverKind::percentile));
  std::vector<float> x(1000);
  std::iota(x.begin(), x.end(), 0.0f);
  qm.observe(x);
  EXPECT_NEAR(qm.x_max(), 998.001f, 1e-3f);
  EXPECT_NEAR(qm.x_min(), 0.999f, 1e-4f);
}

TEST(Observer, PercentileNeverWiderThanMinMax) {
  QuantModule pct(affine(8, true, ObserverKind::percentile));
  QuantModule mm(affine(8, true));
  Rng rng(5);
  for (int step = 0; step < 50; ++step) {
    std::vector<float> batch(500);
    for (float& v : batch) v = rng.normal() * (1.0f + static_cast<float>(step % 7));
    pct.observe(batch);
    mm.observe(batch);
    EXPECT_LE(pct.x_max(), mm.x_max());
    EXPECT_GE(pct.x_min(), mm.x_min());
  }
}

TEST(Observer, EmptyAndPassThroughAreNoOps) {
  QuantModule qm(affine(8, true));
  qm.observe({});
  EXPECT_FALSE(qm.initialized());
  EXPECT_THROW(qm.qparams(), ContractError);
  QuantModule bypass(QuantConfig::passthrough());
  const std::vector<float> x{1.0f};
  bypass.observe(x);
  EXPECT_FALSE(bypass.initialized());
}

TEST(QParams, Examples) {
  const QParams u = unsigned_0_255().qparams();
  EXPECT_NEAR(u.scale, 0.01f, 1e-7f);
  EXPECT_EQ(u.zero_point, 0);

  QuantConfig w = affine(8, true);
  w.symmetric = true;
  QuantModule wm(w);
  const std::vector<float> weights{-1.27f, 0.5f};
  wm.observe(weights);
  EXPECT_NEAR(wm.qparams().scale, 0.01f, 1e-7f);
  EXPECT_EQ(wm.qparams().zero_point, 0);

  QuantModule flat(affine(8, false));
  const std::vector<float> zeros{0.0f, 0.0f};
  flat.observe(zeros);
  EXPECT_EQ(flat.qparams().scale, 1.0f);
  EXPECT_EQ(flat.qparams().zero_point, 0);
}

TEST(QParams, ZeroIsRepresentable) {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    QuantModule qm(affine(trial % 2 ? 4 : 8, trial % 3 != 0));
    const float lo = rng.uniform(-5.0f, 2.0f);
    const std::vector<float> x{lo, lo + rng.uniform(0.01f, 6.0f)};
    qm.observe(x);
    const QParams qp = qm.qparams();
    EXPECT_GT(qp.scale, 0.0f);
    EXPECT_GE(qp.zero_point, qp.q_min);
    EXPECT_LE(qp.zero_point, qp.q_max);
    EXPECT_EQ(integer_quantize(std::vector<float>{0.0f}, qp)[0], qp.zero_point);
    EXPECT_EQ(fake_quantize_value(0.0f, qp), 0.0f);
  }
}

TEST(FakeQuantize, Examples) {
  const QuantModule qm = unsigned_0_255();
  const Tensor out = fake_quantize(Tensor::from_rows({{1.234f, 3.0f}}), qm);
  EXPECT_NEAR(out(0, 0), 1.23f, 1e-6f);
  EXPECT_NEAR(out(0, 1), 2.55f, 1e-6f);
}

TEST(FakeQuantize, GridValuesAreFixedPoints) {
  const QParams qp{0.0625f, 3, -128, 127};
  for (std::int32_t k = qp.q_min; k <= qp.q_max; ++k) {
    const float x = static_cast<float>(k - qp.zero_point) * qp.scale;
    EXPECT_EQ(fake_quantize_value(x, qp), x) << k;
  }
}

TEST(FakeQuantize, RoundsHalfToEven) {
  const QParams qp{1.0f, 0, -128, 127};
  EXPECT_EQ(quantize_code(0.5f, qp), 0);
  EXPECT_EQ(quantize_code(1.5f, qp), 2);
  EXPECT_EQ(quantize_code(2.5f, qp), 2);
  EXPECT_EQ(quantize_code(-0.5f, qp), 0);
  EXPECT_EQ(quantize_code(-1.5f, qp), -2);
}

TEST(FakeQuantize, StraightThroughGradients) {
  auto grad_for = [](SteMode ste) {
    QuantConfig c = affine(8, false);
    c.ste = ste;
    QuantModule qm(c);
    const std::vector<float> range{0.0f, 2.55f};
    qm.observe(range);
    Tensor x = Tensor::from_rows({{3.0f, 1.0f}});
    x.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(fake_quantize(x, qm)));
    return std::vector<float>(x.grad().begin(), x.grad().end());
  };
  EXPECT_EQ(grad_for(SteMode::grad_clip), (std::vector<float>{0.0f, 1.0f}));
  EXPECT_EQ(grad_for(SteMode::vanilla), (std::vector<float>{1.0f, 1.0f}));
}

TEST(FakeQuantize, VanillaBackwardIsIdentity) {
  QuantModule qm(affine(4, true));
  Tensor x = random_tensor(8, 8, 7, -3.0f, 3.0f);
  const std::vector<float> range{-1.0f, 1.0f};
  qm.observe(range);
  x.set_requires_grad(true);
  const Tensor w = random_tensor(8, 8, 8);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(mul(fake_quantize(x, qm), w)));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x.grad()[i], w.data()[i]);
}

TEST(FakeQuantize, ErrorBoundInsideRange) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    QuantModule qm(affine(trial % 2 ? 4 : 8, true));
    const Tensor x = random_tensor(50, 20, 100 + trial, -rng.uniform(0.1f, 4.0f), rng.uniform(0.1f, 4.0f));
    qm.observe(x.data());
    const QParams qp = qm.qparams();
    const Tensor q = fake_quantize(x, qm);
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_LE(std::fabs(q.data()[i] - x.data()[i]), qp.scale / 2.0f * (1.0f + 1e-5f));
    }
  }
}

TEST(IntegerQuantize, RoundTripIsBitExact) {
  QuantModule qm(affine(8, true));
  const Tensor x = random_tensor(100, 100, 10, -2.0f, 3.0f);
  const std::vector<float> range{-1.5f, 2.5f};
  qm.observe(range);
  const QParams qp = qm.qparams();
  const Tensor fq = fake_quantize(x, qm);
  const auto codes = integer_quantize(x.data(), qp);
  const Tensor back = dequantize(codes, x.rows(), x.cols(), qp);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(back.data()[i], fq.data()[i]);
    EXPECT_GE(codes[i], qp.q_min);
    EXPECT_LE(codes[i], qp.q_max);
  }
}

TEST(QuantizeRows, ProtectedRowsBypassAndObserversSeparate) {
  QuantModule low(affine(8, true));
  QuantModule high(QuantConfig::passthrough());
  const Tensor x = Tensor::from_rows({{0.1234f, -0.5f}, {10.0f, 20.0f}, {0.3f, 0.7f}});
  const std::vector<std::uint8_t> protect{0, 1, 0};
  const Tensor out = quantize_rows(x, low, high, protect, true);
  EXPECT_FLOAT_EQ(low.x_max(), 0.7f);
  EXPECT_FLOAT_EQ(low.x_min(), -0.5f);
  EXPECT_EQ(out(1, 0), 10.0f);
  EXPECT_EQ(out(1, 1), 20.0f);
  const QParams qp = low.qparams();
  EXPECT_EQ(out(0, 0), fake_quantize_value(0.1234f, qp));
  EXPECT_EQ(out(2, 1), fake_quantize_value(0.7f, qp));
}

TEST(QuantizeRows, EvalIgnoresMaskAndFreezesObservers) {
  QuantModule low(affine(8, true));
  const std::vector<float> range{-1.0f, 1.0f};
  low.observe(range);
  const Tensor x = Tensor::from_rows({{0.123f}, {5.0f}});
  const std::vector<std::uint8_t> protect{1, 1};
  const Tensor out = quantize_rows(x, low, protect, false);
  EXPECT_FLOAT_EQ(low.x_max(), 1.0f);
  EXPECT_EQ(out(0, 0), fake_quantize_value(0.123f, low.qparams()));
  EXPECT_EQ(out(1, 0), fake_quantize_value(5.0f, low.qparams()));
}

TEST(QuantizeRows, MaskLengthMismatch) {
  QuantModule low(affine(8, true));
  const std::vector<std::uint8_t> protect{1};
  EXPECT_THROW(quantize_rows(Tensor(3, 2), low, protect, true), ContractError);
}

TEST(Quantile, LinearInterpolation) {
  const std::vector<float> v{4.0f, 1.0f, 3.0f, 2.0f};
  EXPECT_FLOAT_EQ(quantile(v, 0.0), 1.0f);
  EXPECT_FLOAT_EQ(quantile(v, 1.0), 4.0f);
  EXPECT_FLOAT_EQ(quantile(v, 0.5), 2.5f);
  const std::vector<float> sparse{0.0f, 0.0f, -1.0f, 0.0f, 2.0f};
  EXPECT_FLOAT_EQ(quantile(sparse, 0.25), 0.0f);
  EXPECT_FLOAT_EQ(quantile(sparse, 0.125), -0.5f);
}
