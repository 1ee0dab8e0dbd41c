#include <gtest/gtest.h>

#include <numeric>

#include "dq/error.hpp"
#include "dq/ops.hpp"
#include "support.hpp"

using namespace dq;
using dq::test::param;
using dq::test::random_tensor;

namespace {

// Entries in [-1, -0.2] U [0.2, 1]: clear of the kinks of relu and friends.
Tensor off_kink(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Tensor t = random_tensor(rows, cols, seed, 0.2f, 1.0f);
  Rng rng(seed + 1000);
  for (float& v : t.data()) {
    if (rng.bernoulli(0.5f)) v = -v;
  }
  return t;
}

// Gradient check of sum(op() * R) for a random R, so that every output entry
// gets a distinct upstream gradient.
double op_grad_error(std::vector<Tensor> wrt, const std::function<Tensor()>& op, std::uint64_t seed) {
  const Tensor probe = op();
  return dq::test::max_grad_error_weighted(std::move(wrt), op, random_tensor(probe.rows(), probe.cols(), seed));
}

void expect_tensor(const Tensor& t, std::initializer_list<std::initializer_list<float>> rows) {
  const Tensor want = Tensor::from_rows(rows);
  ASSERT_EQ(t.rows(), want.rows());
  ASSERT_EQ(t.cols(), want.cols());
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_FLOAT_EQ(t.data()[i], want.data()[i]) << "entry " << i;
}

}  // namespace

TEST(Tensor, ShapeAndStorage) {
  Tensor t(3, 4, 1.5f);
  EXPECT_EQ(t.size(), 12u);
  EXPECT_FALSE(t.requires_grad());
  EXPECT_FALSE(t.has_grad());
  Tensor shared = t;
  shared(0, 0) = 7.0f;
  EXPECT_EQ(t(0, 0), 7.0f);
  Tensor deep = t.clone();
  deep(0, 0) = 1.0f;
  EXPECT_EQ(t(0, 0), 7.0f);
  EXPECT_THROW(Tensor::from(2, 2, {1, 2, 3}), DimensionError);
}

TEST(Matmul, Examples) {
  expect_tensor(matmul(Tensor::from_rows({{1, 0}, {0, 1}}), Tensor::from_rows({{1, 2}, {3, 4}})), {{1, 2}, {3, 4}});
  expect_tensor(matmul(Tensor::from_rows({{1, 2}}), Tensor::from_rows({{3}, {4}})), {{11}});
  EXPECT_THROW(matmul(Tensor(2, 3), Tensor(2, 3)), DimensionError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Tensor a = param(random_tensor(4, 4, 1));
  Tensor b = param(random_tensor(4, 4, 2));
  EXPECT_LE(dq::test::max_grad_error_weighted({a, b}, [&] { return matmul(a, b); }, Tensor()), 1e-4);
}

TEST(ScatterAdd, Examples) {
  const std::vector<Index> idx{0, 0, 1};
  expect_tensor(scatter_add(Tensor::from_rows({{1}, {2}, {3}}), idx, 2), {{3}, {3}});
  const Tensor empty = scatter_add(Tensor(0, 3), {}, 2);
  EXPECT_EQ(empty.rows(), 2u);
  for (float v : empty.data()) EXPECT_EQ(v, 0.0f);
  const std::vector<Index> bad{0, 5};
  EXPECT_THROW(scatter_add(Tensor(2, 1), bad, 2), IndexError);
}

TEST(ScatterAdd, PermutationInvariant) {
  Rng rng(3);
  const std::size_t e = 40, n = 7;
  const Tensor src = random_tensor(e, 3, 4);
  std::vector<Index> idx(e);
  for (auto& i : idx) i = static_cast<Index>(rng.below(n));
  const Tensor ref = scatter_add(src, idx, n);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::size_t> perm(e);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = e - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    Tensor ps(e, 3);
    std::vector<Index> pi(e);
    for (std::size_t k = 0; k < e; ++k) {
      std::copy(src.row(perm[k]), src.row(perm[k]) + 3, ps.row(k));
      pi[k] = idx[perm[k]];
    }
    const Tensor got = scatter_add(ps, pi, n);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data()[i], ref.data()[i], 1e-5f);
  }
}

TEST(ScatterAdd, GradientMatchesFiniteDifferences) {
  Tensor src = param(random_tensor(6, 3, 5));
  const std::vector<Index> idx{2, 0, 2, 1, 0, 2};
  EXPECT_LE(op_grad_error({src}, [&] { return scatter_add(src, idx, 4); }, 6), 1e-4);
}

TEST(Gather, Examples) {
  const std::vector<Index> idx{1, 0, 1};
  expect_tensor(gather(Tensor::from_rows({{1}, {2}}), idx), {{2}, {1}, {2}});
  const Tensor src = random_tensor(5, 2, 7);
  const std::vector<Index> identity{0, 1, 2, 3, 4};
  const Tensor same = gather(src, identity);
  for (std::size_t i = 0; i < src.size(); ++i) EXPECT_EQ(same.data()[i], src.data()[i]);
  const std::vector<Index> bad{9};
  EXPECT_THROW(gather(src, bad), IndexError);
}

TEST(Gather, ScatterOfOnesGivesInDegree) {
  const std::vector<Index> src{0, 1, 2, 2, 3, 0};
  const std::vector<Index> dst{1, 2, 0, 1, 1, 3};
  const Tensor ones(4, 1, 1.0f);
  const Tensor counts = scatter_add(gather(ones, src), dst, 4);
  const std::vector<float> want{1, 3, 1, 1};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(counts.data()[i], want[i]);
}

TEST(Gather, GradientMatchesFiniteDifferences) {
  Tensor src = param(random_tensor(4, 3, 8));
  const std::vector<Index> idx{3, 1, 1, 0, 3};
  EXPECT_LE(op_grad_error({src}, [&] { return gather(src, idx); }, 9), 1e-4);
}

TEST(SegmentSoftmax, Examples) {
  const std::vector<Index> two{0, 0};
  expect_tensor(segment_softmax(Tensor::from_rows({{0}, {0}}), two, 1), {{0.5f}, {0.5f}});
  const std::vector<Index> one{0};
  expect_tensor(segment_softmax(Tensor::from_rows({{3.7f}}), one, 1), {{1.0f}});
}

TEST(SegmentSoftmax, NormalizedAndShiftInvariant) {
  Rng rng(10);
  const std::size_t e = 50, n = 6;
  const Tensor logits = random_tensor(e, 3, 11, -5.0f, 5.0f);
  std::vector<Index> seg(e);
  for (auto& s : seg) s = static_cast<Index>(rng.below(n));
  const Tensor p = segment_softmax(logits, seg, n);
  std::vector<double> totals(n * 3, 0.0);
  for (std::size_t r = 0; r < e; ++r) {
    for (std::size_t c = 0; c < 3; ++c) totals[seg[r] * 3 + c] += p(r, c);
  }
  for (std::size_t s = 0; s < n; ++s) {
    if (std::count(seg.begin(), seg.end(), static_cast<Index>(s)) == 0) continue;
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(totals[s * 3 + c], 1.0, 1e-6);
  }
  Tensor shifted = logits.clone();
  for (std::size_t r = 0; r < e; ++r) {
    if (seg[r] == 2) {
      for (std::size_t c = 0; c < 3; ++c) shifted(r, c) += 40.0f;
    }
  }
  const Tensor q = segment_softmax(shifted, seg, n);
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(q.data()[i], p.data()[i], 1e-6f);
}

TEST(SegmentSoftmax, GradientMatchesFiniteDifferences) {
  Tensor logits = param(random_tensor(7, 2, 12));
  const std::vector<Index> seg{0, 1, 0, 2, 1, 0, 2};
  EXPECT_LE(op_grad_error({logits}, [&] { return segment_softmax(logits, seg, 3); }, 13), 1e-4);
}

TEST(Pointwise, Examples) {
  expect_tensor(relu(Tensor::from_rows({{-1, 2}})), {{0, 2}});
  expect_tensor(leaky_relu(Tensor::from_rows({{-1, 2}}), 0.2f), {{-0.2f, 2}});
  Rng rng(1);
  const Tensor x = random_tensor(5, 5, 14);
  const Tensor same = dropout(x, 0.0f, rng, true);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(same.data()[i], x.data()[i]);
  const Tensor eval = dropout(x, 0.7f, rng, false);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(eval.data()[i], x.data()[i]);
  EXPECT_THROW(add(Tensor(2, 3), Tensor(3, 2)), DimensionError);
}

TEST(Pointwise, DropoutScalesRetainedEntries) {
  Rng rng(2);
  const Tensor x(200, 50, 1.0f);
  const Tensor y = dropout(x, 0.4f, rng, true);
  std::size_t kept = 0;
  for (float v : y.data()) {
    if (v != 0.0f) {
      EXPECT_FLOAT_EQ(v, 1.0f / 0.6f);
      ++kept;
    }
  }
  EXPECT_NEAR(static_cast<double>(kept) / static_cast<double>(x.size()), 0.6, 0.02);
}

TEST(Pointwise, GradientsMatchFiniteDifferences) {
  Tensor a = param(off_kink(4, 3, 15));
  Tensor b = param(off_kink(4, 3, 16));
  Tensor row = param(off_kink(1, 3, 17));
  Tensor col = param(off_kink(4, 1, 18));
  const std::vector<Tensor> parts{a, b};
  struct Case {
    const char* name;
    std::function<Tensor()> op;
    std::uint64_t seed;
  };
  const Case cases[] = {
      {"add", [&] { return add(a, b); }, 20},
      {"add_row", [&] { return add(a, row); }, 21},
      {"add_col", [&] { return add(a, col); }, 22},
      {"mul", [&] { return mul(a, b); }, 23},
      {"mul_row", [&] { return mul(a, row); }, 24},
      {"scale", [&] { return scale(a, -2.5f); }, 25},
      {"relu", [&] { return relu(a); }, 26},
      {"leaky_relu", [&] { return leaky_relu(a, 0.2f); }, 27},
      {"elu", [&] { return elu(a); }, 28},
      {"concat_cols", [&] { return concat_cols(parts); }, 29},
      {"slice_cols", [&] { return slice_cols(a, 1, 2); }, 30},
      {"row_sum", [&] { return row_sum(a); }, 31},
      {"mean", [&] { return mean(mul(a, b)); }, 32},
  };
  for (const auto& c : cases) EXPECT_LE(op_grad_error({a, b, row, col}, c.op, c.seed), 1e-4) << c.name;
}

TEST(Pointwise, DropoutGradientUsesSameMask) {
  Tensor a = param(random_tensor(6, 4, 40));
  Tensor loss;
  Tensor kept;
  {
    Tape tape;
    TapeScope scope(tape);
    Rng rng(3);
    kept = dropout(a, 0.5f, rng, true);
    loss = sum(kept);
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_FLOAT_EQ(a.grad()[i], kept.data()[i] == 0.0f ? 0.0f : 2.0f);
  }
}

TEST(Backward, SumGivesOnes) {
  Tensor w = param(random_tensor(3, 2, 41));
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(w));
  }
  for (float g : w.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, AccumulatesUntilZeroGrad) {
  Tensor w = param(random_tensor(2, 2, 42));
  for (int k = 0; k < 2; ++k) {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(scale(w, 3.0f)));
  }
  for (float g : w.grad()) EXPECT_EQ(g, 6.0f);
  w.zero_grad();
  EXPECT_FALSE(w.has_grad());
}

TEST(Backward, RejectsNonScalarLoss) {
  Tensor w = param(random_tensor(2, 2, 43));
  Tape tape;
  TapeScope scope(tape);
  const Tensor out = scale(w, 2.0f);
  EXPECT_THROW(tape.backward(out), ContractError);
}

TEST(Backward, ConstantsNeverAccumulate) {
  Tensor w = param(random_tensor(2, 2, 44));
  Tensor c = random_tensor(2, 2, 45);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(mul(w, c)));
  }
  EXPECT_TRUE(w.has_grad());
  EXPECT_FALSE(c.has_grad());
}

TEST(Backward, NothingRecordedWithoutTape) {
  Tensor w = param(random_tensor(2, 2, 46));
  const Tensor out = sum(w);
  Tape tape;
  EXPECT_THROW(tape.backward(out), ContractError);
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Determinism, SameSeedSameForward) {
  auto run = [] {
    Rng rng(99);
    const Tensor x = random_tensor(30, 8, 47);
    const Tensor w = random_tensor(8, 8, 48);
    return dropout(relu(matmul(x, w)), 0.3f, rng, true);
  };
  const Tensor a = run(), b = run();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
}
