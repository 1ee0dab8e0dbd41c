#include <benchmark/benchmark.h>

#include "dq/datasets.hpp"
#include "dq/int_inference.hpp"

namespace {

constexpr dq::Index kWidth = 128;

dq::Tensor random_tensor(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  dq::Rng rng(seed);
  dq::Tensor t(rows, cols);
  for (float& v : t.data()) v = rng.normal();
  return t;
}

dq::QParams unit_grid() { return {4.0f / 127.0f, 0, -128, 127}; }

void BM_QuantizeTensor(benchmark::State& state) {
  const dq::Tensor x = random_tensor(static_cast<std::size_t>(state.range(0)), kWidth, 1);
  for (auto _ : state) benchmark::DoNotOptimize(dq::quantize_tensor(x, unit_grid()));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(x.size()));
}
BENCHMARK(BM_QuantizeTensor)->Arg(1 << 12)->Arg(1 << 16);

void BM_IntLinear(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const dq::QTensor x = dq::quantize_tensor(random_tensor(rows, kWidth, 2), unit_grid());
  const dq::QTensor w = dq::quantize_tensor(random_tensor(kWidth, kWidth, 3), {0.05f, 0, -127, 127});
  const dq::PackedWeights packed = dq::pack_weights(w.data, kWidth, kWidth);
  const dq::Requantizer rq = dq::Requantizer::from_real(0.01, unit_grid());
  dq::QTensor out;
  for (auto _ : state) {
    dq::int_linear(x, packed, rq, {}, out);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * kWidth * kWidth));
}
BENCHMARK(BM_IntLinear)->Arg(1 << 12)->Arg(1 << 16);

void BM_Fp32Linear(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const dq::Tensor x = random_tensor(rows, kWidth, 2);
  const dq::Tensor w = random_tensor(kWidth, kWidth, 3);
  dq::Tensor out;
  for (auto _ : state) {
    dq::fp32_linear(x, w, nullptr, out);
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * kWidth * kWidth));
}
BENCHMARK(BM_Fp32Linear)->Arg(1 << 12)->Arg(1 << 16);

struct SpmmFixture {
  dq::IntGraph graph;
  dq::QTensor x;
  explicit SpmmFixture(dq::Index nodes) {
    const dq::Graph g = dq::gen_synthetic(dq::SyntheticKind::preferential_attachment, nodes, 4, 5, kWidth);
    graph = dq::csr_graph(g);
    x = dq::quantize_tensor(g.x, unit_grid());
  }
};

void BM_IntSpmm(benchmark::State& state) {
  const SpmmFixture f(static_cast<dq::Index>(state.range(0)));
  const dq::Requantizer rq = dq::Requantizer::from_real(0.25, unit_grid());
  dq::QTensor out;
  for (auto _ : state) {
    dq::int_spmm(f.graph.looped, f.x, {}, {}, 0, rq, out);
    benchmark::DoNotOptimize(out.data.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.graph.looped.num_entries() * kWidth));
}
BENCHMARK(BM_IntSpmm)->Arg(10000)->Arg(100000);

void BM_Fp32Spmm(benchmark::State& state) {
  const SpmmFixture f(static_cast<dq::Index>(state.range(0)));
  const dq::Tensor x = dq::dequantize_tensor(f.x);
  const dq::CsrAdjacency& adj = f.graph.looped;
  dq::Tensor out(x.rows(), x.cols());
  for (auto _ : state) {
    for (dq::Index i = 0; i < adj.num_nodes; ++i) {
      float* o = out.row(static_cast<std::size_t>(i));
      std::fill(o, o + kWidth, 0.0f);
      for (dq::Index p = adj.row_ptr[i]; p < adj.row_ptr[i + 1]; ++p) {
        const float* src = x.row(static_cast<std::size_t>(adj.col_idx[p]));
        const float w = f.graph.norm_csr[static_cast<std::size_t>(p)];
        for (dq::Index c = 0; c < kWidth; ++c) o[c] += w * src[c];
      }
    }
    benchmark::DoNotOptimize(out.data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(adj.num_entries() * kWidth));
}
BENCHMARK(BM_Fp32Spmm)->Arg(10000)->Arg(100000);

struct ForwardFixture {
  dq::Graph graph;
  std::unique_ptr<dq::Model> model;
  dq::IntModel int_model;
  dq::IntGraph int_graph;
  explicit ForwardFixture(dq::Index nodes) {
    graph = dq::gen_synthetic(dq::SyntheticKind::preferential_attachment, nodes, 4, 7, kWidth);
    model = dq::random_calibrated_model(dq::Arch::gcn, kWidth, kWidth, 4, 7);
    int_model = dq::lower(*model);
    int_graph = int_model.prepare(graph);
  }
};

void BM_GcnForwardInt8(benchmark::State& state) {
  const ForwardFixture f(static_cast<dq::Index>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(f.int_model.forward_codes(f.int_graph, f.graph.x));
}
BENCHMARK(BM_GcnForwardInt8)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_GcnForwardFp32(benchmark::State& state) {
  const ForwardFixture f(static_cast<dq::Index>(state.range(0)));
  const dq::Fp32Engine engine(*f.model);
  for (auto _ : state) benchmark::DoNotOptimize(engine.forward(f.int_graph, f.graph.x));
}
BENCHMARK(BM_GcnForwardFp32)->Arg(10000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
