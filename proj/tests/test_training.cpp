#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "dq/checkpoint.hpp"
#include "dq/datasets.hpp"
#include "dq/error.hpp"
#include "dq/experiments.hpp"
#include "dq/training.hpp"
#include "support.hpp"

using namespace dq;
using dq::test::random_tensor;
using dq::test::TempDir;

namespace {

Graph small_citation(Index nodes, std::uint64_t seed, Index vocab = 60) {
  CitationLikeOptions o;
  o.num_nodes = nodes;
  o.num_classes = 3;
  o.vocabulary = vocab;
  o.words_per_node = 8;
  Graph g = gen_citation_like(o, seed);
  planetoid_split(g, nodes / 10, nodes / 5, nodes / 3);
  return g;
}

TrainConfig quick(Regime regime, int epochs = 15) {
  TrainConfig c;
  c.regime = regime;
  c.epochs = epochs;
  c.patience = epochs;
  c.seed = 3;
  c.observer = ObserverKind::minmax;
  return c;
}

void expect_same_run(const TrainResult& a, const TrainResult& b) {
  ASSERT_EQ(a.metrics.epochs.size(), b.metrics.epochs.size());
  for (std::size_t e = 0; e < a.metrics.epochs.size(); ++e) {
    EXPECT_EQ(a.metrics.epochs[e].train_loss, b.metrics.epochs[e].train_loss) << "epoch " << e;
    EXPECT_EQ(a.metrics.epochs[e].val_loss, b.metrics.epochs[e].val_loss) << "epoch " << e;
  }
  EXPECT_EQ(a.metrics.test_acc, b.metrics.test_acc);
  auto pa = a.model->parameters(), pb = b.model->parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t k = 0; k < pa[i].tensor.size(); ++k)
      ASSERT_EQ(pa[i].tensor.data()[k], pb[i].tensor.data()[k]) << pa[i].name;
  }
}

Tensor eval_logits(Model& m, const Graph& g) {
  return m.forward(PreparedGraph::from(g), g.x, ForwardOptions{});
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Tensor w = dq::test::param(Tensor::from_rows({{1.0f, -2.0f}}));
  Adam opt({w}, 0.01f);
  w.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(scale(w, 0.0f)));
  }
  opt.step();
  EXPECT_EQ(w(0, 0), 1.0f);
  EXPECT_EQ(w(0, 1), -2.0f);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor w = dq::test::param(Tensor::from_rows({{0.5f, 3.0f}}));
  Adam opt({w}, 0.01f);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(w));
  }
  opt.step();
  EXPECT_NEAR(w(0, 0), 0.49f, 1e-6f);
  EXPECT_NEAR(w(0, 1), 2.99f, 1e-6f);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, WeightDecayActsAsL2) {
  Tensor w = dq::test::param(Tensor::from_rows({{2.0f}}));
  Adam opt({w}, 0.1f, 0.5f);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(scale(w, 0.0f)));
  }
  opt.step();
  EXPECT_NEAR(w(0, 0), 1.9f, 1e-6f);
}

TEST(Adam, Deterministic) {
  auto run = [] {
    Tensor w = dq::test::param(random_tensor(4, 4, 1));
    const Tensor target = random_tensor(4, 4, 2);
    Adam opt({w}, 0.05f, 1e-3f);
    for (int i = 0; i < 20; ++i) {
      opt.zero_grad();
      Tape tape;
      {
        TapeScope scope(tape);
        tape.backward(l1_loss(w, target));
      }
      opt.step();
    }
    return std::vector<float>(w.data().begin(), w.data().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(CrossEntropy, UniformLogits) {
  const Tensor logits(5, 7, 0.3f);
  const std::vector<Index> labels{0, 1, 2, 3, 6};
  EXPECT_NEAR(cross_entropy(logits, labels).item(), std::log(7.0), 1e-6);
}

TEST(CrossEntropy, LargeMarginIsNearZero) {
  const Tensor logits = Tensor::from_rows({{100, 0, 0}, {0, 0, 100}});
  const std::vector<Index> labels{0, 2};
  EXPECT_LT(cross_entropy(logits, labels).item(), 1e-6f);
  EXPECT_TRUE(std::isfinite(cross_entropy(logits, std::vector<Index>{1, 0}).item()));
}

TEST(CrossEntropy, MaskSelectsRows) {
  const Tensor logits = Tensor::from_rows({{100, 0}, {0, 0}});
  const std::vector<Index> labels{1, 0};
  const std::vector<std::uint8_t> second{0, 1};
  EXPECT_NEAR(cross_entropy(logits, labels, second).item(), std::log(2.0), 1e-6);
  const std::vector<std::uint8_t> none{0, 0};
  EXPECT_THROW(cross_entropy(logits, labels, none), ContractError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Tensor logits = dq::test::param(random_tensor(6, 4, 3, -2.0f, 2.0f));
  const std::vector<Index> labels{0, 3, 2, 1, 1, 0};
  const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 1};
  EXPECT_LE(dq::test::max_grad_error({logits}, [&] { return cross_entropy(logits, labels, mask); }), 1e-4);
}

TEST(L1Loss, ValueAndGradient) {
  Tensor p = dq::test::param(Tensor::from_rows({{1.0f, -1.0f}}));
  const Tensor t = Tensor::from_rows({{0.0f, 1.0f}});
  EXPECT_FLOAT_EQ(l1_loss(p, t).item(), 1.5f);
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(l1_loss(p, t));
  }
  EXPECT_FLOAT_EQ(p.grad()[0], 0.5f);
  EXPECT_FLOAT_EQ(p.grad()[1], -0.5f);
}

TEST(NoisyQat, RateOneIsQatAndRateZeroIsFp32) {
  QuantConfig c;
  c.symmetric = true;
  QuantModule qm(c);
  const Tensor w = random_tensor(20, 20, 4);
  qm.observe(w.data());
  Rng rng(5);
  const Tensor all = nqat_weight_view(w, qm, 1.0f, rng);
  const Tensor ref = fake_quantize(w, qm);
  const Tensor none = nqat_weight_view(w, qm, 0.0f, rng);
  for (std::size_t i = 0; i < w.size(); ++i) {
    EXPECT_EQ(all.data()[i], ref.data()[i]);
    EXPECT_EQ(none.data()[i], w.data()[i]);
  }
}

TEST(NoisyQat, QuantizedFraction) {
  QuantConfig c;
  c.symmetric = true;
  QuantModule qm(c);
  const Tensor w = random_tensor(1000, 1000, 6);
  qm.observe(w.data());
  Rng rng(7);
  const Tensor v = nqat_weight_view(w, qm, 0.7f, rng);
  const Tensor fq = fake_quantize(w, qm);
  std::size_t quantized = 0, ambiguous = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (fq.data()[i] == w.data()[i]) ++ambiguous;
    else if (v.data()[i] == fq.data()[i]) ++quantized;
  }
  const double rate = static_cast<double>(quantized) / static_cast<double>(w.size() - ambiguous);
  EXPECT_NEAR(rate, 0.7, 0.002);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.p_min = 0.3f;
  c.p_max = 0.1f;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.noise_rate = 1.5f;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.ablation = Ablation::masking_only;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.bits_override = {{"nowhere", 4}};
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_regime("int4"), ConfigError);
}

TEST(TrainConfig, RegimeDefaults) {
  TrainConfig c;
  c.regime = Regime::dq;
  EXPECT_EQ(c.effective_observer(), ObserverKind::percentile);
  c.regime = Regime::qat;
  EXPECT_EQ(c.effective_observer(), ObserverKind::minmax);
  TrainConfig fp;
  EXPECT_FLOAT_EQ(c.effective_lr(Arch::gcn), fp.effective_lr(Arch::gcn) / 2.0f);
  EXPECT_FALSE(fp.scheme().enabled);
  EXPECT_TRUE(c.scheme().enabled);
}

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig c;
  c.regime = Regime::nqat;
  c.bits = 4;
  c.ste = SteMode::grad_clip;
  c.observer = ObserverKind::momentum;
  c.lr = 0.003f;
  c.noise_rate = 0.6f;
  c.seed = 42;
  c.bits_override = {{"aggregate", 4}};
  const TrainConfig back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  TempDir dir;
  {
    std::ofstream(dir / "c.json") << to_json(c).dump();
  }
  EXPECT_EQ(to_json(load_train_config(dir / "c.json")), to_json(c));
  EXPECT_THROW(train_config_from_json(nlohmann::json{{"regime", "qat"}, {"learning_rate", 0.1}}), ConfigError);
}

TEST(Training, SmokeRunDecreasesLoss) {
  const Graph g = small_citation(20, 1);
  const TrainResult r = train_node_classifier(ModelSpec::citation(Arch::gcn, g.feature_dim(), 3), g,
                                              [] {
                                                TrainConfig c = quick(Regime::fp32, 2);
                                                c.lr = 0.05f;
                                                c.dropout = 0.0f;
                                                return c;
                                              }());
  ASSERT_EQ(r.metrics.epochs.size(), 2u);
  EXPECT_LT(r.metrics.epochs[1].train_loss, r.metrics.epochs[0].train_loss);
}

TEST(Training, SeedDeterminism) {
  const Graph g = small_citation(60, 2);
  const ModelSpec spec = ModelSpec::citation(Arch::gat, g.feature_dim(), 3);
  expect_same_run(train_node_classifier(spec, g, quick(Regime::dq)), train_node_classifier(spec, g, quick(Regime::dq)));
}

TEST(Training, DegreeQuantWithZeroProtectionIsQat) {
  const Graph g = small_citation(60, 3);
  for (Arch arch : {Arch::gcn, Arch::gat, Arch::gin}) {
    const ModelSpec spec = ModelSpec::citation(arch, g.feature_dim(), 3);
    TrainConfig dq = quick(Regime::dq);
    dq.p_min = dq.p_max = 0.0f;
    expect_same_run(train_node_classifier(spec, g, dq), train_node_classifier(spec, g, quick(Regime::qat)));
  }
}

TEST(Training, NoisyQatAtRateOneIsQat) {
  const Graph g = small_citation(60, 4);
  const ModelSpec spec = ModelSpec::citation(Arch::gcn, g.feature_dim(), 3);
  TrainConfig n = quick(Regime::nqat);
  n.noise_rate = 1.0f;
  expect_same_run(train_node_classifier(spec, g, n), train_node_classifier(spec, g, quick(Regime::qat)));
}

TEST(Training, FullProtectionTrainsFp32ActivationsWithQuantizedWeights) {
  const Graph g = small_citation(40, 5);
  const ModelSpec spec = ModelSpec::citation(Arch::gcn, g.feature_dim(), 3);
  TrainConfig c = quick(Regime::dq, 3);
  c.p_min = c.p_max = 1.0f;
  const TrainResult r = train_node_classifier(spec, g, c);
  r.model->for_each_quant([](const std::string& name, QuantModule& qm) {
    if (name.find("weights") == std::string::npos && name.find("norm") == std::string::npos) {
      EXPECT_FALSE(qm.initialized()) << name;
    }
  });
}

TEST(Training, NonFiniteInputAborts) {
  Graph g = small_citation(30, 6);
  g.x(0, 0) = std::nanf("");
  for (Regime regime : {Regime::fp32, Regime::qat, Regime::dq}) {
    try {
      train_node_classifier(ModelSpec::citation(Arch::gcn, g.feature_dim(), 3), g, quick(regime, 3));
      ADD_FAILURE() << "expected NumericError for " << to_string(regime);
    } catch (const NumericError& e) {
      EXPECT_EQ(e.epoch(), 1);
      EXPECT_FALSE(e.site().empty());
    }
  }
}

TEST(Evaluate, OverfitsTinyTask) {
  Graph g;
  g.num_nodes = 5;
  g.src = {0, 1, 2, 3};
  g.dst = {1, 2, 3, 4};
  g.refresh_degree();
  g.x = Tensor(5, 5);
  for (std::size_t i = 0; i < 5; ++i) g.x(i, i) = 1.0f;
  g.y = {0, 1, 0, 1, 1};
  g.num_classes = 2;
  g.train_mask.assign(5, 1);
  const PreparedGraph pg = PreparedGraph::from(g);
  ModelSpec spec = ModelSpec::citation(Arch::gcn, 5, 2);
  spec.dropout = 0.0f;
  Model model(spec, QuantScheme::fp32(), 1);
  std::vector<Tensor> params;
  for (auto& p : model.parameters()) params.push_back(p.tensor);
  Adam opt(params, 0.05f);
  for (int step = 0; step < 200; ++step) {
    opt.zero_grad();
    Tape tape;
    {
      TapeScope scope(tape);
      ForwardOptions o;
      o.training = true;
      tape.backward(cross_entropy(model.forward(pg, g.x, o), g.y));
    }
    opt.step();
  }
  const EvalResult a = evaluate(model, pg, g, Split::train);
  const EvalResult b = evaluate(model, pg, g, Split::train);
  EXPECT_EQ(a.accuracy, 1.0);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.loss, b.loss);
}

TEST(Evaluate, ThirtyTwoBitBypassEqualsFp32) {
  const Graph g = small_citation(40, 7);
  const ModelSpec spec = ModelSpec::citation(Arch::gin, g.feature_dim(), 3);
  Model fp32(spec, QuantScheme::fp32(), 9);
  Model bypass(spec, QuantScheme::uniform(32, SteMode::vanilla, ObserverKind::minmax), 9);
  const PreparedGraph pg = PreparedGraph::from(g);
  const EvalResult a = evaluate(fp32, pg, g, Split::test);
  const EvalResult b = evaluate(bypass, pg, g, Split::test);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.loss, b.loss);
}

TEST(Checkpoint, RoundTripPreservesOutputs) {
  const Graph g = small_citation(50, 8);
  for (Arch arch : {Arch::gcn, Arch::gat, Arch::gin}) {
    const TrainConfig c = quick(Regime::dq, 5);
    const TrainResult r = train_node_classifier(ModelSpec::citation(arch, g.feature_dim(), 3), g, c);
    TempDir dir;
    save_checkpoint(*r.model, to_json(c), dir / "m.dqck");
    LoadedCheckpoint back = load_checkpoint(dir / "m.dqck");
    EXPECT_EQ(back.train_config, to_json(c));
    const Tensor a = eval_logits(*r.model, g), b = eval_logits(*back.model, g);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a.data()[i], b.data()[i]) << to_string(arch);
  }
}

TEST(Checkpoint, LoadErrors) {
  TempDir dir;
  EXPECT_THROW(load_checkpoint(dir / "missing.dqck"), LoadError);
  {
    std::ofstream(dir / "junk.dqck") << "not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(dir / "junk.dqck"), LoadError);

  Model m(ModelSpec::citation(Arch::gcn, 4, 2), QuantScheme::fp32(), 1);
  save_checkpoint(m, nlohmann::json::object(), dir / "ok.dqck");
  {
    std::fstream f(dir / "ok.dqck", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint32_t version = kCheckpointVersion + 1;
    f.write(reinterpret_cast<const char*>(&version), sizeof version);
  }
  EXPECT_THROW(load_checkpoint(dir / "ok.dqck"), LoadError);

  save_checkpoint(m, nlohmann::json::object(), dir / "cut.dqck");
  std::filesystem::resize_file(dir / "cut.dqck", std::filesystem::file_size(dir / "cut.dqck") - 8);
  EXPECT_THROW(load_checkpoint(dir / "cut.dqck"), LoadError);
}

TEST(Experiments, ParallelSeedsMatchSerial) {
  const Graph g = small_citation(50, 9);
  const ModelSpec spec = ModelSpec::citation(Arch::gcn, g.feature_dim(), 3);
  const TrainConfig c = quick(Regime::qat, 8);
  const SeedSummary serial = run_seeds(spec, g, c, 3, 1);
  const SeedSummary parallel = run_seeds(spec, g, c, 3, 3);
  ASSERT_EQ(serial.runs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(serial.runs[i].seed, c.seed + i);
    EXPECT_EQ(serial.runs[i].test_acc, parallel.runs[i].test_acc);
    EXPECT_EQ(serial.runs[i].best_val_loss, parallel.runs[i].best_val_loss);
  }
  EXPECT_EQ(serial.mean, parallel.mean);
  EXPECT_THROW(sweep_ste(spec, g, c, 4), ConfigError);
}

TEST(Experiments, MeanStd) {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto [m, s] = mean_std(v);
  EXPECT_DOUBLE_EQ(m, 2.5);
  EXPECT_NEAR(s, std::sqrt(5.0 / 3.0), 1e-12);
}
