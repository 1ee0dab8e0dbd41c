#include "dq/int_inference.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <thread>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include "dq/datasets.hpp"
#include "dq/error.hpp"
#include "dq/training.hpp"

namespace dq {

namespace {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::elu: return "elu";
  }
  return "?";
}

Activation parse_activation(const std::string& s) {
  if (s == "none") return Activation::none;
  if (s == "relu") return Activation::relu;
  if (s == "elu") return Activation::elu;
  throw LoadError("unknown activation '" + s + "'");
}

float activate(Activation a, float v) {
  switch (a) {
    case Activation::none: return v;
    case Activation::relu: return v > 0.0f ? v : 0.0f;
    case Activation::elu: return v > 0.0f ? v : std::expm1(v);
  }
  return v;
}

QParams site_qparams(const QuantModule& qm, const std::string& name) {
  if (qm.bypass()) throw UnsupportedError("lower: site '" + name + "' runs at full precision");
  if (qm.config().bits > 8) throw UnsupportedError("lower: site '" + name + "' is wider than 8 bits");
  if (!qm.initialized()) throw UnsupportedError("lower: site '" + name + "' never observed data");
  return qm.qparams();
}

IntWeight lower_weight(const Tensor& w, const QuantModule& qm, const std::string& name) {
  const QParams qp = site_qparams(qm, name);
  IntWeight out;
  out.rows = w.rows();
  out.cols = w.cols();
  out.scale = qp.scale;
  const auto codes = integer_quantize(w.data(), qp);
  out.q.assign(codes.begin(), codes.end());
  return out;
}

std::vector<float> dequantize_weight(const IntWeight& w) {
  std::vector<float> out(w.q.size());
  for (std::size_t i = 0; i < w.q.size(); ++i) out[i] = static_cast<float>(w.q[i]) * w.scale;
  return out;
}

nlohmann::json qp_json(const QParams& qp) { return {qp.scale, qp.zero_point, qp.q_min, qp.q_max}; }

QParams qp_from(const nlohmann::json& j) {
  QParams qp;
  qp.scale = j.at(0).get<float>();
  qp.zero_point = j.at(1).get<std::int32_t>();
  qp.q_min = j.at(2).get<std::int32_t>();
  qp.q_max = j.at(3).get<std::int32_t>();
  return qp;
}

void relu_codes(QTensor& t, std::int32_t zero) {
  const auto z = static_cast<std::int8_t>(zero);
  for (auto& v : t.data) v = std::max(v, z);
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

IntModel::IntModel(std::vector<IntLayer> layers, ModelSpec spec) : layers_(std::move(layers)), spec_(spec) {
  build();
}

void IntModel::build() {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    IntLayer& L = layers_[l];
    L.packed.clear();
    L.linear_rq.clear();
    L.linear_offsets.clear();
    const auto check_width = [](std::size_t k) {
      if (static_cast<std::int64_t>(k) * 255 * 128 > std::numeric_limits<std::int32_t>::max()) {
        throw UnsupportedError("lower: input width " + std::to_string(k) + " could overflow int32 accumulators");
      }
    };
    const auto bias_offsets = [](const Requantizer& rq, const IntWeight& b, float out_scale) {
      std::vector<std::int64_t> off(b.q.size());
      for (std::size_t j = 0; j < b.q.size(); ++j) {
        off[j] = rq.offset_for(static_cast<double>(static_cast<float>(b.q[j]) * b.scale) / out_scale);
      }
      return off;
    };

    if (L.arch == Arch::gcn || L.arch == Arch::gat) {
      const IntWeight& w = L.weights[0];
      check_width(w.rows);
      L.packed.push_back(pack_weights(w.q, w.rows, w.cols));
      L.linear_rq.push_back(Requantizer::from_real(
          static_cast<double>(L.inputs.scale) * w.scale / L.features[0].scale, L.features[0]));
      L.linear_offsets.emplace_back();
      L.aggregate_rq = Requantizer::from_real(static_cast<double>(L.message.scale) / L.aggregate.scale, L.aggregate);
      L.update_rq = Requantizer::from_real(static_cast<double>(L.aggregate.scale) / L.update.scale, L.update);
      L.update_offsets = bias_offsets(L.update_rq, L.weights.back(), L.update.scale);
    } else {
      L.message_table = make_code_table(L.inputs, L.message, [](float v) { return v; });
      L.aggregate_rq = Requantizer::from_real(static_cast<double>(L.message.scale) / L.aggregate.scale, L.aggregate);
      const double ms[2] = {(1.0 + L.eps) * L.inputs.scale / L.features[0].scale,
                            static_cast<double>(L.aggregate.scale) / L.features[0].scale};
      L.combine_rq = Requantizer::from_reals(ms, L.features[0]);
      const std::size_t n = L.weights.size() / 2;
      for (std::size_t i = 0; i < n; ++i) {
        const IntWeight& w = L.weights[2 * i];
        check_width(w.rows);
        const QParams& out = i + 1 < n ? L.features[i + 1] : L.update;
        L.packed.push_back(pack_weights(w.q, w.rows, w.cols));
        L.linear_rq.push_back(
            Requantizer::from_real(static_cast<double>(L.features[i].scale) * w.scale / out.scale, out));
        L.linear_offsets.push_back(bias_offsets(L.linear_rq.back(), L.weights[2 * i + 1], out.scale));
      }
    }
    if (l + 1 < layers_.size()) {
      const Activation a = L.act_after;
      L.act_table = make_code_table(L.update, layers_[l + 1].inputs, [a](float v) { return activate(a, v); });
    }
  }
}

IntModel lower(Model& model) {
  if (!model.scheme().enabled && model.scheme().bits_override.empty()) {
    throw UnsupportedError("lower: checkpoint was trained without quantization");
  }
  if (model.spec().graph_level) throw UnsupportedError("lower: graph-level readouts are not lowered");
  std::vector<IntLayer> layers;
  const auto& gnn = model.layers();
  for (std::size_t l = 0; l < gnn.size(); ++l) {
    GnnLayer& layer = *gnn[l];
    LayerQuantSites& s = layer.sites();
    const std::string p = "layers." + std::to_string(l) + ".";
    IntLayer L;
    L.arch = layer.arch();
    L.inputs = site_qparams(s.inputs.low, p + "inputs");
    L.message = site_qparams(s.message.low, p + "message");
    L.aggregate = site_qparams(s.aggregate.low, p + "aggregate");
    L.update = site_qparams(s.update.low, p + "update");
    for (std::size_t i = 0; i < s.features.size(); ++i) {
      L.features.push_back(site_qparams(s.features[i].low, p + "features." + std::to_string(i)));
    }
    auto params = layer.parameters();
    if (L.arch == Arch::gin) {
      auto& gin = static_cast<GinLayer&>(layer);
      L.eps = gin.eps_.item();
      for (std::size_t i = 0; i < gin.weights_.size(); ++i) {
        L.weights.push_back(lower_weight(gin.weights_[i], s.weights[2 * i], p + "weights"));
        L.weights.push_back(lower_weight(gin.biases_[i], s.weights[2 * i + 1], p + "weights"));
      }
    } else {
      for (std::size_t i = 0; i < params.size(); ++i) {
        L.weights.push_back(lower_weight(params[i].tensor, s.weights[i], p + "weights"));
      }
    }
    if (L.arch == Arch::gcn) L.norm = site_qparams(s.norm, p + "norm");
    if (L.arch == Arch::gat) {
      L.attention = site_qparams(s.attention, p + "attention");
      L.heads = static_cast<GatLayer&>(layer).heads();
    }
    if (l + 1 < gnn.size()) L.act_after = L.arch == Arch::gat ? Activation::elu : Activation::relu;
    layers.push_back(std::move(L));
  }
  return IntModel(std::move(layers), model.spec());
}

std::unique_ptr<Model> random_calibrated_model(Arch arch, Index in_dim, Index width, Index edges_per_node,
                                               std::uint64_t seed, Index calibration_nodes) {
  ModelSpec spec;
  spec.arch = arch;
  spec.in_dim = in_dim;
  spec.hidden = width;
  spec.out_dim = width;
  spec.heads = 1;
  spec.out_heads = 1;
  auto model = std::make_unique<Model>(spec, QuantScheme::uniform(8, SteMode::vanilla, ObserverKind::minmax),
                                       Rng(seed).next_u64());
  const Graph calib =
      gen_synthetic(SyntheticKind::preferential_attachment, calibration_nodes, edges_per_node, seed + 1, in_dim);
  calibrate(*model, PreparedGraph::from(calib), calib.x);
  return model;
}

Equivalence compare_outputs(Model& model, const IntModel& lowered, const Graph& graph, int threads) {
  const Tensor ref = model.forward(PreparedGraph::from(graph), graph.x, {});
  const Tensor got = lowered.forward(lowered.prepare(graph), graph.x, threads);
  if (ref.rows() != got.rows() || ref.cols() != got.cols()) throw DimensionError("compare: output shapes differ");
  const auto a = argmax_rows(ref), b = argmax_rows(got);
  Equivalence e;
  std::size_t agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) agree += a[i] == b[i];
  e.argmax_agreement = a.empty() ? 1.0 : static_cast<double>(agree) / static_cast<double>(a.size());
  const double step = lowered.output_qparams().scale;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const auto d = std::llround(std::fabs(static_cast<double>(ref.data()[i]) - got.data()[i]) / step);
    e.max_steps = std::max<std::int64_t>(e.max_steps, d);
  }
  return e;
}

void calibrate(Model& model, const PreparedGraph& graph, const Tensor& x) {
  ForwardOptions o;
  o.training = true;
  o.dropout = false;
  model.forward(graph, x, o);
}

IntGraph csr_graph(const Graph& graph) {
  const PreparedGraph pg = PreparedGraph::from(graph);
  IntGraph g;
  g.plain = CsrAdjacency::from_edges(pg.plain);
  g.looped = CsrAdjacency::from_edges(pg.looped);
  g.gcn_norm = pg.gcn_norm;
  g.looped_src = pg.looped.src;
  g.looped_dst = pg.looped.dst;
  g.norm_csr.resize(g.looped.num_entries());
  for (std::size_t p = 0; p < g.norm_csr.size(); ++p) g.norm_csr[p] = g.gcn_norm[g.looped.edge_id[p]];
  const std::int64_t deg = std::max(g.plain.max_row_length(), g.looped.max_row_length());
  if (deg * 256 > std::numeric_limits<std::int32_t>::max()) {
    throw UnsupportedError("int inference: in-degree " + std::to_string(deg) + " could overflow int32 accumulators");
  }
  return g;
}

IntGraph IntModel::prepare(const Graph& graph) const {
  IntGraph g = csr_graph(graph);
  g.tables.resize(layers_.size());
  g.table_index.resize(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const IntLayer& L = layers_[l];
    if (L.arch != Arch::gcn) continue;
    std::map<std::int32_t, std::uint16_t> slot;
    auto& tables = g.tables[l];
    auto& index = g.table_index[l];
    index.resize(g.looped.num_entries());
    for (std::size_t p = 0; p < index.size(); ++p) {
      const std::int32_t code = quantize_code(g.norm_csr[p], L.norm);
      auto it = slot.find(code);
      if (it == slot.end()) {
        const float nd = dequantize_code(code, L.norm);
        tables.push_back(make_code_table(L.features[0], L.message, [nd](float v) { return v * nd; }));
        it = slot.emplace(code, static_cast<std::uint16_t>(tables.size() - 1)).first;
      }
      index[p] = it->second;
    }
  }
  return g;
}

namespace {

QTensor gat_messages_and_aggregate(const IntLayer& L, const IntGraph& g, const QTensor& h) {
  const std::size_t n = h.rows, width = h.cols, heads = static_cast<std::size_t>(L.heads), f = width / heads;
  const auto a_src = dequantize_weight(L.weights[1]);
  const auto a_dst = dequantize_weight(L.weights[2]);
  std::vector<float> hd(h.data.size());
  for (std::size_t i = 0; i < hd.size(); ++i) hd[i] = dequantize_code(h.data[i], h.qp);
  std::vector<float> s_src(n * heads), s_dst(n * heads);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < heads; ++k) {
      float a = 0.0f, b = 0.0f;
      for (std::size_t j = 0; j < f; ++j) {
        a += hd[i * width + k * f + j] * a_src[k * f + j];
        b += hd[i * width + k * f + j] * a_dst[k * f + j];
      }
      s_src[i * heads + k] = a;
      s_dst[i * heads + k] = b;
    }
  }
  const CsrAdjacency& adj = g.looped;
  QTensor out;
  out.rows = n;
  out.cols = width;
  out.qp = L.aggregate;
  out.data.resize(n * width);
  std::vector<float> logits, alpha;
  std::vector<std::int32_t> acc(width);
  for (Index i = 0; i < adj.num_nodes; ++i) {
    const Index p0 = adj.row_ptr[i], p1 = adj.row_ptr[i + 1];
    const std::size_t deg = static_cast<std::size_t>(p1 - p0);
    logits.assign(deg * heads, 0.0f);
    for (std::size_t e = 0; e < deg; ++e) {
      const std::size_t src = static_cast<std::size_t>(adj.col_idx[p0 + static_cast<Index>(e)]);
      for (std::size_t k = 0; k < heads; ++k) {
        float v = s_src[src * heads + k] + s_dst[static_cast<std::size_t>(i) * heads + k];
        v = v > 0.0f ? v : 0.2f * v;
        logits[e * heads + k] = fake_quantize_value(v, L.attention);
      }
    }
    alpha.assign(deg * heads, 0.0f);
    for (std::size_t k = 0; k < heads; ++k) {
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t e = 0; e < deg; ++e) mx = std::max(mx, logits[e * heads + k]);
      float total = 0.0f;
      for (std::size_t e = 0; e < deg; ++e) {
        alpha[e * heads + k] = std::exp(logits[e * heads + k] - mx);
        total += alpha[e * heads + k];
      }
      for (std::size_t e = 0; e < deg; ++e) alpha[e * heads + k] /= total;
    }
    std::fill(acc.begin(), acc.end(), 0);
    for (std::size_t e = 0; e < deg; ++e) {
      const std::size_t src = static_cast<std::size_t>(adj.col_idx[p0 + static_cast<Index>(e)]);
      for (std::size_t c = 0; c < width; ++c) {
        const float m = hd[src * width + c] * alpha[e * heads + c / f];
        acc[c] += quantize_code(m, L.message) - L.message.zero_point;
      }
    }
    std::int8_t* o = out.data.data() + static_cast<std::size_t>(i) * width;
    for (std::size_t c = 0; c < width; ++c) o[c] = static_cast<std::int8_t>(L.aggregate_rq.apply(acc[c]));
  }
  return out;
}

}  // namespace

QTensor IntModel::forward_codes(const IntGraph& g, const Tensor& x, int threads, std::vector<double>* layer_ms) const {
  if (layers_.empty()) throw ContractError("int model has no layers");
  if (x.rows() != static_cast<std::size_t>(g.looped.num_nodes)) throw DimensionError("int forward: feature rows != nodes");
  if (layer_ms) layer_ms->assign(layers_.size(), 0.0);
  auto t0 = std::chrono::steady_clock::now();
  QTensor q = quantize_tensor(x, layers_.front().inputs);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const IntLayer& L = layers_[l];
    if (q.cols != L.weights.front().rows) throw DimensionError("int forward: input width does not match layer");
    QTensor u;
    if (L.arch == Arch::gcn || L.arch == Arch::gat) {
      QTensor h;
      int_linear(q, L.packed[0], L.linear_rq[0], {}, h, threads);
      h.qp = L.features[0];
      QTensor a;
      if (L.arch == Arch::gcn) {
        int_spmm(g.looped, h, g.tables[l], g.table_index[l], L.message.zero_point, L.aggregate_rq, a, threads);
      } else {
        a = gat_messages_and_aggregate(L, g, h);
      }
      a.qp = L.aggregate;
      int_requantize_rows(a, L.update_rq, L.update_offsets, u, threads);
      u.qp = L.update;
    } else {
      QTensor a;
      const CodeTable* table = &L.message_table;
      int_spmm(g.plain, q, std::span<const CodeTable>(table, 1), {}, L.message.zero_point, L.aggregate_rq, a, threads);
      a.qp = L.aggregate;
      QTensor c;
      c.rows = q.rows;
      c.cols = q.cols;
      c.qp = L.features[0];
      c.data.resize(q.data.size());
      const Requantizer& rx = L.combine_rq[0];
      const Requantizer& ra = L.combine_rq[1];
      for (std::size_t i = 0; i < q.data.size(); ++i) {
        const std::int64_t v = static_cast<std::int64_t>(q.data[i] - q.qp.zero_point) * rx.multiplier +
                               static_cast<std::int64_t>(a.data[i] - a.qp.zero_point) * ra.multiplier;
        const std::int64_t r = rounding_shift_half_even(v, rx.shift, rx.zero_point);
        c.data[i] = static_cast<std::int8_t>(std::clamp<std::int64_t>(r, rx.q_min, rx.q_max));
      }
      const std::size_t n = L.packed.size();
      for (std::size_t i = 0; i < n; ++i) {
        QTensor o;
        int_linear(c, L.packed[i], L.linear_rq[i], L.linear_offsets[i], o, threads);
        if (i + 1 < n) {
          o.qp = L.features[i + 1];
          relu_codes(o, o.qp.zero_point);
        } else {
          o.qp = L.update;
        }
        c = std::move(o);
      }
      u = std::move(c);
    }
    if (l + 1 < layers_.size()) {
      apply_code_table(L.act_table, u.data);
      u.qp = layers_[l + 1].inputs;
    }
    q = std::move(u);
    if (layer_ms) {
      (*layer_ms)[l] = elapsed_ms(t0);
      t0 = std::chrono::steady_clock::now();
    }
  }
  return q;
}

Tensor IntModel::forward(const IntGraph& graph, const Tensor& x, int threads) const {
  return dequantize_tensor(forward_codes(graph, x, threads));
}

namespace {

constexpr char kIntMagic[4] = {'D', 'Q', 'I', 'M'};
constexpr std::uint32_t kIntVersion = 1;

}  // namespace

void IntModel::save(const std::filesystem::path& path) const {
  nlohmann::json layers = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& L : layers_) {
    nlohmann::json w = nlohmann::json::array();
    for (const auto& iw : L.weights) {
      w.push_back({iw.rows, iw.cols, iw.scale, offset});
      offset += iw.q.size();
    }
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& f : L.features) feats.push_back(qp_json(f));
    layers.push_back({{"arch", dq::to_string(L.arch)},
                      {"heads", L.heads},
                      {"eps", L.eps},
                      {"act", to_string(L.act_after)},
                      {"inputs", qp_json(L.inputs)},
                      {"features", feats},
                      {"norm", qp_json(L.norm)},
                      {"attention", qp_json(L.attention)},
                      {"message", qp_json(L.message)},
                      {"aggregate", qp_json(L.aggregate)},
                      {"update", qp_json(L.update)},
                      {"weights", w}});
  }
  const std::string text = nlohmann::json{{"version", kIntVersion}, {"model", to_json(spec_)}, {"layers", layers}}.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path.string());
  out.write(kIntMagic, 4);
  const std::uint32_t v = kIntVersion;
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&v), 4);
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& L : layers_)
    for (const auto& iw : L.weights)
      out.write(reinterpret_cast<const char*>(iw.q.data()), static_cast<std::streamsize>(iw.q.size()));
  if (!out) throw LoadError("failed writing " + path.string());
}

IntModel IntModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  char magic[4];
  std::uint32_t v = 0;
  std::uint64_t len = 0;
  if (!in.read(magic, 4) || std::memcmp(magic, kIntMagic, 4) != 0) throw LoadError(path.string() + " is not an integer model");
  if (!in.read(reinterpret_cast<char*>(&v), 4) || v != kIntVersion) throw LoadError("unsupported integer model version");
  if (!in.read(reinterpret_cast<char*>(&len), 8) || len > (std::uint64_t{1} << 32)) throw LoadError("bad manifest length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw LoadError("integer model truncated");
  std::vector<IntLayer> layers;
  ModelSpec spec;
  try {
    const auto doc = nlohmann::json::parse(text);
    spec = model_spec_from_json(doc.at("model"));
    for (const auto& j : doc.at("layers")) {
      IntLayer L;
      L.arch = parse_arch(j.at("arch").get<std::string>());
      L.heads = j.at("heads").get<Index>();
      L.eps = j.at("eps").get<float>();
      L.act_after = parse_activation(j.at("act").get<std::string>());
      L.inputs = qp_from(j.at("inputs"));
      for (const auto& f : j.at("features")) L.features.push_back(qp_from(f));
      L.norm = qp_from(j.at("norm"));
      L.attention = qp_from(j.at("attention"));
      L.message = qp_from(j.at("message"));
      L.aggregate = qp_from(j.at("aggregate"));
      L.update = qp_from(j.at("update"));
      for (const auto& w : j.at("weights")) {
        IntWeight iw;
        iw.rows = w.at(0).get<std::size_t>();
        iw.cols = w.at(1).get<std::size_t>();
        iw.scale = w.at(2).get<float>();
        iw.q.resize(iw.rows * iw.cols);
        L.weights.push_back(std::move(iw));
      }
      layers.push_back(std::move(L));
    }
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("bad integer model manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("bad integer model manifest: ") + e.what());
  }
  for (auto& L : layers)
    for (auto& iw : L.weights)
      if (!in.read(reinterpret_cast<char*>(iw.q.data()), static_cast<std::streamsize>(iw.q.size()))) {
        throw LoadError("integer model truncated in weights");
      }
  return IntModel(std::move(layers), spec);
}

namespace {

template <class Fn>
void split_rows(std::size_t rows, int threads, Fn&& fn) {
  const std::size_t t = static_cast<std::size_t>(std::max(1, threads));
  if (t == 1 || rows < 2 * t) {
    fn(std::size_t{0}, rows);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (rows + t - 1) / t;
  for (std::size_t b = 0; b < rows; b += chunk) {
    const std::size_t e = std::min(rows, b + chunk);
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& th : pool) th.join();
}

void axpy_row(const float* x, std::size_t k, const float* w, std::size_t n, float* out) {
#if defined(__AVX512F__)
  std::size_t j = 0;
  for (; j + 64 <= n; j += 64) {
    __m512 a0 = _mm512_loadu_ps(out + j), a1 = _mm512_loadu_ps(out + j + 16);
    __m512 a2 = _mm512_loadu_ps(out + j + 32), a3 = _mm512_loadu_ps(out + j + 48);
    for (std::size_t kk = 0; kk < k; ++kk) {
      if (x[kk] == 0.0f) continue;
      const __m512 xv = _mm512_set1_ps(x[kk]);
      const float* wr = w + kk * n + j;
      a0 = _mm512_fmadd_ps(xv, _mm512_loadu_ps(wr), a0);
      a1 = _mm512_fmadd_ps(xv, _mm512_loadu_ps(wr + 16), a1);
      a2 = _mm512_fmadd_ps(xv, _mm512_loadu_ps(wr + 32), a2);
      a3 = _mm512_fmadd_ps(xv, _mm512_loadu_ps(wr + 48), a3);
    }
    _mm512_storeu_ps(out + j, a0);
    _mm512_storeu_ps(out + j + 16, a1);
    _mm512_storeu_ps(out + j + 32, a2);
    _mm512_storeu_ps(out + j + 48, a3);
  }
  for (; j < n; j += 16) {
    const __mmask16 m = n - j >= 16 ? __mmask16(0xffff) : __mmask16((1u << (n - j)) - 1);
    __m512 a = _mm512_maskz_loadu_ps(m, out + j);
    for (std::size_t kk = 0; kk < k; ++kk) {
      if (x[kk] == 0.0f) continue;
      a = _mm512_fmadd_ps(_mm512_set1_ps(x[kk]), _mm512_maskz_loadu_ps(m, w + kk * n + j), a);
    }
    _mm512_mask_storeu_ps(out + j, m, a);
  }
#else
  for (std::size_t kk = 0; kk < k; ++kk) {
    const float xv = x[kk];
    if (xv == 0.0f) continue;
    const float* wr = w + kk * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += xv * wr[j];
  }
#endif
}

void activate_inplace(Activation a, Tensor& t) {
  if (a == Activation::none) return;
  float* d = t.data().data();
  for (std::size_t i = 0; i < t.size(); ++i) d[i] = activate(a, d[i]);
}

}  // namespace

void fp32_linear(const Tensor& x, const Tensor& w, const float* bias, Tensor& out, int threads) {
  if (x.cols() != w.rows()) throw DimensionError("fp32_linear: inner dimensions differ");
  const std::size_t k = x.cols(), n = w.cols();
  if (!out.defined() || out.rows() != x.rows() || out.cols() != n) out = Tensor(x.rows(), n);
  split_rows(x.rows(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      float* o = out.data().data() + i * n;
      if (bias) std::copy(bias, bias + n, o);
      else std::fill(o, o + n, 0.0f);
      axpy_row(x.data().data() + i * k, k, w.data().data(), n, o);
    }
  });
}

Fp32Engine::Fp32Engine(Model& model) {
  if (model.spec().graph_level) throw UnsupportedError("fp32 engine: graph-level models are not supported");
  auto& gnn = model.layers();
  for (std::size_t l = 0; l < gnn.size(); ++l) {
    Layer L;
    L.arch = gnn[l]->arch();
    if (L.arch == Arch::gin) {
      auto& gin = static_cast<GinLayer&>(*gnn[l]);
      L.eps = gin.eps_.item();
      for (std::size_t i = 0; i < gin.weights_.size(); ++i) {
        L.weights.push_back(gin.weights_[i].clone());
        L.weights.push_back(gin.biases_[i].clone());
      }
    } else {
      for (auto& p : gnn[l]->parameters()) L.weights.push_back(p.tensor.clone());
      if (L.arch == Arch::gat) L.heads = static_cast<GatLayer&>(*gnn[l]).heads();
    }
    if (l + 1 < gnn.size()) L.act_after = L.arch == Arch::gat ? Activation::elu : Activation::relu;
    layers_.push_back(std::move(L));
  }
}

Tensor Fp32Engine::forward(const IntGraph& g, const Tensor& x, int threads, std::vector<double>* layer_ms) const {
  if (x.rows() != static_cast<std::size_t>(g.looped.num_nodes)) throw DimensionError("fp32 forward: feature rows != nodes");
  if (layer_ms) layer_ms->assign(layers_.size(), 0.0);
  auto t0 = std::chrono::steady_clock::now();
  Tensor cur = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& L = layers_[l];
    Tensor out;
    if (L.arch == Arch::gcn || L.arch == Arch::gat) {
      Tensor h;
      fp32_linear(cur, L.weights[0], nullptr, h, threads);
      const std::size_t width = h.cols();
      const float* bias = L.weights.back().data().data();
      out = Tensor(h.rows(), width);
      const CsrAdjacency& adj = g.looped;
      if (L.arch == Arch::gcn) {
        split_rows(h.rows(), threads, [&](std::size_t b, std::size_t e) {
          for (std::size_t i = b; i < e; ++i) {
            float* o = out.data().data() + i * width;
            std::copy(bias, bias + width, o);
            for (Index p = adj.row_ptr[i]; p < adj.row_ptr[i + 1]; ++p) {
              const float nv = g.norm_csr[static_cast<std::size_t>(p)];
              const float* hs = h.data().data() + static_cast<std::size_t>(adj.col_idx[p]) * width;
              for (std::size_t c = 0; c < width; ++c) o[c] += nv * hs[c];
            }
          }
        });
      } else {
        const std::size_t heads = static_cast<std::size_t>(L.heads), f = width / heads, n = h.rows();
        const float* as = L.weights[1].data().data();
        const float* ad = L.weights[2].data().data();
        std::vector<float> s_src(n * heads), s_dst(n * heads);
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t k = 0; k < heads; ++k) {
            float a = 0.0f, d = 0.0f;
            for (std::size_t j = 0; j < f; ++j) {
              a += h.data().data()[i * width + k * f + j] * as[k * f + j];
              d += h.data().data()[i * width + k * f + j] * ad[k * f + j];
            }
            s_src[i * heads + k] = a;
            s_dst[i * heads + k] = d;
          }
        }
        split_rows(n, threads, [&](std::size_t b, std::size_t e) {
          std::vector<float> alpha;
          for (std::size_t i = b; i < e; ++i) {
            const Index p0 = adj.row_ptr[i], p1 = adj.row_ptr[i + 1];
            const std::size_t deg = static_cast<std::size_t>(p1 - p0);
            alpha.assign(deg * heads, 0.0f);
            for (std::size_t k = 0; k < heads; ++k) {
              float mx = -std::numeric_limits<float>::infinity();
              for (std::size_t q = 0; q < deg; ++q) {
                const std::size_t src = static_cast<std::size_t>(adj.col_idx[p0 + static_cast<Index>(q)]);
                float v = s_src[src * heads + k] + s_dst[i * heads + k];
                v = v > 0.0f ? v : 0.2f * v;
                alpha[q * heads + k] = v;
                mx = std::max(mx, v);
              }
              float total = 0.0f;
              for (std::size_t q = 0; q < deg; ++q) {
                alpha[q * heads + k] = std::exp(alpha[q * heads + k] - mx);
                total += alpha[q * heads + k];
              }
              for (std::size_t q = 0; q < deg; ++q) alpha[q * heads + k] /= total;
            }
            float* o = out.data().data() + i * width;
            std::copy(bias, bias + width, o);
            for (std::size_t q = 0; q < deg; ++q) {
              const float* hs = h.data().data() + static_cast<std::size_t>(adj.col_idx[p0 + static_cast<Index>(q)]) * width;
              for (std::size_t c = 0; c < width; ++c) o[c] += alpha[q * heads + c / f] * hs[c];
            }
          }
        });
      }
    } else {
      const std::size_t width = cur.cols(), n = cur.rows();
      Tensor c(n, width);
      const CsrAdjacency& adj = g.plain;
      const float scale = 1.0f + L.eps;
      split_rows(n, threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          float* o = c.data().data() + i * width;
          const float* xi = cur.data().data() + i * width;
          for (std::size_t k = 0; k < width; ++k) o[k] = scale * xi[k];
          for (Index p = adj.row_ptr[i]; p < adj.row_ptr[i + 1]; ++p) {
            const float* xs = cur.data().data() + static_cast<std::size_t>(adj.col_idx[p]) * width;
            for (std::size_t k = 0; k < width; ++k) o[k] += xs[k];
          }
        }
      });
      const std::size_t m = L.weights.size() / 2;
      for (std::size_t i = 0; i < m; ++i) {
        Tensor o;
        fp32_linear(c, L.weights[2 * i], L.weights[2 * i + 1].data().data(), o, threads);
        if (i + 1 < m) activate_inplace(Activation::relu, o);
        c = std::move(o);
      }
      out = std::move(c);
    }
    activate_inplace(L.act_after, out);
    cur = std::move(out);
    if (layer_ms) {
      (*layer_ms)[l] = elapsed_ms(t0);
      t0 = std::chrono::steady_clock::now();
    }
  }
  return cur;
}

namespace {

LatencyStats summarize(std::vector<double> totals, const std::vector<std::vector<double>>& layers) {
  LatencyStats s;
  std::sort(totals.begin(), totals.end());
  const std::size_t n = totals.size();
  s.median_ms = n % 2 ? totals[n / 2] : 0.5 * (totals[n / 2 - 1] + totals[n / 2]);
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
  s.p95_ms = totals[std::max<std::size_t>(rank, 1) - 1];
  if (!layers.empty()) {
    for (std::size_t l = 0; l < layers.front().size(); ++l) {
      std::vector<double> v;
      for (const auto& r : layers) v.push_back(r[l]);
      std::sort(v.begin(), v.end());
      s.layer_median_ms.push_back(v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]));
    }
  }
  return s;
}

template <class Fn>
LatencyStats time_runs(const BenchOptions& o, Fn&& run) {
  std::vector<double> layer;
  for (int i = 0; i < o.warmup; ++i) run(layer);
  std::vector<double> totals;
  std::vector<std::vector<double>> per_layer;
  for (int i = 0; i < o.reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run(layer);
    totals.push_back(elapsed_ms(t0));
    per_layer.push_back(layer);
  }
  return summarize(std::move(totals), per_layer);
}

}  // namespace

nlohmann::json BenchReport::to_json() const {
  const auto row = [&](const std::string& precision, const LatencyStats& s, double sp) {
    return nlohmann::json{{"graph", graph},         {"arch", arch},       {"precision", precision},
                          {"median_ms", s.median_ms}, {"p95_ms", s.p95_ms}, {"speedup", sp},
                          {"threads", threads},     {"reps", reps},       {"warmup", warmup},
                          {"layer_median_ms", s.layer_median_ms}};
  };
  return nlohmann::json::array({row("fp32", fp32, 1.0), row("int8", int8, speedup)});
}

BenchReport benchmark(const IntModel& int_model, const Fp32Engine& fp32, const Graph& graph,
                      const std::string& graph_name, const BenchOptions& options) {
  if (options.reps < 30 || options.warmup < 5) throw ConfigError("bench: needs at least 30 reps and 5 warmup runs");
  if (options.threads < 1) throw ConfigError("bench: threads must be positive");
  const IntGraph g = int_model.prepare(graph);
  BenchReport r;
  r.graph = graph_name;
  r.arch = to_string(int_model.spec().arch);
  r.threads = options.threads;
  r.reps = options.reps;
  r.warmup = options.warmup;
  r.fp32 = time_runs(options, [&](std::vector<double>& ms) { fp32.forward(g, graph.x, options.threads, &ms); });
  r.int8 = time_runs(options, [&](std::vector<double>& ms) { int_model.forward_codes(g, graph.x, options.threads, &ms); });
  r.speedup = r.int8.median_ms > 0.0 ? r.fp32.median_ms / r.int8.median_ms : 0.0;
  return r;
}

}  // namespace dq
