#include "dq/layers.hpp"

#include <algorithm>
#include <cmath>

#include "dq/error.hpp"
#include "dq/ops.hpp"

namespace dq {

std::string to_string(Arch a) {
  switch (a) {
    case Arch::gcn: return "gcn";
    case Arch::gat: return "gat";
    case Arch::gin: return "gin";
  }
  return "?";
}

Arch parse_arch(const std::string& s) {
  if (s == "gcn" || s == "GCN") return Arch::gcn;
  if (s == "gat" || s == "GAT") return Arch::gat;
  if (s == "gin" || s == "GIN") return Arch::gin;
  throw ConfigError("unknown architecture '" + s + "'");
}

std::string to_string(SiteKind s) {
  switch (s) {
    case SiteKind::inputs: return "inputs";
    case SiteKind::weights: return "weights";
    case SiteKind::features: return "features";
    case SiteKind::norm: return "norm";
    case SiteKind::attention: return "attention";
    case SiteKind::message: return "message";
    case SiteKind::aggregate: return "aggregate";
    case SiteKind::update: return "update";
  }
  return "?";
}

SiteKind parse_site(const std::string& s) {
  for (SiteKind k : kAllSites)
    if (to_string(k) == s) return k;
  throw ConfigError("unknown quantization site '" + s + "'");
}

std::vector<SiteKind> sites_for(Arch arch) {
  std::vector<SiteKind> out = {SiteKind::inputs, SiteKind::weights, SiteKind::features};
  if (arch == Arch::gcn) out.push_back(SiteKind::norm);
  if (arch == Arch::gat) out.push_back(SiteKind::attention);
  out.insert(out.end(), {SiteKind::message, SiteKind::aggregate, SiteKind::update});
  return out;
}

QuantConfig QuantScheme::config_for(SiteKind site) const {
  const auto it = bits_override.find(site);
  if (!enabled && it == bits_override.end()) return QuantConfig::passthrough();
  QuantConfig c = site == SiteKind::weights ? weight : activation;
  if (it != bits_override.end()) c.bits = it->second;
  c.validate();
  return c;
}

QuantConfig QuantScheme::readout_config_for(SiteKind site) const {
  QuantConfig c = config_for(site);
  if (!c.bypass() && readout_observer) c.observer = *readout_observer;
  return c;
}

QuantScheme QuantScheme::uniform(int bits, SteMode ste, ObserverKind observer) {
  QuantScheme s;
  s.enabled = bits < 32;
  s.activation.bits = bits;
  s.activation.ste = ste;
  s.activation.observer = observer;
  s.weight = s.activation;
  s.weight.symmetric = true;
  s.weight.is_signed = true;
  return s;
}

LayerQuantSites::LayerQuantSites(Arch arch, const QuantScheme& scheme, std::size_t num_weights,
                                 std::size_t num_features) {
  auto site = [&](SiteKind k) {
    QuantSite s;
    s.low = QuantModule(scheme.config_for(k));
    return s;
  };
  inputs = site(SiteKind::inputs);
  features.assign(num_features, site(SiteKind::features));
  if (arch == Arch::gcn) norm = QuantModule(scheme.config_for(SiteKind::norm));
  if (arch == Arch::gat) attention = QuantModule(scheme.config_for(SiteKind::attention));
  message = site(SiteKind::message);
  aggregate = site(SiteKind::aggregate);
  update = site(SiteKind::update);
  weights.assign(num_weights, QuantModule(scheme.config_for(SiteKind::weights)));
}

void LayerQuantSites::for_each(const std::function<void(const std::string&, QuantModule&)>& fn) {
  auto pair = [&](const std::string& name, QuantSite& s) {
    fn(name + "_low", s.low);
    fn(name + "_high", s.high);
  };
  pair("inputs", inputs);
  for (std::size_t i = 0; i < features.size(); ++i) pair("features." + std::to_string(i), features[i]);
  fn("norm", norm);
  fn("attention", attention);
  pair("message", message);
  pair("aggregate", aggregate);
  pair("update", update);
  for (std::size_t i = 0; i < weights.size(); ++i) fn("weights_low." + std::to_string(i), weights[i]);
}

std::vector<float> gcn_norm(const EdgeList& looped) {
  const auto deg = compute_in_degree(looped.dst, looped.num_nodes);
  std::vector<float> out(looped.size());
  for (std::size_t e = 0; e < looped.size(); ++e) {
    const double d = static_cast<double>(deg[looped.src[e]]) * deg[looped.dst[e]];
    if (d <= 0.0) throw ContractError("gcn_norm: endpoint without a self-loop");
    out[e] = static_cast<float>(1.0 / std::sqrt(d));
  }
  return out;
}

PreparedGraph PreparedGraph::from(const Graph& graph) {
  PreparedGraph p;
  p.plain.num_nodes = graph.num_nodes;
  p.plain.src = graph.src;
  p.plain.dst = graph.dst;
  p.looped = p.plain;
  std::vector<std::uint8_t> has_loop(static_cast<std::size_t>(graph.num_nodes), 0);
  for (std::size_t e = 0; e < graph.src.size(); ++e)
    if (graph.src[e] == graph.dst[e]) has_loop[graph.src[e]] = 1;
  for (Index i = 0; i < graph.num_nodes; ++i) {
    if (has_loop[i]) continue;
    p.looped.src.push_back(i);
    p.looped.dst.push_back(i);
  }
  p.gcn_norm = dq::gcn_norm(p.looped);
  p.prob_mask = graph.prob_mask;
  return p;
}

namespace {

std::vector<std::uint8_t> edge_protection(std::span<const std::uint8_t> mask, std::span<const Index> src) {
  if (mask.empty()) return {};
  std::vector<std::uint8_t> out(src.size());
  for (std::size_t e = 0; e < src.size(); ++e) out[e] = mask[src[e]];
  return out;
}

Tensor quant(const Tensor& x, QuantSite& site, std::span<const std::uint8_t> protect, const ForwardContext& ctx) {
  return quantize_rows(x, site.low, site.high, protect, ctx.training);
}

Tensor maybe_dropout(const Tensor& x, float p, ForwardContext& ctx) {
  if (!ctx.training || p <= 0.0f) return x;
  if (ctx.rng == nullptr) throw ContractError("dropout in training needs a random source");
  return dropout(x, p, *ctx.rng, true);
}

}  // namespace

Tensor nqat_weight_view(const Tensor& w, const QuantModule& qm, float noise_rate, Rng& rng) {
  if (qm.bypass()) return w;
  const QParams qp = qm.qparams();
  const bool clip = qm.config().ste == SteMode::grad_clip;
  Tensor out = w.clone();
  std::vector<std::uint8_t> gate(w.size(), 1);
  const float lo = static_cast<float>(qp.q_min), hi = static_cast<float>(qp.q_max);
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!rng.bernoulli(noise_rate)) continue;
    out.data()[i] = fake_quantize_value(w.data()[i], qp);
    if (clip) {
      const float raw = w.data()[i] / qp.scale + static_cast<float>(qp.zero_point);
      gate[i] = (raw >= lo && raw <= hi) ? 1 : 0;
    }
  }
  if (needs_recording({&w})) {
    auto wi = w.shared_impl();
    Tape::active()->record({w}, out, [wi, gate = std::move(gate)](std::span<const float> g) {
      std::vector<float> dw(g.begin(), g.end());
      for (std::size_t i = 0; i < dw.size(); ++i)
        if (!gate[i]) dw[i] = 0.0f;
      accumulate_grad(*wi, dw);
    });
  }
  return out;
}

Tensor quantize_weight(const Tensor& w, QuantModule& qm, ForwardContext& ctx) {
  if (qm.bypass()) return w;
  if (!ctx.training) return qm.initialized() ? fake_quantize(w, qm) : w;
  qm.observe(w.data());
  if (ctx.nqat_rate) {
    if (ctx.noise_rng == nullptr) throw ContractError("noisy QAT needs a random source");
    return nqat_weight_view(w, qm, *ctx.nqat_rate, *ctx.noise_rng);
  }
  return fake_quantize(w, qm);
}

Tensor propagate(const Tensor& messages, const EdgeList& edges, LayerQuantSites& sites,
                 ForwardContext& ctx, const std::function<Tensor(const Tensor&)>& update) {
  if (messages.rows() != edges.size()) {
    throw DimensionError("propagate: " + std::to_string(messages.rows()) + " messages for " +
                         std::to_string(edges.size()) + " edges");
  }
  if (!ctx.mask.empty() && ctx.mask.size() != static_cast<std::size_t>(edges.num_nodes)) {
    throw ContractError("propagate: mask length " + std::to_string(ctx.mask.size()) + " != nodes " +
                        std::to_string(edges.num_nodes));
  }
  const auto edge_mask = edge_protection(ctx.mask, edges.src);
  Tensor msg = quant(messages, sites.message, edge_mask, ctx);
  Tensor aggr = scatter_add(msg, edges.dst, static_cast<std::size_t>(edges.num_nodes));
  if (ctx.on_aggregate) ctx.on_aggregate(ctx.layer_index, aggr);
  aggr = quant(aggr, sites.aggregate, ctx.mask, ctx);
  Tensor out = update ? update(aggr) : aggr;
  return quant(out, sites.update, ctx.mask, ctx);
}

Tensor glorot(Index rows, Index cols, Rng& rng, Index fan_in, Index fan_out) {
  if (fan_in == 0) fan_in = rows;
  if (fan_out == 0) fan_out = cols;
  const float bound = std::sqrt(6.0f / static_cast<float>(fan_in + fan_out));
  Tensor t(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  for (float& v : t.data()) v = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  return t;
}

namespace {

Tensor zeros_param(std::size_t rows, std::size_t cols) {
  Tensor t(rows, cols);
  t.set_requires_grad(true);
  return t;
}

void check_input(const Tensor& x, Index in_dim, Index num_nodes, const char* who) {
  if (x.cols() != static_cast<std::size_t>(in_dim)) {
    throw DimensionError(std::string(who) + ": expected " + std::to_string(in_dim) + " input features, got " +
                         std::to_string(x.cols()));
  }
  if (x.rows() != static_cast<std::size_t>(num_nodes)) {
    throw DimensionError(std::string(who) + ": feature rows " + std::to_string(x.rows()) + " != nodes " +
                         std::to_string(num_nodes));
  }
}

}  // namespace

GcnLayer::GcnLayer(Index in_dim, Index out_dim, const QuantScheme& scheme, Rng& init)
    : weight_(glorot(in_dim, out_dim, init)), bias_(zeros_param(1, static_cast<std::size_t>(out_dim))) {
  sites_ = LayerQuantSites(Arch::gcn, scheme, 2, 1);
}

Tensor GcnLayer::forward(const Tensor& x, const PreparedGraph& graph, ForwardContext& ctx) {
  check_input(x, in_dim(), graph.looped.num_nodes, "gcn");
  Tensor xq = quant(x, sites_.inputs, ctx.mask, ctx);
  Tensor wq = quantize_weight(weight_, sites_.weights[0], ctx);
  Tensor h = quant(matmul(xq, wq), sites_.features[0], ctx.mask, ctx);

  const auto edge_mask = edge_protection(ctx.mask, graph.looped.src);
  QuantModule identity(QuantConfig::passthrough());
  Tensor norm = Tensor::from(graph.gcn_norm.size(), 1, graph.gcn_norm);
  norm = quantize_rows(norm, sites_.norm, identity, edge_mask, ctx.training);

  Tensor messages = mul(gather(h, graph.looped.src), norm);
  Tensor bq = quantize_weight(bias_, sites_.weights[1], ctx);
  return propagate(messages, graph.looped, sites_, ctx, [&](const Tensor& aggr) { return add(aggr, bq); });
}

std::vector<NamedTensor> GcnLayer::parameters() { return {{"weight", weight_}, {"bias", bias_}}; }

GatLayer::GatLayer(Index in_dim, Index heads, Index head_dim, const QuantScheme& scheme, Rng& init)
    : heads_(heads), head_dim_(head_dim) {
  if (heads <= 0 || head_dim <= 0) throw ConfigError("gat: heads and head width must be positive");
  weight_ = glorot(in_dim, heads * head_dim, init);
  att_src_ = glorot(1, heads * head_dim, init, heads, head_dim);
  att_dst_ = glorot(1, heads * head_dim, init, heads, head_dim);
  bias_ = zeros_param(1, static_cast<std::size_t>(heads * head_dim));
  sites_ = LayerQuantSites(Arch::gat, scheme, 4, 1);
}

Tensor GatLayer::forward(const Tensor& x, const PreparedGraph& graph, ForwardContext& ctx) {
  const EdgeList& edges = graph.looped;
  check_input(x, in_dim(), edges.num_nodes, "gat");
  Tensor xq = quant(x, sites_.inputs, ctx.mask, ctx);
  Tensor wq = quantize_weight(weight_, sites_.weights[0], ctx);
  Tensor h = quant(matmul(xq, wq), sites_.features[0], ctx.mask, ctx);

  Tensor a_src = quantize_weight(att_src_, sites_.weights[1], ctx);
  Tensor a_dst = quantize_weight(att_dst_, sites_.weights[2], ctx);
  Tensor s_src = head_dot(h, a_src, heads_);
  Tensor s_dst = head_dot(h, a_dst, heads_);
  Tensor logits = leaky_relu(add(gather(s_src, edges.src), gather(s_dst, edges.dst)), 0.2f);

  const auto edge_mask = edge_protection(ctx.mask, edges.src);
  QuantModule identity(QuantConfig::passthrough());
  logits = quantize_rows(logits, sites_.attention, identity, edge_mask, ctx.training);
  Tensor alpha = segment_softmax(logits, edges.dst, static_cast<std::size_t>(edges.num_nodes));
  alpha = maybe_dropout(alpha, ctx.attention_dropout, ctx);

  Tensor messages = scale_heads(gather(h, edges.src), alpha, heads_);
  Tensor bq = quantize_weight(bias_, sites_.weights[3], ctx);
  return propagate(messages, edges, sites_, ctx, [&](const Tensor& aggr) { return add(aggr, bq); });
}

std::vector<NamedTensor> GatLayer::parameters() {
  return {{"weight", weight_}, {"att_src", att_src_}, {"att_dst", att_dst_}, {"bias", bias_}};
}

GinLayer::GinLayer(std::vector<Index> dims, const QuantScheme& scheme, Rng& init) {
  if (dims.size() < 2) throw ConfigError("gin: MLP needs at least one linear layer");
  eps_ = zeros_param(1, 1);
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    weights_.push_back(glorot(dims[i], dims[i + 1], init));
    biases_.push_back(zeros_param(1, static_cast<std::size_t>(dims[i + 1])));
  }
  sites_ = LayerQuantSites(Arch::gin, scheme, 2 * weights_.size(), weights_.size());
}

Tensor GinLayer::forward(const Tensor& x, const PreparedGraph& graph, ForwardContext& ctx) {
  const EdgeList& edges = graph.plain;
  check_input(x, in_dim(), edges.num_nodes, "gin");
  Tensor xq = quant(x, sites_.inputs, ctx.mask, ctx);
  Tensor messages = gather(xq, edges.src);
  auto update = [&](const Tensor& aggr) {
    Tensor h = add(add(xq, mul(xq, eps_)), aggr);
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      h = quant(h, sites_.features[i], ctx.mask, ctx);
      Tensor wq = quantize_weight(weights_[i], sites_.weights[2 * i], ctx);
      Tensor bq = quantize_weight(biases_[i], sites_.weights[2 * i + 1], ctx);
      h = add(matmul(h, wq), bq);
      if (i + 1 < weights_.size()) h = relu(h);
    }
    return h;
  };
  return propagate(messages, edges, sites_, ctx, update);
}

std::vector<NamedTensor> GinLayer::parameters() {
  std::vector<NamedTensor> out{{"eps", eps_}};
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out.push_back({"mlp." + std::to_string(i) + ".weight", weights_[i]});
    out.push_back({"mlp." + std::to_string(i) + ".bias", biases_[i]});
  }
  return out;
}

Tensor head_dot(const Tensor& x, const Tensor& a, Index heads) {
  const std::size_t n = x.rows(), width = x.cols(), h = static_cast<std::size_t>(heads);
  if (a.rows() != 1 || a.cols() != width || heads <= 0 || width % h != 0) {
    throw DimensionError("head_dot: attention vector does not match the head layout");
  }
  const std::size_t f = width / h;
  Tensor out(n, h);
  for (std::size_t i = 0; i < n; ++i) {
    const float* xr = x.row(i);
    for (std::size_t k = 0; k < h; ++k) {
      float acc = 0.0f;
      for (std::size_t j = 0; j < f; ++j) acc += xr[k * f + j] * a.data()[k * f + j];
      out(i, k) = acc;
    }
  }
  if (needs_recording({&x, &a})) {
    auto xi = x.shared_impl(), ai = a.shared_impl();
    Tape::active()->record({x, a}, out, [xi, ai, n, h, f](std::span<const float> g) {
      const std::size_t width = h * f;
      if (xi->requires_grad) {
        std::vector<float> dx(n * width);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < h; ++k)
            for (std::size_t j = 0; j < f; ++j) dx[i * width + k * f + j] = g[i * h + k] * ai->data[k * f + j];
        accumulate_grad(*xi, dx);
      }
      if (ai->requires_grad) {
        std::vector<float> da(width, 0.0f);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t k = 0; k < h; ++k)
            for (std::size_t j = 0; j < f; ++j) da[k * f + j] += g[i * h + k] * xi->data[i * width + k * f + j];
        accumulate_grad(*ai, da);
      }
    });
  }
  return out;
}

Tensor scale_heads(const Tensor& x, const Tensor& alpha, Index heads) {
  const std::size_t e = x.rows(), width = x.cols(), h = static_cast<std::size_t>(heads);
  if (alpha.rows() != e || alpha.cols() != h || heads <= 0 || width % h != 0) {
    throw DimensionError("scale_heads: coefficient shape does not match the head layout");
  }
  const std::size_t f = width / h;
  Tensor out(e, width);
  for (std::size_t r = 0; r < e; ++r)
    for (std::size_t k = 0; k < h; ++k)
      for (std::size_t j = 0; j < f; ++j) out(r, k * f + j) = x(r, k * f + j) * alpha(r, k);
  if (needs_recording({&x, &alpha})) {
    auto xi = x.shared_impl(), ai = alpha.shared_impl();
    Tape::active()->record({x, alpha}, out, [xi, ai, e, h, f](std::span<const float> g) {
      const std::size_t width = h * f;
      if (xi->requires_grad) {
        std::vector<float> dx(e * width);
        for (std::size_t r = 0; r < e; ++r)
          for (std::size_t k = 0; k < h; ++k)
            for (std::size_t j = 0; j < f; ++j) dx[r * width + k * f + j] = g[r * width + k * f + j] * ai->data[r * h + k];
        accumulate_grad(*xi, dx);
      }
      if (ai->requires_grad) {
        std::vector<float> da(e * h, 0.0f);
        for (std::size_t r = 0; r < e; ++r)
          for (std::size_t k = 0; k < h; ++k)
            for (std::size_t j = 0; j < f; ++j) da[r * h + k] += g[r * width + k * f + j] * xi->data[r * width + k * f + j];
        accumulate_grad(*ai, da);
      }
    });
  }
  return out;
}

std::string to_string(PoolMode m) { return m == PoolMode::sum ? "sum" : "mean"; }

PoolMode parse_pool(const std::string& s) {
  if (s == "sum" || s == "add") return PoolMode::sum;
  if (s == "mean") return PoolMode::mean;
  throw ConfigError("unknown pooling mode '" + s + "'");
}

Tensor global_pool(const Tensor& h, std::span<const Index> batch, Index num_graphs, PoolMode mode) {
  Tensor pooled = scatter_add(h, batch, static_cast<std::size_t>(num_graphs));
  if (mode == PoolMode::sum) return pooled;
  std::vector<float> inv(static_cast<std::size_t>(num_graphs), 0.0f);
  for (Index b : batch) inv[b] += 1.0f;
  for (float& v : inv) v = v > 0.0f ? 1.0f / v : 0.0f;
  const std::size_t g = inv.size();
  return mul(pooled, Tensor::from(g, 1, std::move(inv)));
}

Readout::Readout(std::vector<Index> dims, const QuantScheme& scheme, Rng& init) {
  if (dims.size() < 2) throw ConfigError("readout: needs at least one linear layer");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    weights_.push_back(glorot(dims[i], dims[i + 1], init));
    biases_.push_back(zeros_param(1, static_cast<std::size_t>(dims[i + 1])));
  }
  const std::size_t n = weights_.size();
  sites_.inputs.low = QuantModule(scheme.readout_config_for(SiteKind::inputs));
  sites_.features.assign(n - 1, QuantSite{});
  for (auto& s : sites_.features) s.low = QuantModule(scheme.readout_config_for(SiteKind::features));
  sites_.update.low = QuantModule(scheme.readout_config_for(SiteKind::update));
  sites_.message.low = QuantModule(QuantConfig::passthrough());
  sites_.aggregate.low = QuantModule(QuantConfig::passthrough());
  sites_.weights.assign(2 * n, QuantModule(scheme.readout_config_for(SiteKind::weights)));
}

Tensor Readout::forward(const Tensor& pooled, ForwardContext& ctx) {
  if (pooled.cols() != weights_.front().rows()) throw DimensionError("readout: input width mismatch");
  Tensor h = quant(pooled, sites_.inputs, {}, ctx);
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    Tensor wq = quantize_weight(weights_[i], sites_.weights[2 * i], ctx);
    Tensor bq = quantize_weight(biases_[i], sites_.weights[2 * i + 1], ctx);
    h = add(matmul(h, wq), bq);
    if (i + 1 < weights_.size()) h = quant(relu(h), sites_.features[i], {}, ctx);
  }
  return quant(h, sites_.update, {}, ctx);
}

std::vector<NamedTensor> Readout::parameters() {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    out.push_back({std::to_string(i) + ".weight", weights_[i]});
    out.push_back({std::to_string(i) + ".bias", biases_[i]});
  }
  return out;
}

}  // namespace dq
