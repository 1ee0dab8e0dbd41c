#include "dq/model.hpp"

#include "dq/degree_quant.hpp"
#include "dq/error.hpp"
#include "dq/ops.hpp"

namespace dq {

ModelSpec ModelSpec::citation(Arch arch, Index in_dim, Index num_classes) {
  ModelSpec s;
  s.arch = arch;
  s.in_dim = in_dim;
  s.out_dim = num_classes;
  s.num_layers = 2;
  if (arch == Arch::gat) {
    s.hidden = 8;
    s.heads = 8;
    s.out_heads = 1;
    s.dropout = 0.6f;
    s.attention_dropout = 0.6f;
  } else {
    s.hidden = 16;
  }
  return s;
}

void ModelSpec::validate() const {
  if (in_dim <= 0 || out_dim <= 0) throw ConfigError("model: input and output widths must be positive");
  if (hidden <= 0 || num_layers < 1) throw ConfigError("model: hidden width and layer count must be positive");
  if (arch == Arch::gat && (heads <= 0 || out_heads <= 0)) throw ConfigError("model: head counts must be positive");
  if (gin_mlp_layers < 1) throw ConfigError("model: GIN MLP needs at least one layer");
  if (!(dropout >= 0.0f && dropout < 1.0f) || !(attention_dropout >= 0.0f && attention_dropout < 1.0f)) {
    throw ConfigError("model: dropout must lie in [0, 1)");
  }
}

nlohmann::json to_json(const ModelSpec& s) {
  return {{"arch", to_string(s.arch)},
          {"in_dim", s.in_dim},
          {"out_dim", s.out_dim},
          {"hidden", s.hidden},
          {"num_layers", s.num_layers},
          {"heads", s.heads},
          {"out_heads", s.out_heads},
          {"gin_mlp_layers", s.gin_mlp_layers},
          {"dropout", s.dropout},
          {"attention_dropout", s.attention_dropout},
          {"graph_level", s.graph_level},
          {"pool", to_string(s.pool)},
          {"readout_hidden", s.readout_hidden}};
}

ModelSpec model_spec_from_json(const nlohmann::json& d) {
  ModelSpec s;
  s.arch = parse_arch(d.at("arch").get<std::string>());
  s.in_dim = d.at("in_dim").get<Index>();
  s.out_dim = d.at("out_dim").get<Index>();
  s.hidden = d.value("hidden", s.hidden);
  s.num_layers = d.value("num_layers", s.num_layers);
  s.heads = d.value("heads", s.heads);
  s.out_heads = d.value("out_heads", s.out_heads);
  s.gin_mlp_layers = d.value("gin_mlp_layers", s.gin_mlp_layers);
  s.dropout = d.value("dropout", s.dropout);
  s.attention_dropout = d.value("attention_dropout", s.attention_dropout);
  s.graph_level = d.value("graph_level", s.graph_level);
  s.pool = parse_pool(d.value("pool", std::string("sum")));
  s.readout_hidden = d.value("readout_hidden", s.readout_hidden);
  s.validate();
  return s;
}

nlohmann::json to_json(const QuantConfig& c) {
  return {{"bits", c.bits},
          {"signed", c.is_signed},
          {"symmetric", c.symmetric},
          {"ste", to_string(c.ste)},
          {"observer", to_string(c.observer)},
          {"momentum", c.momentum},
          {"percentile", c.percentile},
          {"percentile_base", to_string(c.percentile_base)}};
}

QuantConfig quant_config_from_json(const nlohmann::json& d) {
  QuantConfig c;
  c.bits = d.value("bits", c.bits);
  c.is_signed = d.value("signed", c.is_signed);
  c.symmetric = d.value("symmetric", c.symmetric);
  c.ste = parse_ste(d.value("ste", std::string("vanilla")));
  c.observer = parse_observer(d.value("observer", std::string("minmax")));
  c.momentum = d.value("momentum", c.momentum);
  c.percentile = d.value("percentile", c.percentile);
  c.percentile_base = parse_observer(d.value("percentile_base", std::string("minmax")));
  c.validate();
  return c;
}

nlohmann::json to_json(const QuantScheme& s) {
  nlohmann::json overrides = nlohmann::json::object();
  for (const auto& [site, bits] : s.bits_override) overrides[to_string(site)] = bits;
  nlohmann::json out = {{"enabled", s.enabled},
                        {"activation", to_json(s.activation)},
                        {"weight", to_json(s.weight)},
                        {"bits_override", overrides}};
  if (s.readout_observer) out["readout_observer"] = to_string(*s.readout_observer);
  return out;
}

QuantScheme quant_scheme_from_json(const nlohmann::json& d) {
  QuantScheme s;
  s.enabled = d.value("enabled", false);
  if (d.contains("activation")) s.activation = quant_config_from_json(d.at("activation"));
  if (d.contains("weight")) s.weight = quant_config_from_json(d.at("weight"));
  if (d.contains("bits_override")) {
    for (const auto& [k, v] : d.at("bits_override").items()) s.bits_override[parse_site(k)] = v.get<int>();
  }
  if (d.contains("readout_observer")) s.readout_observer = parse_observer(d.at("readout_observer").get<std::string>());
  return s;
}

Model::Model(ModelSpec spec, QuantScheme scheme, std::uint64_t init_seed)
    : spec_(spec), scheme_(std::move(scheme)) {
  spec_.validate();
  Rng init(init_seed);
  Index width = spec_.in_dim;
  for (Index l = 0; l < spec_.num_layers; ++l) {
    const bool last = l + 1 == spec_.num_layers && !spec_.graph_level;
    switch (spec_.arch) {
      case Arch::gcn: {
        const Index out = last ? spec_.out_dim : spec_.hidden;
        layers_.push_back(std::make_unique<GcnLayer>(width, out, scheme_, init));
        break;
      }
      case Arch::gat: {
        const Index heads = last ? spec_.out_heads : spec_.heads;
        const Index out = last ? spec_.out_dim : spec_.hidden;
        layers_.push_back(std::make_unique<GatLayer>(width, heads, out, scheme_, init));
        break;
      }
      case Arch::gin: {
        const Index out = last ? spec_.out_dim : spec_.hidden;
        std::vector<Index> dims{width};
        for (Index k = 1; k < spec_.gin_mlp_layers; ++k) dims.push_back(spec_.hidden);
        dims.push_back(out);
        layers_.push_back(std::make_unique<GinLayer>(dims, scheme_, init));
        break;
      }
    }
    width = layers_.back()->out_dim();
  }
  if (spec_.graph_level) {
    const Index rh = spec_.readout_hidden > 0 ? spec_.readout_hidden : spec_.hidden;
    readout_ = std::make_unique<Readout>(std::vector<Index>{width, rh, spec_.out_dim}, scheme_, init);
  }
}

Tensor Model::forward(const PreparedGraph& graph, const Tensor& x, const ForwardOptions& options) {
  ForwardContext ctx;
  ctx.training = options.training;
  ctx.rng = options.rng;
  ctx.noise_rng = options.noise_rng;
  ctx.nqat_rate = options.nqat_rate;
  ctx.attention_dropout = options.dropout ? spec_.attention_dropout : 0.0f;
  ctx.on_aggregate = options.on_aggregate;

  const bool masked = options.training && options.mask_rng != nullptr && !graph.prob_mask.empty();
  std::vector<std::uint8_t> mask;
  if (masked && options.shared_mask) mask = sample_mask(graph.prob_mask, *options.mask_rng);

  const bool drop = options.training && options.dropout && spec_.dropout > 0.0f;
  if (drop && options.rng == nullptr) throw ContractError("model: training with dropout needs a random source");
  Tensor h = drop ? dropout(x, spec_.dropout, *options.rng, true) : x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (masked && !options.shared_mask) mask = sample_mask(graph.prob_mask, *options.mask_rng);
    ctx.mask = mask;
    ctx.layer_index = static_cast<int>(l);
    h = layers_[l]->forward(h, graph, ctx);
    const bool last = l + 1 == layers_.size();
    if (last && !spec_.graph_level) break;
    h = spec_.arch == Arch::gat ? elu(h) : relu(h);
    if (drop && !last) h = dropout(h, spec_.dropout, *options.rng, true);
  }
  if (!spec_.graph_level) return h;

  if (options.batch == nullptr) throw ContractError("model: graph-level forward needs a batch vector");
  ctx.mask = {};
  Tensor pooled = global_pool(h, *options.batch, options.num_graphs, spec_.pool);
  return readout_->forward(pooled, ctx);
}

std::vector<NamedTensor> Model::parameters() {
  std::vector<NamedTensor> out;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    for (auto& p : layers_[l]->parameters()) out.push_back({"layers." + std::to_string(l) + "." + p.name, p.tensor});
  }
  if (readout_) {
    for (auto& p : readout_->parameters()) out.push_back({"readout." + p.name, p.tensor});
  }
  return out;
}

void Model::for_each_quant(const std::function<void(const std::string&, QuantModule&)>& fn) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string prefix = "layers." + std::to_string(l) + ".";
    layers_[l]->sites().for_each([&](const std::string& name, QuantModule& qm) { fn(prefix + name, qm); });
  }
  if (readout_) {
    readout_->sites().for_each([&](const std::string& name, QuantModule& qm) { fn("readout." + name, qm); });
  }
}

std::size_t Model::num_parameters() {
  std::size_t n = 0;
  for (auto& p : parameters()) n += p.tensor.size();
  return n;
}

}  // namespace dq
