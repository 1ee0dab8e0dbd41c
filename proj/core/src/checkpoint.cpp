#include "dq/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dq/error.hpp"

namespace dq {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'D', 'Q', 'C', 'K'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw LoadError("checkpoint truncated while reading " + what);
  return v;
}

}  // namespace

void save_checkpoint(Model& model, const nlohmann::json& train_config, const std::filesystem::path& path) {
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  auto params = model.parameters();
  for (const auto& p : params) {
    tensors.push_back({{"name", p.name}, {"rows", p.tensor.rows()}, {"cols", p.tensor.cols()}, {"offset", offset}});
    offset += p.tensor.size() * sizeof(float);
  }
  nlohmann::json quant = nlohmann::json::array();
  model.for_each_quant([&](const std::string& name, QuantModule& qm) {
    quant.push_back({{"name", name},
                     {"config", to_json(qm.config())},
                     {"initialized", qm.initialized()},
                     {"x_min", qm.x_min()},
                     {"x_max", qm.x_max()}});
  });
  const nlohmann::json manifest = {{"format", "dq-checkpoint"},
                                   {"version", kCheckpointVersion},
                                   {"model", to_json(model.spec())},
                                   {"scheme", to_json(model.scheme())},
                                   {"train_config", train_config},
                                   {"tensors", tensors},
                                   {"quantizers", quant}};
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write checkpoint " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) {
    out.write(reinterpret_cast<const char*>(p.tensor.data().data()),
              static_cast<std::streamsize>(p.tensor.size() * sizeof(float)));
  }
  if (!out) throw LoadError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw LoadError(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) throw LoadError("unsupported checkpoint version " + std::to_string(version));
  const auto len = get<std::uint64_t>(in, "manifest length");
  if (len > (std::uint64_t{1} << 32)) throw LoadError("checkpoint manifest length is implausible");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) throw LoadError("checkpoint truncated in manifest");

  LoadedCheckpoint ck;
  try {
    ck.manifest = nlohmann::json::parse(text);
    ck.train_config = ck.manifest.value("train_config", nlohmann::json::object());
    ck.model = std::make_unique<Model>(model_spec_from_json(ck.manifest.at("model")),
                                       quant_scheme_from_json(ck.manifest.at("scheme")), 0);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(std::string("bad checkpoint manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("bad checkpoint manifest: ") + e.what());
  }

  auto params = ck.model->parameters();
  const auto& table = ck.manifest.at("tensors");
  if (table.size() != params.size()) throw LoadError("checkpoint tensor count does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = table[i];
    auto& t = params[i].tensor;
    if (entry.at("name").get<std::string>() != params[i].name || entry.at("rows").get<std::size_t>() != t.rows() ||
        entry.at("cols").get<std::size_t>() != t.cols()) {
      throw LoadError("checkpoint tensor '" + entry.at("name").get<std::string>() + "' does not match the model");
    }
    if (!in.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(float)))) {
      throw LoadError("checkpoint truncated in tensor data");
    }
  }

  const auto& quant = ck.manifest.at("quantizers");
  std::size_t k = 0;
  ck.model->for_each_quant([&](const std::string& name, QuantModule& qm) {
    if (k >= quant.size() || quant[k].at("name").get<std::string>() != name) {
      throw LoadError("checkpoint quantizer table does not match the model at '" + name + "'");
    }
    const auto& q = quant[k++];
    qm.set_config(quant_config_from_json(q.at("config")));
    qm.restore(q.at("x_min").get<float>(), q.at("x_max").get<float>(), q.at("initialized").get<bool>());
  });
  if (k != quant.size()) throw LoadError("checkpoint has extra quantizers");
  return ck;
}

}  // namespace dq
