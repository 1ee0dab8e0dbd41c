#include "dq/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "dq/error.hpp"
#include "dq/rng.hpp"

namespace dq {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(std::move(tok));
  return out;
}

void add_undirected(Graph& g, Index a, Index b) {
  g.src.push_back(a);
  g.dst.push_back(b);
  g.src.push_back(b);
  g.dst.push_back(a);
}

Tensor normal_features(Index n, Index f, Rng& rng) {
  Tensor x(static_cast<std::size_t>(n), static_cast<std::size_t>(f));
  for (auto& v : x.data()) v = rng.normal();
  return x;
}

}  // namespace

void row_normalize(Tensor& x) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    float* row = x.row(r);
    float s = 0.0f;
    for (std::size_t c = 0; c < x.cols(); ++c) s += row[c];
    if (s == 0.0f) continue;
    for (std::size_t c = 0; c < x.cols(); ++c) row[c] /= s;
  }
}

void planetoid_split(Graph& graph, int per_class, int num_val, int num_test) {
  const auto n = static_cast<std::size_t>(graph.num_nodes);
  graph.train_mask.assign(n, 0);
  graph.val_mask.assign(n, 0);
  graph.test_mask.assign(n, 0);
  std::vector<int> taken(static_cast<std::size_t>(graph.num_classes), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const Index c = graph.y[i];
    if (taken[c] < per_class) {
      ++taken[c];
      graph.train_mask[i] = 1;
    }
  }
  int val = 0;
  for (std::size_t i = 0; i < n && val < num_val; ++i) {
    if (graph.train_mask[i]) continue;
    graph.val_mask[i] = 1;
    ++val;
  }
  int test = 0;
  for (std::size_t i = n; i-- > 0 && test < num_test;) {
    if (graph.train_mask[i] || graph.val_mask[i]) continue;
    graph.test_mask[i] = 1;
    ++test;
  }
}

Graph load_citation(const std::filesystem::path& content_path,
                    const std::filesystem::path& cites_path, CitationLoadReport* report) {
  std::ifstream content(content_path);
  if (!content) throw LoadError("cannot open " + content_path.string());
  std::ifstream cites(cites_path);
  if (!cites) throw LoadError("cannot open " + cites_path.string());

  std::unordered_map<std::string, Index> id_of;
  std::vector<std::string> label_names;
  std::vector<float> features;
  std::size_t feature_dim = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(content, line)) {
    ++lineno;
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() < 3) throw ParseError("content: expected id, features and label", lineno);
    const std::size_t f = tok.size() - 2;
    if (feature_dim == 0) feature_dim = f;
    if (f != feature_dim) {
      throw ParseError("content: expected " + std::to_string(feature_dim) + " features, got " +
                           std::to_string(f),
                       lineno);
    }
    if (!id_of.emplace(tok.front(), static_cast<Index>(id_of.size())).second) {
      throw ParseError("content: duplicate paper id '" + tok.front() + "'", lineno);
    }
    for (std::size_t k = 1; k <= f; ++k) {
      char* end = nullptr;
      const float v = std::strtof(tok[k].c_str(), &end);
      if (end == tok[k].c_str() || *end != '\0') {
        throw ParseError("content: bad feature value '" + tok[k] + "'", lineno);
      }
      features.push_back(v);
    }
    label_names.push_back(tok.back());
  }

  Graph g;
  g.num_nodes = static_cast<Index>(id_of.size());
  g.x = Tensor::from(id_of.size(), feature_dim, std::move(features));
  row_normalize(g.x);

  // Class indices follow the sorted label names.
  std::set<std::string> distinct(label_names.begin(), label_names.end());
  std::map<std::string, Index> class_of;
  for (const auto& name : distinct) class_of.emplace(name, static_cast<Index>(class_of.size()));
  g.num_classes = static_cast<Index>(class_of.size());
  g.y.reserve(label_names.size());
  for (const auto& name : label_names) g.y.push_back(class_of.at(name));

  CitationLoadReport rep;
  std::set<std::pair<Index, Index>> undirected;
  lineno = 0;
  while (std::getline(cites, line)) {
    ++lineno;
    auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 2) throw ParseError("cites: expected two ids", lineno);
    auto a = id_of.find(tok[0]);
    auto b = id_of.find(tok[1]);
    if (a == id_of.end() || b == id_of.end()) {
      ++rep.skipped_unknown;
      continue;
    }
    if (a->second == b->second) {
      ++rep.skipped_self;
      continue;
    }
    const auto key = std::minmax(a->second, b->second);
    if (undirected.emplace(key.first, key.second).second) {
      // citing -> cited and the reverse direction
      add_undirected(g, b->second, a->second);
    }
  }
  rep.undirected_edges = undirected.size();
  g.refresh_degree();
  planetoid_split(g);
  if (report) *report = rep;
  return g;
}

std::filesystem::path data_root() {
  const char* env = std::getenv("DQ_DATA_DIR");
  return env ? std::filesystem::path(env) : std::filesystem::path();
}

bool citation_dataset_available(const std::string& name) {
  const auto root = data_root();
  if (root.empty()) return false;
  return std::filesystem::exists(root / name / (name + ".content")) &&
         std::filesystem::exists(root / name / (name + ".cites"));
}

Graph load_citation_dataset(const std::string& name, std::filesystem::path root) {
  if (root.empty()) root = data_root();
  if (root.empty()) throw LoadError("DQ_DATA_DIR is not set; cannot locate dataset '" + name + "'");
  const auto dir = root / name;
  const auto content = dir / (name + ".content");
  const auto cites = dir / (name + ".cites");
  if (!std::filesystem::exists(content) || !std::filesystem::exists(cites)) {
    throw LoadError("dataset '" + name + "' not found under " + dir.string());
  }
  return load_citation(content, cites);
}

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "erdos_renyi" || name == "er") return SyntheticKind::erdos_renyi;
  if (name == "preferential_attachment" || name == "pa") return SyntheticKind::preferential_attachment;
  if (name == "star") return SyntheticKind::star;
  throw ConfigError("unknown synthetic graph kind '" + name + "'");
}

std::string to_string(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::erdos_renyi: return "erdos_renyi";
    case SyntheticKind::preferential_attachment: return "preferential_attachment";
    case SyntheticKind::star: return "star";
  }
  return "?";
}

Graph gen_synthetic(SyntheticKind kind, Index n, double param, std::uint64_t seed, Index feature_dim) {
  if (n < 2) throw ConfigError("gen_synthetic: n must be >= 2");
  if (feature_dim < 1) throw ConfigError("gen_synthetic: feature_dim must be >= 1");
  Rng rng(seed);
  Graph g;
  g.num_nodes = n;
  switch (kind) {
    case SyntheticKind::erdos_renyi: {
      if (!(param >= 0.0 && param <= 1.0)) throw ConfigError("erdos_renyi: p must lie in [0, 1]");
      if (param > 0.0) {
        // Geometric skipping over the upper triangle (Batagelj & Brandes).
        const double log_q = std::log1p(-std::min(param, 1.0 - 1e-12));
        std::int64_t v = 1, w = -1;
        while (v < n) {
          const double r = std::max(static_cast<double>(rng.uniform()), 1e-12);
          w += 1 + (param >= 1.0 ? 0 : static_cast<std::int64_t>(std::floor(std::log(r) / log_q)));
          while (w >= v && v < n) {
            w -= v;
            ++v;
          }
          if (v < n) add_undirected(g, static_cast<Index>(w), static_cast<Index>(v));
        }
      }
      g.graph_label = 0;
      break;
    }
    case SyntheticKind::preferential_attachment: {
      const auto m = static_cast<Index>(param);
      if (m < 1 || static_cast<double>(m) != param) {
        throw ConfigError("preferential_attachment: edges per node must be a positive integer");
      }
      if (m >= n) throw ConfigError("preferential_attachment: need n > edges per node");
      // Seed with a star on m+1 nodes, then attach each new node to m
      // distinct existing nodes chosen proportionally to degree.
      std::vector<Index> repeated;
      for (Index leaf = 1; leaf <= m; ++leaf) {
        add_undirected(g, 0, leaf);
        repeated.push_back(0);
        repeated.push_back(leaf);
      }
      std::vector<Index> targets;
      for (Index v = m + 1; v < n; ++v) {
        targets.clear();
        while (static_cast<Index>(targets.size()) < m) {
          const Index t = repeated[rng.below(repeated.size())];
          if (std::find(targets.begin(), targets.end(), t) == targets.end()) targets.push_back(t);
        }
        for (Index t : targets) {
          add_undirected(g, v, t);
          repeated.push_back(v);
          repeated.push_back(t);
        }
      }
      g.graph_label = 1;
      break;
    }
    case SyntheticKind::star: {
      for (Index leaf = 1; leaf < n; ++leaf) add_undirected(g, 0, leaf);
      break;
    }
  }
  g.num_classes = 2;
  g.x = normal_features(n, feature_dim, rng);
  g.refresh_degree();
  return g;
}

std::vector<Graph> gen_graph_classification_corpus(Index num_graphs, Index min_nodes, Index max_nodes,
                                                   Index edges_per_node, std::uint64_t seed,
                                                   Index feature_dim) {
  if (min_nodes < 2 || max_nodes < min_nodes) throw ConfigError("corpus: bad node range");
  if (edges_per_node < 1 || edges_per_node >= min_nodes) throw ConfigError("corpus: bad edges per node");
  Rng rng(seed);
  std::vector<Graph> out;
  out.reserve(static_cast<std::size_t>(num_graphs));
  for (Index i = 0; i < num_graphs; ++i) {
    const auto n = static_cast<Index>(min_nodes + static_cast<Index>(rng.below(
                                                      static_cast<std::uint64_t>(max_nodes - min_nodes + 1))));
    const std::uint64_t graph_seed = rng.next_u64();
    if (i % 2 == 0) {
      // Same expected mean degree as the attachment graphs: 2m(n-1-m/2)/n ~ 2m.
      const double p = std::min(1.0, 2.0 * edges_per_node / static_cast<double>(n - 1));
      out.push_back(gen_synthetic(SyntheticKind::erdos_renyi, n, p, graph_seed, feature_dim));
    } else {
      out.push_back(gen_synthetic(SyntheticKind::preferential_attachment, n, edges_per_node,
                                  graph_seed, feature_dim));
    }
  }
  return out;
}

Graph gen_citation_like(const CitationLikeOptions& o, std::uint64_t seed) {
  if (o.num_nodes <= o.edges_per_node || o.num_classes < 2 || o.vocabulary < o.num_classes) {
    throw ConfigError("gen_citation_like: inconsistent options");
  }
  Rng rng(seed);
  Graph g;
  g.num_nodes = o.num_nodes;
  g.num_classes = o.num_classes;
  g.y.resize(static_cast<std::size_t>(o.num_nodes));
  for (auto& c : g.y) c = static_cast<Index>(rng.below(static_cast<std::uint64_t>(o.num_classes)));

  std::vector<std::vector<Index>> by_class(static_cast<std::size_t>(o.num_classes));
  std::vector<Index> repeated;
  std::set<std::pair<Index, Index>> seen;
  auto link = [&](Index a, Index b) {
    const auto key = std::minmax(a, b);
    if (a == b || !seen.emplace(key.first, key.second).second) return;
    add_undirected(g, a, b);
    repeated.push_back(a);
    repeated.push_back(b);
    by_class[g.y[a]].push_back(a);
    by_class[g.y[b]].push_back(b);
  };
  for (Index v = 1; v <= o.edges_per_node; ++v) link(0, v);
  for (Index v = o.edges_per_node + 1; v < o.num_nodes; ++v) {
    const auto& same = by_class[g.y[v]];
    for (Index k = 0; k < o.edges_per_node; ++k) {
      const bool homophilous = rng.uniform() < o.homophily && !same.empty();
      const Index t = homophilous ? same[rng.below(same.size())] : repeated[rng.below(repeated.size())];
      link(v, t);
    }
  }

  const Index block = o.vocabulary / o.num_classes;
  g.x = Tensor(static_cast<std::size_t>(o.num_nodes), static_cast<std::size_t>(o.vocabulary));
  for (Index i = 0; i < o.num_nodes; ++i) {
    for (Index w = 0; w < o.words_per_node; ++w) {
      Index word;
      if (rng.uniform() < o.topical_fraction) {
        word = g.y[i] * block + static_cast<Index>(rng.below(static_cast<std::uint64_t>(block)));
      } else {
        word = static_cast<Index>(rng.below(static_cast<std::uint64_t>(o.vocabulary)));
      }
      g.x(static_cast<std::size_t>(i), static_cast<std::size_t>(word)) = 1.0f;
    }
  }
  row_normalize(g.x);
  g.refresh_degree();
  if (o.num_nodes >= 20 * o.num_classes + 1500) {
    planetoid_split(g);
  } else {
    const Index per_class = std::clamp<Index>(o.num_nodes / (10 * o.num_classes), 1, 20);
    planetoid_split(g, static_cast<int>(per_class), static_cast<int>(o.num_nodes / 5),
                    static_cast<int>(o.num_nodes / 3));
  }
  return g;
}

nlohmann::json graph_to_json(const Graph& g) {
  nlohmann::json doc;
  doc["num_nodes"] = g.num_nodes;
  auto edges = nlohmann::json::array();
  for (std::size_t e = 0; e < g.src.size(); ++e) edges.push_back({g.src[e], g.dst[e]});
  doc["edges"] = std::move(edges);
  auto feats = nlohmann::json::array();
  for (std::size_t r = 0; r < g.x.rows(); ++r)
    feats.push_back(std::vector<float>(g.x.row(r), g.x.row(r) + g.x.cols()));
  doc["features"] = std::move(feats);
  doc["labels"] = g.y;
  if (!g.train_mask.empty()) {
    auto to_bool = [](const std::vector<std::uint8_t>& m) {
      std::vector<bool> b(m.begin(), m.end());
      return b;
    };
    doc["masks"] = {{"train", to_bool(g.train_mask)},
                    {"val", to_bool(g.val_mask)},
                    {"test", to_bool(g.test_mask)}};
  }
  if (g.graph_label >= 0) doc["graph_label"] = g.graph_label;
  doc["num_classes"] = g.num_classes;
  return doc;
}

Graph graph_from_json(const nlohmann::json& doc) {
  try {
    Graph g;
    g.num_nodes = doc.at("num_nodes").get<Index>();
    for (const auto& e : doc.at("edges")) {
      if (e.size() != 2) throw ParseError("graph json: edge must be [s, t]");
      g.src.push_back(e[0].get<Index>());
      g.dst.push_back(e[1].get<Index>());
    }
    const auto& feats = doc.at("features");
    const std::size_t f = feats.empty() ? 0 : feats[0].size();
    std::vector<float> values;
    values.reserve(feats.size() * f);
    for (const auto& row : feats) {
      if (row.size() != f) throw ParseError("graph json: ragged feature rows");
      for (const auto& v : row) values.push_back(v.get<float>());
    }
    g.x = Tensor::from(feats.size(), f, std::move(values));
    if (doc.contains("labels")) g.y = doc["labels"].get<std::vector<Index>>();
    if (doc.contains("masks")) {
      auto from_bool = [](const nlohmann::json& m) {
        std::vector<std::uint8_t> out;
        for (const auto& v : m) out.push_back(v.get<bool>() ? 1 : 0);
        return out;
      };
      const auto& m = doc["masks"];
      g.train_mask = from_bool(m.at("train"));
      g.val_mask = from_bool(m.at("val"));
      g.test_mask = from_bool(m.at("test"));
    }
    g.graph_label = doc.value("graph_label", -1);
    Index max_label = g.graph_label;
    for (Index c : g.y) max_label = std::max(max_label, c);
    g.num_classes = doc.value("num_classes", max_label + 1);
    g.refresh_degree();
    g.validate();
    return g;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("graph json: ") + ex.what());
  }
}

void save_graph(const Graph& graph, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << graph_to_json(graph).dump();
}

Graph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("graph json: ") + ex.what());
  }
  return graph_from_json(doc);
}

void save_corpus(const std::vector<Graph>& graphs, const std::filesystem::path& path) {
  nlohmann::json doc;
  doc["graphs"] = nlohmann::json::array();
  for (const auto& g : graphs) doc["graphs"].push_back(graph_to_json(g));
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << doc.dump();
}

std::vector<Graph> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("corpus json: ") + ex.what());
  }
  std::vector<Graph> out;
  for (const auto& g : doc.at("graphs")) out.push_back(graph_from_json(g));
  return out;
}

}  // namespace dq
