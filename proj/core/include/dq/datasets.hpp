#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dq/graph.hpp"

namespace dq {

struct CitationLoadReport {
  std::size_t skipped_unknown = 0;   // cites lines naming an id absent from content
  std::size_t skipped_self = 0;      // self-citations
  std::size_t undirected_edges = 0;  // distinct unordered pairs after symmetrization
};

/// Reads the classic citation-network format:
///   content: `<paper_id> <w_1 .. w_F> <class_label>`
///   cites:   `<cited_id> <citing_id>`
/// Features are row-normalized, edges symmetrized and deduplicated, and the
/// Planetoid split (20 per class / next 500 / final 1000, file order) applied.
Graph load_citation(const std::filesystem::path& content_path,
                    const std::filesystem::path& cites_path,
                    CitationLoadReport* report = nullptr);

/// Loads `<root>/<name>/<name>.content` and `.cites`; `root` defaults to the
/// DQ_DATA_DIR environment variable. Throws LoadError when files are absent.
Graph load_citation_dataset(const std::string& name, std::filesystem::path root = {});

/// Resolves DQ_DATA_DIR (empty path when unset).
std::filesystem::path data_root();
bool citation_dataset_available(const std::string& name);

/// Assigns the Planetoid split in place from `graph.y` and node order.
void planetoid_split(Graph& graph, int per_class = 20, int num_val = 500, int num_test = 1000);

void row_normalize(Tensor& x);

enum class SyntheticKind { erdos_renyi, preferential_attachment, star };

SyntheticKind parse_synthetic_kind(const std::string& name);
std::string to_string(SyntheticKind kind);

/// Deterministic generator. `param` is the edge probability for
/// Erdos-Renyi, edges per new node for preferential attachment, and unused
/// for star. Edges are bidirectional. Features are standard normal.
/// graph_label is 0 for Erdos-Renyi and 1 for preferential attachment.
Graph gen_synthetic(SyntheticKind kind, Index n, double param, std::uint64_t seed,
                    Index feature_dim = 16);

/// Graph-classification corpus: Erdos-Renyi graphs labelled 0 and
/// preferential-attachment graphs labelled 1 with matched mean degree.
std::vector<Graph> gen_graph_classification_corpus(Index num_graphs, Index min_nodes,
                                                   Index max_nodes, Index edges_per_node,
                                                   std::uint64_t seed, Index feature_dim = 16);

/// Node-classification stand-in shaped like a citation network: planted
/// classes with homophilous preferential attachment and bag-of-words
/// features. Used where real citation data is not available.
struct CitationLikeOptions {
  Index num_nodes = 2708;
  Index num_classes = 7;
  Index vocabulary = 1433;
  Index edges_per_node = 2;
  Index words_per_node = 18;
  double homophily = 0.8;
  double topical_fraction = 0.45;
};
/// Standard 20-per-class/500/1000 split once the graph is large enough,
/// proportional train/val/test sizes below that.
Graph gen_citation_like(const CitationLikeOptions& options, std::uint64_t seed);

// Native JSON serialization:
// {num_nodes, edges:[[s,t],...], features:[[...]], labels:[...],
//  masks:{train,val,test}} plus optional graph_label / num_classes.
nlohmann::json graph_to_json(const Graph& graph);
Graph graph_from_json(const nlohmann::json& doc);
void save_graph(const Graph& graph, const std::filesystem::path& path);
Graph load_graph(const std::filesystem::path& path);
/// A corpus file is {"graphs": [<graph>, ...]}.
void save_corpus(const std::vector<Graph>& graphs, const std::filesystem::path& path);
std::vector<Graph> load_corpus(const std::filesystem::path& path);

}  // namespace dq
