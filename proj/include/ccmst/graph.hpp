#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ccmst/common.hpp"

namespace ccmst {

// Composite edge weight. Ties on w are broken by the endpoint ids, so keys of
// distinct edges never compare equal. The infinite key sorts above all others.
struct WeightKey {
  std::uint64_t w = 0;
  NodeId lo = 0;
  NodeId hi = 0;
  bool inf = false;

  static WeightKey infinity() {
    WeightKey k;
    k.inf = true;
    return k;
  }
  bool is_infinite() const { return inf; }

  friend std::strong_ordering operator<=>(const WeightKey& a, const WeightKey& b) {
    if (a.inf || b.inf) return static_cast<int>(a.inf) <=> static_cast<int>(b.inf);
    if (auto c = a.w <=> b.w; c != 0) return c;
    if (auto c = a.lo <=> b.lo; c != 0) return c;
    return a.hi <=> b.hi;
  }
  friend bool operator==(const WeightKey& a, const WeightKey& b) { return (a <=> b) == 0; }
};

std::string to_string(const WeightKey& k);

struct Edge {
  NodeId u = 0;  // u < v
  NodeId v = 0;
  WeightKey key;

  friend bool operator==(const Edge& a, const Edge& b) {
    return a.u == b.u && a.v == b.v && a.key == b.key;
  }
};

struct RawEdge {
  NodeId u = 0;
  NodeId v = 0;
  std::uint64_t w = 0;
};

struct Incident {
  NodeId nbr;
  std::uint32_t edge;  // index into edges()
};

// Simple undirected graph on [0, n). Edges are stored sorted by (u, v).
class WeightedGraph {
 public:
  WeightedGraph() = default;
  WeightedGraph(std::size_t n, std::vector<Edge> edges);

  std::size_t n() const { return n_; }
  std::size_t m() const { return edges_.size(); }
  const std::vector<Edge>& edges() const { return edges_; }
  std::span<const Incident> incident(NodeId v) const {
    return {adj_.data() + offsets_[v], adj_.data() + offsets_[v + 1]};
  }
  std::size_t degree(NodeId v) const { return offsets_[v + 1] - offsets_[v]; }
  std::uint64_t max_weight() const { return max_w_; }

  // Index of edge {u, v}, or -1.
  long find_edge(NodeId u, NodeId v) const;

  // Subgraph on the same node set holding the listed edges.
  WeightedGraph subgraph(std::span<const Edge> keep) const;

 private:
  std::size_t n_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::uint32_t> offsets_{0};
  std::vector<Incident> adj_;
  std::uint64_t max_w_ = 0;
};

// An acyclic WeightedGraph.
class Forest {
 public:
  Forest() = default;
  explicit Forest(WeightedGraph g);

  const WeightedGraph& graph() const { return g_; }
  std::size_t n() const { return g_.n(); }
  const std::vector<Edge>& edges() const { return g_.edges(); }

 private:
  WeightedGraph g_;
};

// Builds keys (w, min(u,v), max(u,v)). Rejects self-loops and duplicate pairs.
WeightedGraph pad_weights(std::size_t n, std::span<const RawEdge> raw);

enum class GraphModel { ErdosRenyi, Complete, Path, Custom };

struct GeneratorParams {
  GraphModel model = GraphModel::ErdosRenyi;
  std::size_t n = 0;
  std::size_t m = 0;             // erdos-renyi target
  std::uint64_t max_weight = 0;  // 0 means n*n
  std::vector<RawEdge> custom;   // for GraphModel::Custom
};

WeightedGraph generate_graph(const GeneratorParams& params, std::uint64_t seed);

Forest kruskal_mst(const WeightedGraph& g);
Forest prim_mst(const WeightedGraph& g);

WeightKey forest_path_max(const Forest& f, NodeId u, NodeId v);

// Precomputed all-pairs path maxima; O(n^2) memory.
class PathMaxTable {
 public:
  explicit PathMaxTable(const Forest& f);
  const WeightKey& operator()(NodeId u, NodeId v) const { return table_[std::size_t(u) * n_ + v]; }

 private:
  std::size_t n_;
  std::vector<WeightKey> table_;
};

// Edges with key <= path max over their endpoints in f, sorted by (u, v).
std::vector<Edge> brute_force_f_light(const WeightedGraph& g, const Forest& f);

bool same_edge_set(std::span<const Edge> a, std::span<const Edge> b);
void sort_edges(std::vector<Edge>& edges);

WeightedGraph read_edge_list(std::istream& in);
WeightedGraph read_edge_list_file(const std::string& path);
void write_edge_list(std::ostream& out, const WeightedGraph& g);

}  // namespace ccmst
