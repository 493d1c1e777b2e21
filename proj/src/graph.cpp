#include "ccmst/graph.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <queue>
#include <random>
#include <unordered_set>

namespace ccmst {

std::string to_string(const WeightKey& k) {
  if (k.inf) return "inf";
  return "(" + std::to_string(k.w) + "," + std::to_string(k.lo) + "," + std::to_string(k.hi) + ")";
}

namespace {

bool by_endpoints(const Edge& a, const Edge& b) {
  return a.u != b.u ? a.u < b.u : a.v < b.v;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), rank_(n, 0) {
    std::iota(parent_.begin(), parent_.end(), 0u);
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  bool unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
    return true;
  }

 private:
  std::vector<std::uint32_t> parent_;
  std::vector<std::uint8_t> rank_;
};

}  // namespace

void sort_edges(std::vector<Edge>& edges) { std::sort(edges.begin(), edges.end(), by_endpoints); }

bool same_edge_set(std::span<const Edge> a, std::span<const Edge> b) {
  std::vector<Edge> x(a.begin(), a.end()), y(b.begin(), b.end());
  sort_edges(x);
  sort_edges(y);
  return x == y;
}

WeightedGraph::WeightedGraph(std::size_t n, std::vector<Edge> edges) : n_(n), edges_(std::move(edges)) {
  sort_edges(edges_);
  std::vector<std::uint32_t> deg(n_, 0);
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const Edge& e = edges_[i];
    if (e.u >= e.v || e.v >= n_) throw ParameterError("edge endpoints out of order or range");
    if (e.key.inf || e.key.lo != e.u || e.key.hi != e.v) throw ParameterError("edge key does not match endpoints");
    if (i > 0 && edges_[i - 1].u == e.u && edges_[i - 1].v == e.v) throw ParameterError("duplicate edge");
    ++deg[e.u];
    ++deg[e.v];
    max_w_ = std::max(max_w_, e.key.w);
  }
  offsets_.assign(n_ + 1, 0);
  for (std::size_t v = 0; v < n_; ++v) offsets_[v + 1] = offsets_[v] + deg[v];
  adj_.resize(offsets_[n_]);
  std::vector<std::uint32_t> fill(offsets_.begin(), offsets_.end() - 1);
  for (std::uint32_t i = 0; i < edges_.size(); ++i) {
    const Edge& e = edges_[i];
    adj_[fill[e.u]++] = {e.v, i};
    adj_[fill[e.v]++] = {e.u, i};
  }
}

long WeightedGraph::find_edge(NodeId u, NodeId v) const {
  if (u > v) std::swap(u, v);
  if (v >= n_) return -1;
  for (const Incident& inc : incident(u))
    if (inc.nbr == v) return inc.edge;
  return -1;
}

WeightedGraph WeightedGraph::subgraph(std::span<const Edge> keep) const {
  return WeightedGraph(n_, std::vector<Edge>(keep.begin(), keep.end()));
}

Forest::Forest(WeightedGraph g) : g_(std::move(g)) {
  UnionFind uf(g_.n());
  for (const Edge& e : g_.edges())
    if (!uf.unite(e.u, e.v)) throw ParameterError("forest contains a cycle");
}

WeightedGraph pad_weights(std::size_t n, std::span<const RawEdge> raw) {
  std::vector<Edge> edges;
  edges.reserve(raw.size());
  for (const RawEdge& r : raw) {
    if (r.u == r.v) throw ParameterError("self-loop");
    NodeId lo = std::min(r.u, r.v), hi = std::max(r.u, r.v);
    edges.push_back({lo, hi, WeightKey{r.w, lo, hi, false}});
  }
  return WeightedGraph(n, std::move(edges));
}

WeightedGraph generate_graph(const GeneratorParams& params, std::uint64_t seed) {
  const std::size_t n = params.model == GraphModel::Custom && params.n == 0 ? 0 : params.n;
  if (params.model != GraphModel::Custom && n < 2) throw ParameterError("graph needs n >= 2");
  const std::uint64_t pairs = std::uint64_t(n) * (n - 1) / 2;
  const std::uint64_t wmax = params.max_weight ? params.max_weight : std::max<std::uint64_t>(1, std::uint64_t(n) * n);
  std::mt19937_64 rng(splitmix64(seed));
  std::uniform_int_distribution<std::uint64_t> weight(1, wmax);

  std::vector<RawEdge> raw;
  switch (params.model) {
    case GraphModel::Complete:
      for (NodeId u = 0; u < n; ++u)
        for (NodeId v = u + 1; v < n; ++v) raw.push_back({u, v, 0});
      break;
    case GraphModel::Path:
      for (NodeId u = 0; u + 1 < n; ++u) raw.push_back({u, u + 1, 0});
      break;
    case GraphModel::ErdosRenyi: {
      if (params.m > pairs) throw ParameterError("edge target exceeds n(n-1)/2");
      // Pick pair indices without replacement; sample the complement when dense.
      const bool dense = params.m > pairs / 2;
      const std::uint64_t want = dense ? pairs - params.m : params.m;
      std::unordered_set<std::uint64_t> chosen;
      chosen.reserve(want * 2);
      std::uniform_int_distribution<std::uint64_t> pick(0, pairs - 1);
      std::vector<std::uint64_t> order;
      while (chosen.size() < want) {
        std::uint64_t x = pick(rng);
        if (chosen.insert(x).second) order.push_back(x);
      }
      std::vector<std::uint64_t> ids;
      if (dense) {
        for (std::uint64_t x = 0; x < pairs; ++x)
          if (!chosen.count(x)) ids.push_back(x);
      } else {
        ids = std::move(order);
        std::sort(ids.begin(), ids.end());
      }
      // Pair index -> (u, v) in row-major order of the strict upper triangle.
      NodeId u = 0;
      std::uint64_t row_start = 0;
      for (std::uint64_t x : ids) {
        while (x >= row_start + (n - 1 - u)) {
          row_start += n - 1 - u;
          ++u;
        }
        raw.push_back({u, static_cast<NodeId>(u + 1 + (x - row_start)), 0});
      }
      break;
    }
    case GraphModel::Custom:
      return pad_weights(params.n, params.custom);
  }
  for (RawEdge& r : raw) r.w = weight(rng);
  return pad_weights(n, raw);
}

Forest kruskal_mst(const WeightedGraph& g) {
  std::vector<Edge> sorted = g.edges();
  std::sort(sorted.begin(), sorted.end(), [](const Edge& a, const Edge& b) { return a.key < b.key; });
  UnionFind uf(g.n());
  std::vector<Edge> out;
  for (const Edge& e : sorted)
    if (uf.unite(e.u, e.v)) out.push_back(e);
  return Forest(WeightedGraph(g.n(), std::move(out)));
}

Forest prim_mst(const WeightedGraph& g) {
  const std::size_t n = g.n();
  std::vector<bool> in_tree(n, false);
  std::vector<Edge> out;
  using Item = std::pair<WeightKey, std::uint32_t>;
  auto cmp = [](const Item& a, const Item& b) { return b.first < a.first; };
  for (NodeId root = 0; root < n; ++root) {
    if (in_tree[root]) continue;
    std::priority_queue<Item, std::vector<Item>, decltype(cmp)> pq(cmp);
    auto absorb = [&](NodeId v) {
      in_tree[v] = true;
      for (const Incident& inc : g.incident(v))
        if (!in_tree[inc.nbr]) pq.push({g.edges()[inc.edge].key, inc.edge});
    };
    absorb(root);
    while (!pq.empty()) {
      auto [key, idx] = pq.top();
      pq.pop();
      const Edge& e = g.edges()[idx];
      NodeId next = in_tree[e.u] ? e.v : e.u;
      if (in_tree[next]) continue;
      out.push_back(e);
      absorb(next);
    }
  }
  return Forest(WeightedGraph(n, std::move(out)));
}

WeightKey forest_path_max(const Forest& f, NodeId u, NodeId v) {
  const WeightedGraph& g = f.graph();
  if (u >= g.n() || v >= g.n()) throw ParameterError("node out of range");
  std::vector<WeightKey> best(g.n());
  std::vector<bool> seen(g.n(), false);
  std::vector<NodeId> stack{u};
  seen[u] = true;
  best[u] = WeightKey{};
  while (!stack.empty()) {
    NodeId x = stack.back();
    stack.pop_back();
    if (x == v) return best[x];
    for (const Incident& inc : g.incident(x)) {
      if (seen[inc.nbr]) continue;
      seen[inc.nbr] = true;
      const WeightKey& k = g.edges()[inc.edge].key;
      best[inc.nbr] = (x == u || best[x] < k) ? k : best[x];
      stack.push_back(inc.nbr);
    }
  }
  return WeightKey::infinity();
}

PathMaxTable::PathMaxTable(const Forest& f) : n_(f.n()), table_(n_ * n_, WeightKey::infinity()) {
  const WeightedGraph& g = f.graph();
  std::vector<NodeId> stack;
  std::vector<bool> seen(n_);
  for (NodeId s = 0; s < n_; ++s) {
    std::fill(seen.begin(), seen.end(), false);
    WeightKey* row = table_.data() + std::size_t(s) * n_;
    seen[s] = true;
    stack.assign(1, s);
    while (!stack.empty()) {
      NodeId x = stack.back();
      stack.pop_back();
      for (const Incident& inc : g.incident(x)) {
        if (seen[inc.nbr]) continue;
        seen[inc.nbr] = true;
        const WeightKey& k = g.edges()[inc.edge].key;
        row[inc.nbr] = (x == s || row[x] < k) ? k : row[x];
        stack.push_back(inc.nbr);
      }
    }
  }
}

std::vector<Edge> brute_force_f_light(const WeightedGraph& g, const Forest& f) {
  if (f.n() != g.n()) throw ParameterError("forest and graph node counts differ");
  PathMaxTable pm(f);
  std::vector<Edge> out;
  for (const Edge& e : g.edges())
    if (e.key <= pm(e.u, e.v)) out.push_back(e);
  return out;
}

WeightedGraph read_edge_list(std::istream& in) {
  std::size_t n = 0, m = 0;
  if (!(in >> n >> m)) throw ParameterError("edge list: missing header");
  std::vector<RawEdge> raw(m);
  for (std::size_t i = 0; i < m; ++i) {
    long long u, v;
    unsigned long long w;
    if (!(in >> u >> v >> w)) throw ParameterError("edge list: truncated at edge " + std::to_string(i));
    if (u < 0 || v < 0 || std::size_t(u) >= n || std::size_t(v) >= n)
      throw ParameterError("edge list: node out of range");
    raw[i] = {NodeId(u), NodeId(v), w};
  }
  return pad_weights(n, raw);
}

WeightedGraph read_edge_list_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open " + path);
  return read_edge_list(in);
}

void write_edge_list(std::ostream& out, const WeightedGraph& g) {
  out << g.n() << ' ' << g.m() << '\n';
  for (const Edge& e : g.edges()) out << e.u << ' ' << e.v << ' ' << e.key.w << '\n';
}

}  // namespace ccmst
