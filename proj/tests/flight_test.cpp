#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>
#include <json.hpp>

#include "ccmst/driver.hpp"
#include "ccmst/flight.hpp"

using namespace ccmst;

namespace {

Network net_of(std::size_t n, std::uint64_t seed = 1, bool links = false) {
  SimConfig c;
  c.n = n;
  c.seed = seed;
  c.record_links = links;
  return Network(c);
}

SharedSeed seed_for(std::size_t n, std::uint64_t s) {
  std::mt19937_64 rng(s);
  return SharedSeed::random(std::max(seed_bits(n), SketchParams::defaults(n).required_seed_bits()), rng);
}

WeightedGraph er(std::size_t n, std::size_t m, std::uint64_t seed) {
  GeneratorParams p;
  p.n = n;
  p.m = m;
  return generate_graph(p, seed);
}

std::set<std::pair<NodeId, NodeId>> ends(std::span<const Edge> es) {
  std::set<std::pair<NodeId, NodeId>> s;
  for (const Edge& e : es) s.insert({e.u, e.v});
  return s;
}

// Five two-node components A={0,1} B={2,3} C={4,5} D={6,7} Z={8,9}. A, B and
// C merge through their lightest outgoing F-edges, as do D and Z.
struct FigureFixture {
  WeightedGraph g;
  Forest f;

  FigureFixture() {
    const std::vector<RawEdge> forest = {{0, 1, 1}, {2, 3, 2}, {4, 5, 3}, {6, 7, 4}, {8, 9, 5},
                                         {1, 2, 10}, {3, 4, 11}, {7, 8, 12}};
    std::vector<RawEdge> raw = forest;
    raw.push_back({0, 3, 7});   // A-B, below both MWOEs
    raw.push_back({0, 5, 20});  // A-C, above both
    raw.push_back({2, 5, 9});   // B-C, below both
    raw.push_back({4, 9, 11});  // C-Z, ties C's MWOE weight but loses on endpoints
    raw.push_back({1, 6, 15});  // A-D, above both
    g = pad_weights(10, raw);
    std::vector<Edge> fe;
    for (const RawEdge& r : forest) fe.push_back(g.edges()[g.find_edge(r.u, r.v)]);
    f = Forest(WeightedGraph(10, fe));
  }
};

}  // namespace

TEST(Commanders, LowestIds) {
  EXPECT_EQ(select_commanders(2), std::vector<NodeId>{0});
  EXPECT_EQ(select_commanders(256), (std::vector<NodeId>{0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_EQ(select_commanders(257).size(), 9u);
  EXPECT_THROW(select_commanders(1), ParameterError);
}

TEST(PhasePlan, SingleEdge) {
  const WeightedGraph g = pad_weights(2, std::vector<RawEdge>{{0, 1, 3}});
  const PhasePlan plan = simulate_boruvka_locally(2, g.edges());
  ASSERT_EQ(plan.phases(), 1u);
  ASSERT_EQ(plan.components[0].size(), 2u);
  for (const PhaseComponent& c : plan.components[0]) {
    EXPECT_TRUE(c.active);
    ASSERT_TRUE(c.edge);
    EXPECT_EQ(c.edge->key, g.edges()[0].key);
  }
  EXPECT_EQ(plan.final_label_of, (std::vector<NodeId>{0, 0}));
}

// Path 0-1-2-3 with keys 1 < 2 < 3. Phase 0: nodes 0 and 1 pick {0,1}, node 2
// picks {1,2}, node 3 picks {2,3}, so everything merges at once.
TEST(PhasePlan, PathHandTrace) {
  const WeightedGraph g = pad_weights(4, std::vector<RawEdge>{{0, 1, 1}, {1, 2, 2}, {2, 3, 3}});
  const PhasePlan plan = simulate_boruvka_locally(4, g.edges());
  ASSERT_EQ(plan.phases(), 1u);
  const auto& c = plan.components[0];
  ASSERT_EQ(c.size(), 4u);
  const std::vector<std::pair<NodeId, NodeId>> picks = {{0, 1}, {0, 1}, {1, 2}, {2, 3}};
  for (std::size_t v = 0; v < 4; ++v) {
    EXPECT_EQ(c[v].label, v);
    ASSERT_TRUE(c[v].edge);
    EXPECT_EQ(std::pair(c[v].edge->u, c[v].edge->v), picks[v]);
  }
  EXPECT_EQ(plan.final_label_of, (std::vector<NodeId>{0, 0, 0, 0}));
}

TEST(PhasePlan, EmptyForestIsOnePhaseOfSingletons) {
  const PhasePlan plan = simulate_boruvka_locally(5, {});
  ASSERT_EQ(plan.phases(), 1u);
  for (const PhaseComponent& c : plan.components[0]) {
    EXPECT_TRUE(c.active);
    EXPECT_FALSE(c.edge);
    EXPECT_TRUE(c.mwoe.inf);
  }
}

TEST(PhasePlan, FigureFixtureComponents) {
  FigureFixture fx;
  const PhasePlan plan = simulate_boruvka_locally(10, fx.f.edges());
  ASSERT_EQ(plan.phases(), 3u);
  ASSERT_EQ(plan.components[1].size(), 5u);
  const std::vector<std::uint64_t> mwoe = {10, 10, 11, 12, 12};
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_EQ(plan.components[1][j].label, 2 * j);
    EXPECT_EQ(plan.components[1][j].mwoe.w, mwoe[j]);
  }
  ASSERT_EQ(plan.components[2].size(), 2u);
  for (const PhaseComponent& c : plan.components[2]) {
    EXPECT_TRUE(c.active);
    EXPECT_TRUE(c.mwoe.inf);
  }
  EXPECT_EQ(plan.components[2][0].members, (std::vector<NodeId>{0, 1, 2, 3, 4, 5}));
}

TEST(Lij, FigureFixtureClassification) {
  FigureFixture fx;
  const PhasePlan plan = simulate_boruvka_locally(10, fx.f.edges());
  const auto lij = brute_force_lij(fx.g, plan);
  using P = std::set<std::pair<NodeId, NodeId>>;
  // Phase 1, components A B C D Z.
  EXPECT_EQ(ends(lij[1][0]), (P{{0, 3}, {1, 2}}));
  EXPECT_EQ(ends(lij[1][1]), (P{{0, 3}, {1, 2}, {2, 5}}));
  EXPECT_EQ(ends(lij[1][2]), (P{{2, 5}, {3, 4}}));
  EXPECT_EQ(ends(lij[1][3]), (P{{7, 8}}));
  EXPECT_EQ(ends(lij[1][4]), (P{{4, 9}, {7, 8}}));
  // Phase 2: two whole trees of F, so every crossing edge counts.
  EXPECT_EQ(ends(lij[2][0]), (P{{1, 6}, {4, 9}}));
  EXPECT_EQ(ends(lij[2][1]), (P{{1, 6}, {4, 9}}));

  std::vector<Edge> un(fx.f.edges().begin(), fx.f.edges().end());
  for (auto& ph : lij)
    for (auto& l : ph) un.insert(un.end(), l.begin(), l.end());
  EXPECT_EQ(ends(un), ends(brute_force_f_light(fx.g, fx.f)));
  EXPECT_FALSE(ends(un).count({0, 5}));
}

TEST(PhasePlan, InvariantsOnRandomForests) {
  std::mt19937_64 rng(5);
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    const std::size_t n = 20 + rng() % 80;
    const WeightedGraph g = er(n, n + rng() % (3 * n), seed);
    const SharedSeed pi = seed_for(n, seed);
    const Forest f = kruskal_mst(sample_subgraph(g, pi, 0.3, 0));
    const PhasePlan plan = simulate_boruvka_locally(n, f.edges());
    EXPECT_EQ(plan, simulate_boruvka_locally(n, f.edges()));
    EXPECT_LE(plan.phases(), std::size_t(ceil_log2(n)) + 1);

    for (std::size_t i = 0; i < plan.phases(); ++i) {
      std::vector<int> seen(n, 0);
      for (const PhaseComponent& c : plan.components[i]) {
        ASSERT_FALSE(c.members.empty());
        EXPECT_EQ(c.label, c.members.front());
        for (NodeId v : c.members) {
          ++seen[v];
          EXPECT_EQ(plan.label_of[i][v], c.label);
        }
        EXPECT_EQ(c.edge.has_value(), !c.mwoe.inf);
        if (c.edge) {
          const bool leaves = (plan.label_of[i][c.edge->u] == c.label) != (plan.label_of[i][c.edge->v] == c.label);
          EXPECT_TRUE(leaves);
          // No lighter F-edge leaves the component.
          for (const Edge& e : f.edges()) {
            if ((plan.label_of[i][e.u] == c.label) != (plan.label_of[i][e.v] == c.label)) {
              EXPECT_FALSE(e.key < c.mwoe);
            }
          }
        }
      }
      for (int s : seen) EXPECT_EQ(s, 1);
      // Components only merge.
      const auto& next = i + 1 < plan.phases() ? plan.label_of[i + 1] : plan.final_label_of;
      for (NodeId v = 0; v < n; ++v) EXPECT_EQ(next[v], next[plan.label_of[i][v]]);
    }

    // Final labels are the components of F.
    std::vector<NodeId> dsu(n);
    std::iota(dsu.begin(), dsu.end(), 0u);
    std::function<NodeId(NodeId)> find = [&](NodeId x) { return dsu[x] == x ? x : dsu[x] = find(dsu[x]); };
    for (const Edge& e : f.edges()) dsu[find(e.u)] = find(e.v);
    for (NodeId u = 0; u < n; ++u)
      for (NodeId v = 0; v < n; ++v) ASSERT_EQ(find(u) == find(v), plan.final_label_of[u] == plan.final_label_of[v]);
  }
}

// F-light edges are exactly the forest plus the union of the L sets.
TEST(Lij, UnionMatchesFLightOracle) {
  std::mt19937_64 rng(6);
  for (std::uint64_t seed = 1; seed <= 80; ++seed) {
    const std::size_t n = 10 + rng() % 60;
    const WeightedGraph g = er(n, n + rng() % (4 * n), seed);
    const double p = 0.1 + 0.8 * double(rng() % 100) / 100.0;
    const Forest f = kruskal_mst(sample_subgraph(g, seed_for(n, seed), p, 0));
    const PhasePlan plan = simulate_boruvka_locally(n, f.edges());
    const auto lij = brute_force_lij(g, plan);
    std::vector<Edge> un(f.edges().begin(), f.edges().end());
    for (std::size_t i = 0; i < lij.size(); ++i)
      for (std::size_t j = 0; j < lij[i].size(); ++j) {
        const PhaseComponent& c = plan.components[i][j];
        if (!c.active) {
          EXPECT_TRUE(lij[i][j].empty());
        }
        for (const Edge& e : lij[i][j]) {
          EXPECT_NE(plan.label_of[i][e.u] == c.label, plan.label_of[i][e.v] == c.label);
          EXPECT_FALSE(c.mwoe < e.key);
        }
        un.insert(un.end(), lij[i][j].begin(), lij[i][j].end());
      }
    ASSERT_EQ(ends(un), ends(brute_force_f_light(g, f))) << "seed " << seed;
  }
}

TEST(GatherForest, SpanningTreeReachesEveryCommander) {
  const std::size_t n = 128;
  std::mt19937_64 rng(3);
  std::vector<RawEdge> raw;
  for (NodeId v = 1; v < n; ++v) raw.push_back({NodeId(rng() % v), v, 1 + rng() % 5000});
  const WeightedGraph g = pad_weights(n, raw);
  const Forest f = kruskal_mst(g);
  Network net = net_of(n);
  const auto cmd = select_commanders(n);
  const ForestGather fg = gather_forest(net, f, cmd, 0, bits_for(g.max_weight()));
  ASSERT_EQ(fg.at_commander.size(), cmd.size());
  for (const auto& es : fg.at_commander) EXPECT_TRUE(same_edge_set(es, f.edges()));
  EXPECT_LE(fg.messages, 2 * n * cmd.size());
}

TEST(GatherForest, EmptyForest) {
  const std::size_t n = 32;
  Network net = net_of(n);
  const auto cmd = select_commanders(n);
  const ForestGather fg = gather_forest(net, Forest(WeightedGraph(n, {})), cmd, 0, 8);
  for (const auto& es : fg.at_commander) EXPECT_TRUE(es.empty());
  EXPECT_LE(fg.messages, 2 * n * cmd.size());
}

TEST(FlightBeta, Defaults) {
  FlightConfig c;
  EXPECT_EQ(flight_beta(256, 0.5, c), 64u);
  EXPECT_EQ(flight_beta(256, 1.0, c), 32u);
  EXPECT_EQ(flight_beta(100, 0.3, c), 4u * 7 * 4);
  c.kappa = 0.01;
  EXPECT_EQ(flight_beta(256, 1.0, c), 1u);
  c.theory_beta = true;
  EXPECT_EQ(flight_beta(16, 0.5, c), 2048u);
  EXPECT_THROW(flight_beta(16, 0.0, c), ParameterError);
  EXPECT_THROW(flight_beta(16, 1.5, c), ParameterError);
}

TEST(SketchTags, DistinctAcrossPhasesLabelsAndCopies) {
  std::set<std::uint64_t> tags;
  for (std::uint64_t depth = 0; depth < 3; ++depth)
    for (std::uint64_t phase = 0; phase < 8; ++phase)
      for (std::uint64_t label = 0; label < 16; ++label)
        for (std::uint64_t t = 0; t < 64; ++t) tags.insert(make_tag(TagPurpose::Sketch, depth, phase, label, t));
  EXPECT_EQ(tags.size(), 3u * 8 * 16 * 64);
}

TEST(ComputeFLight, TreeGraphGivesTheTree) {
  const std::size_t n = 40;
  std::mt19937_64 rng(4);
  std::vector<RawEdge> raw;
  for (NodeId v = 1; v < n; ++v) raw.push_back({NodeId(rng() % v), v, 1 + rng() % 100});
  const WeightedGraph g = pad_weights(n, raw);
  const Forest f = kruskal_mst(g);
  Network net = net_of(n);
  const FlightResult r = compute_f_light(net, g, f, 1.0, seed_for(n, 1), FlightConfig{});
  EXPECT_TRUE(same_edge_set(r.light, g.edges()));
  // The forest gather runs under step flight.1, so the step total covers it.
  EXPECT_EQ(r.messages, step_metrics(net.transcript(), "flight").messages);
  EXPECT_EQ(r.messages, net.transcript().messages_total);
}

TEST(ComputeFLight, TriangleExcludesHeaviestEdge) {
  const WeightedGraph g = pad_weights(3, std::vector<RawEdge>{{0, 1, 1}, {1, 2, 2}, {0, 2, 3}});
  std::vector<Edge> fe = {g.edges()[g.find_edge(0, 1)], g.edges()[g.find_edge(1, 2)]};
  const Forest f(WeightedGraph(3, fe));
  Network net = net_of(3);
  const FlightResult r = compute_f_light(net, g, f, 0.5, seed_for(3, 2), FlightConfig{});
  EXPECT_TRUE(same_edge_set(r.light, fe));
  EXPECT_TRUE(same_edge_set(r.light, brute_force_f_light(g, f)));
}

TEST(ComputeFLight, FigureFixtureFindsEveryLightEdge) {
  FigureFixture fx;
  for (GatherMode mode : {GatherMode::Linear, GatherMode::Exact}) {
    Network net = net_of(10);
    FlightConfig cfg;
    cfg.mode = mode;
    const FlightResult r = compute_f_light(net, fx.g, fx.f, 0.5, seed_for(10, 3), cfg);
    EXPECT_TRUE(same_edge_set(r.light, brute_force_f_light(fx.g, fx.f)));
    EXPECT_EQ(r.plan, simulate_boruvka_locally(10, fx.f.edges()));
  }
}

// Sound always; complete unless a sketch failure was logged.
TEST(ComputeFLight, RandomGraphsAgainstOracle) {
  const std::size_t n = 128, m = 2048;
  const double p = std::sqrt(double(n) / double(m));
  std::uint64_t exact = 0, runs = 0;
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const WeightedGraph g = er(n, m, seed);
    const SharedSeed pi = seed_for(n, seed);
    const Forest f = kruskal_mst(sample_subgraph(g, pi, p, 0));
    Network net = net_of(n, seed);
    const FlightResult r = compute_f_light(net, g, f, p, pi, FlightConfig{});
    const auto truth = brute_force_f_light(g, f);
    const auto t = ends(truth);
    for (const Edge& e : r.light) ASSERT_TRUE(t.count({e.u, e.v})) << "false positive, seed " << seed;
    ++runs;
    if (same_edge_set(r.light, truth)) ++exact;
    else EXPECT_GT(r.failures(), 0u) << "unexplained miss, seed " << seed;

    const auto lij = brute_force_lij(g, r.plan);
    for (std::size_t i = 0; i < lij.size(); ++i)
      for (std::size_t j = 0; j < lij[i].size(); ++j) EXPECT_LE(r.lhat_sizes[i][j], lij[i][j].size());
    EXPECT_EQ(net.transcript().by_protocol.count("flight"), 1u);
  }
  EXPECT_GE(exact + 1, runs);
}

TEST(ComputeFLight, LinearAndExactGatherAgree) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const std::size_t n = 48;
    const WeightedGraph g = er(n, 300, seed);
    const double p = std::sqrt(double(n) / double(g.m()));
    const SharedSeed pi = seed_for(n, seed);
    const Forest f = kruskal_mst(sample_subgraph(g, pi, p, 0));
    Network a = net_of(n, seed), b = net_of(n, seed);
    FlightConfig lin, ex;
    ex.mode = GatherMode::Exact;
    const FlightResult ra = compute_f_light(a, g, f, p, pi, lin);
    const FlightResult rb = compute_f_light(b, g, f, p, pi, ex);
    EXPECT_EQ(ends(ra.light), ends(rb.light));
    EXPECT_EQ(ra.lhat_sizes, rb.lhat_sizes);
    EXPECT_EQ(ra.samples, rb.samples);
    EXPECT_EQ(ra.sample_failures, rb.sample_failures);
    EXPECT_EQ(ra.messages, rb.messages);
  }
}

// Commander (i mod c) sends every phase-i tuple; each receiver hears from one
// distinct commander per phase it is active in.
TEST(ComputeFLight, TupleDistributionTranscript) {
  const std::size_t n = 64;
  const WeightedGraph g = er(n, 400, 9);
  const SharedSeed pi = seed_for(n, 9);
  const Forest f = kruskal_mst(sample_subgraph(g, pi, 0.4, 0));
  Network net = net_of(n, 9, true);
  const FlightResult r = compute_f_light(net, g, f, 0.4, pi, FlightConfig{});
  const auto& t = net.transcript();
  const std::uint64_t lo = t.rounds_by_step.at("flight.1"), hi = lo + t.rounds_by_step.at("flight.3");
  EXPECT_EQ(hi - lo, 1u);
  const auto cmd = select_commanders(n);
  std::map<NodeId, std::set<NodeId>> heard;
  std::uint64_t msgs = 0;
  for (const LinkUse& u : t.link_log) {
    if (u.first_round <= lo || u.first_round > hi) continue;
    ++msgs;
    EXPECT_LT(u.src, std::min<std::size_t>(r.plan.phases(), cmd.size())) << "surplus commander sent";
    EXPECT_TRUE(heard[u.dst].insert(u.src).second);
  }
  std::uint64_t expected = 0;
  for (std::size_t i = 0; i < r.plan.phases(); ++i)
    for (const PhaseComponent& c : r.plan.components[i])
      if (c.active) expected += c.members.size() - std::count(c.members.begin(), c.members.end(), cmd[i % cmd.size()]);
  EXPECT_EQ(msgs, expected);
  EXPECT_EQ(msgs, step_metrics(t, "flight.3").messages);
  EXPECT_LE(msgs, n * r.plan.phases());
}

TEST(ComputeFLight, RejectsBadInputs) {
  const WeightedGraph g = pad_weights(4, std::vector<RawEdge>{{0, 1, 1}, {1, 2, 2}});
  const WeightedGraph other = pad_weights(4, std::vector<RawEdge>{{0, 3, 1}});
  Network net = net_of(4);
  EXPECT_THROW(compute_f_light(net, g, kruskal_mst(other), 0.5, seed_for(4, 1), FlightConfig{}), ParameterError);
  std::mt19937_64 rng(1);
  EXPECT_THROW(compute_f_light(net, g, kruskal_mst(g), 0.5, SharedSeed::random(8, rng), FlightConfig{}),
               ParameterError);
  Network small = net_of(3);
  EXPECT_THROW(compute_f_light(small, g, kruskal_mst(g), 0.5, seed_for(4, 1), FlightConfig{}), ParameterError);
}

TEST(PhasePlanJson, CarriesSizes) {
  FigureFixture fx;
  Network net = net_of(10);
  const FlightResult r = compute_f_light(net, fx.g, fx.f, 0.5, seed_for(10, 3), FlightConfig{});
  const auto j = nlohmann::json::parse(phase_plan_json(r.plan, &r));
  ASSERT_EQ(j["phases"].size(), 3u);
  EXPECT_EQ(j["phases"][1].size(), 5u);
  EXPECT_EQ(j["phases"][1][1]["lhat"].get<std::size_t>(), 3u);
  EXPECT_EQ(j["light_edges"].get<std::size_t>(), r.light.size());
  EXPECT_FALSE(nlohmann::json::parse(phase_plan_json(r.plan)).contains("beta"));
}
