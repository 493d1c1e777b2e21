#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ccmst/driver.hpp"

using namespace ccmst;

namespace {

Network net_of(std::size_t n, std::uint64_t seed = 1) {
  SimConfig c;
  c.n = n;
  c.seed = seed;
  return Network(c);
}

WeightedGraph make(GraphModel model, std::size_t n, std::size_t m, std::uint64_t seed) {
  GeneratorParams p;
  p.model = model;
  p.n = n;
  p.m = m;
  return generate_graph(p, seed);
}

std::uint64_t step_sum(const Transcript& t) {
  std::uint64_t s = 0;
  for (const auto& [step, msgs] : t.by_step) s += msgs;
  return s;
}

}  // namespace

TEST(Config, ParsesKeysAndRejectsJunk) {
  const DriverConfig c = parse_driver_config({{"variant", "v2"}, {"epsilon", "0.25"}, {"base_c", "2"}, {"kappa", "3"},
                                              {"theory_beta", "yes"}, {"gather", "exact"}, {"max_batches", "8"}});
  EXPECT_EQ(c.variant, Variant::V2);
  EXPECT_DOUBLE_EQ(c.epsilon, 0.25);
  EXPECT_DOUBLE_EQ(c.base_c, 2.0);
  EXPECT_DOUBLE_EQ(c.kappa, 3.0);
  EXPECT_TRUE(c.theory_beta);
  EXPECT_EQ(c.gather, GatherMode::Exact);
  EXPECT_EQ(c.max_batches, 8u);

  using KV = std::vector<std::pair<std::string, std::string>>;
  for (const KV& bad : {KV{{"variant", "v3"}}, KV{{"variant", "v2"}, {"epsilon", "0"}},
                        KV{{"variant", "v2"}, {"epsilon", "1.5"}}, KV{{"epsilon", "abc"}}, KV{{"kappa", "2x"}},
                        KV{{"kappa", "-1"}}, KV{{"base_c", "0.5"}}, KV{{"theory_beta", "maybe"}},
                        KV{{"gather", "tree"}}, KV{{"max_batches", "0"}}, KV{{"max_batches", "2.5"}}})
    EXPECT_THROW(parse_driver_config(bad), ParameterError) << bad.back().first << "=" << bad.back().second;
  // epsilon only matters for v2.
  EXPECT_NO_THROW(parse_driver_config({{"epsilon", "0"}}));
}

TEST(SeedBroadcast, EveryNodeGetsEveryFragment) {
  for (std::size_t n : {8u, 64u, 256u}) {
    Network net = net_of(n);
    std::mt19937_64 rng(n);
    const SeedBroadcast sb = broadcast_seed(net, rng, 0);
    EXPECT_EQ(sb.seed.bits(), seed_bits(n));
    EXPECT_EQ(sb.fragments, fragment_count(seed_bits(n), net.bandwidth_bits(), net.header_bits()));
    EXPECT_EQ(sb.rounds, 2u);
    // The k supporters are themselves in R, so each forwards to n - 1 others.
    const std::uint64_t k = sb.fragments;
    EXPECT_EQ(sb.messages, k * n - (k == n ? 1 : 0)) << n;
    EXPECT_LE(sb.messages, k + k * n);
    EXPECT_EQ(step_metrics(net.transcript(), "pi").messages, sb.messages);
  }
}

TEST(SeedBroadcast, Deterministic) {
  Network a = net_of(32), b = net_of(32);
  std::mt19937_64 r1(5), r2(5);
  EXPECT_EQ(broadcast_seed(a, r1, 0).seed, broadcast_seed(b, r2, 0).seed);
}

TEST(EstimateM, SmallGraphs) {
  {
    Network net = net_of(4);
    const auto r = estimate_m(net, make(GraphModel::Complete, 4, 0, 1), 0);
    EXPECT_EQ(r.m, 6u);
    EXPECT_LE(r.messages, (2 * 4 + 2) + (1 + 4));
  }
  {
    Network net = net_of(5);
    const auto r = estimate_m(net, make(GraphModel::Path, 5, 0, 1), 0);
    EXPECT_EQ(r.m, 4u);
    EXPECT_LE(r.messages, (2 * 5 + 2) + (1 + 5));
  }
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const std::size_t n = 100;
    const WeightedGraph g = make(GraphModel::ErdosRenyi, n, 1500, seed);
    Network net = net_of(n);
    const auto r = estimate_m(net, g, 0);
    EXPECT_EQ(r.m, g.m());
    EXPECT_LE(r.messages, (2 * n + 2) + (1 + n));
    EXPECT_EQ(step_metrics(net.transcript(), "m-est").messages, r.messages);
  }
}

TEST(SampleSubgraph, ExtremesAndDeterminism) {
  const WeightedGraph g = make(GraphModel::ErdosRenyi, 64, 600, 2);
  std::mt19937_64 rng(2);
  const SharedSeed pi = SharedSeed::random(seed_bits(64), rng);
  EXPECT_EQ(sample_subgraph(g, pi, 1e-9, 0).m(), 0u);
  EXPECT_EQ(sample_subgraph(g, pi, 1.0, 0).m(), g.m());
  const WeightedGraph h1 = sample_subgraph(g, pi, 0.3, 0), h2 = sample_subgraph(g, pi, 0.3, 0);
  EXPECT_TRUE(same_edge_set(h1.edges(), h2.edges()));
  // Another recursion depth draws another family.
  EXPECT_FALSE(same_edge_set(h1.edges(), sample_subgraph(g, pi, 0.3, 1).edges()));
  for (const Edge& e : h1.edges()) {
    const long id = g.find_edge(e.u, e.v);
    ASSERT_GE(id, 0);
    EXPECT_EQ(g.edges()[id].key, e.key);
  }
}

TEST(SampleSubgraph, SizeConcentrates) {
  const std::size_t n = 128, m = 4096;
  const double p = std::sqrt(double(n) / double(m)), target = std::sqrt(double(m) * double(n));
  const WeightedGraph g = make(GraphModel::ErdosRenyi, n, m, 7);
  std::size_t outside = 0;
  double sum = 0;
  for (std::uint64_t s = 1; s <= 500; ++s) {
    std::mt19937_64 rng(s);
    const std::size_t eh = sample_subgraph(g, SharedSeed::random(seed_bits(n), rng), p, 0).m();
    sum += double(eh);
    if (double(eh) < target / 2 || double(eh) > 2 * target) ++outside;
  }
  EXPECT_LE(outside, 1u);
  EXPECT_NEAR(sum / 500, target, 0.05 * target);
}

TEST(MstV1, TreeInputIsReturned) {
  const WeightedGraph g = make(GraphModel::Path, 50, 0, 3);
  Network net = net_of(50);
  const MstRun r = mst_v1(net, g, DriverConfig{}, 3);
  EXPECT_TRUE(same_edge_set(r.forest.edges(), g.edges()));
  EXPECT_DOUBLE_EQ(r.p, 1.0);
  EXPECT_EQ(r.eh, g.m());
}

TEST(MstV1, MatchesKruskalWithPerStepMetering) {
  const std::size_t n = 128;
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    const WeightedGraph g = make(GraphModel::ErdosRenyi, n, 2048, seed);
    Network net = net_of(n, seed);
    const MstRun r = mst_v1(net, g, DriverConfig{}, seed);
    if (!r.flagged()) {
      EXPECT_TRUE(same_edge_set(r.forest.edges(), kruskal_mst(g).edges())) << "seed " << seed;
    }
    EXPECT_NEAR(r.p, std::sqrt(double(n) / 2048.0), 1e-12);
    const Transcript& t = net.transcript();
    for (const char* step : {"pi", "m-est", "lmmst", "flight", "final"})
      EXPECT_GT(step_metrics(t, step).messages, 0u) << step;
    EXPECT_EQ(step_sum(t), t.messages_total);
    EXPECT_EQ(r.flights.size(), 1u);
    EXPECT_EQ(r.el, r.flights[0].light.size());
  }
}

TEST(MstV1, DisconnectedInput) {
  std::vector<RawEdge> raw;
  for (NodeId v = 0; v < 20; ++v)
    for (NodeId u = v + 1; u < 20; ++u) raw.push_back({v, u, 1 + (v * 31 + u * 17) % 400});
  for (NodeId v = 20; v < 39; ++v) raw.push_back({v, NodeId(v + 1), 3});
  const WeightedGraph g = pad_weights(45, raw);  // plus five isolated nodes
  Network net = net_of(45);
  const MstRun r = mst_v1(net, g, DriverConfig{}, 9);
  EXPECT_FALSE(r.flagged());
  EXPECT_TRUE(same_edge_set(r.forest.edges(), kruskal_mst(g).edges()));
}

TEST(MstV1, SameSeedSameTranscript) {
  const WeightedGraph g = make(GraphModel::ErdosRenyi, 64, 700, 4);
  Network a = net_of(64, 4), b = net_of(64, 4);
  const MstRun ra = mst_v1(a, g, DriverConfig{}, 11), rb = mst_v1(b, g, DriverConfig{}, 11);
  EXPECT_EQ(a.transcript().messages_total, b.transcript().messages_total);
  EXPECT_EQ(a.transcript().rounds, b.transcript().rounds);
  EXPECT_EQ(a.transcript().by_step, b.transcript().by_step);
  EXPECT_EQ(ra.eh, rb.eh);
}

TEST(MstV2, BaseCaseRunsOnce) {
  const WeightedGraph g = make(GraphModel::ErdosRenyi, 64, 300, 5);
  Network net = net_of(64);
  DriverConfig cfg;
  cfg.variant = Variant::V2;
  cfg.epsilon = 0.5;
  const MstRun r = mst_v2(net, g, cfg, 5);
  ASSERT_EQ(r.levels.size(), 1u);
  EXPECT_TRUE(r.levels[0].base_case);
  EXPECT_EQ(r.depth, 0u);
  EXPECT_TRUE(r.flights.empty());
  EXPECT_EQ(step_metrics(net.transcript(), "pi").messages, 0u);
  EXPECT_TRUE(same_edge_set(r.forest.edges(), kruskal_mst(g).edges()));
}

// Each level keeps about an n^-eps share of the edges, so a complete graph
// with eps = 1/4 bottoms out within ceil(1/eps) + 1 levels.
TEST(MstV2, CompleteGraphRecursion) {
  const std::size_t n = 128;
  const WeightedGraph g = make(GraphModel::Complete, n, 0, 6);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Network net = net_of(n, seed);
    DriverConfig cfg;
    cfg.variant = Variant::V2;
    cfg.epsilon = 0.25;
    const MstRun r = mst_v2(net, g, cfg, seed);
    EXPECT_LE(r.depth, 5u);
    EXPECT_GE(r.depth, 1u);
    if (!r.flagged()) {
      EXPECT_TRUE(same_edge_set(r.forest.edges(), kruskal_mst(g).edges()));
    }
    ASSERT_EQ(r.levels.size(), r.depth + 1);
    EXPECT_TRUE(r.levels.back().base_case);
    for (std::size_t i = 0; i + 1 < r.levels.size(); ++i) {
      EXPECT_FALSE(r.levels[i].base_case);
      EXPECT_EQ(r.levels[i + 1].m, r.levels[i].eh);
      EXPECT_LE(double(r.levels[i].eh), 2.0 * double(r.levels[i].m) * std::pow(double(n), -0.25));
    }
    EXPECT_EQ(r.flights.size(), r.depth);
    EXPECT_EQ(step_sum(net.transcript()), net.transcript().messages_total);
    // Every level meters its own steps.
    for (unsigned d = 0; d < r.depth; ++d) EXPECT_GT(net.transcript().by_step_depth.count("pi@" + std::to_string(d)), 0u);
  }
}

TEST(Driver, RejectsMismatchedNetwork) {
  Network net = net_of(10);
  const WeightedGraph g = make(GraphModel::Path, 9, 0, 1);
  EXPECT_THROW(mst_v1(net, g, DriverConfig{}, 1), ParameterError);
  DriverConfig v2;
  v2.variant = Variant::V2;
  EXPECT_THROW(run_mst(net, g, v2, 1), ParameterError);
}
