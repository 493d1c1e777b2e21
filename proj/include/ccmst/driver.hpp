#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ccmst/boruvka.hpp"
#include "ccmst/flight.hpp"
#include "ccmst/graph.hpp"
#include "ccmst/kwise_hash.hpp"
#include "ccmst/sim.hpp"

namespace ccmst {

enum class Variant { V1, V2 };

struct DriverConfig {
  Variant variant = Variant::V1;
  double epsilon = 0.5;  // v2 only
  double base_c = 4.0;   // v2 base case: m < base_c * n^(1+eps)
  double kappa = 4.0;
  bool theory_beta = false;
  GatherMode gather = GatherMode::Linear;
  unsigned max_batches = 64;

  void validate() const;
};

DriverConfig parse_driver_config(const std::vector<std::pair<std::string, std::string>>& kv);

// Bits of pi: enough for one k-wise family over GF(prime above n^2).
std::size_t seed_bits(std::size_t n);

struct SeedBroadcast {
  SharedSeed seed;
  std::uint64_t fragments = 0;
  std::uint64_t rounds = 0;
  std::uint64_t messages = 0;
};

// Node 0 draws pi and spreads it to every node with one DGS call.
SeedBroadcast broadcast_seed(Network& net, std::mt19937_64& rng, unsigned depth);

struct MEstimate {
  std::uint64_t m = 0;
  std::uint64_t rounds = 0;
  std::uint64_t messages = 0;
};

// Degrees to node 0 (DSG), m back to everyone (DGS).
MEstimate estimate_m(Network& net, const WeightedGraph& g, unsigned depth);

// Both endpoints of an edge evaluate the same hash locally; no messages.
WeightedGraph sample_subgraph(const WeightedGraph& g, const SharedSeed& pi, double p, unsigned depth);

struct LevelStats {
  unsigned depth = 0;
  std::uint64_t m = 0;
  double p = 1.0;
  std::uint64_t eh = 0;
  bool base_case = false;
};

struct MstRun {
  Forest forest;
  double p = 1.0;             // top-level sampling probability
  std::uint64_t eh = 0;       // top-level |E(H)|
  std::uint64_t el = 0;       // top-level |E_l|
  std::size_t max_lhat = 0;
  unsigned depth = 0;         // deepest recursion level reached
  std::uint64_t failures = 0; // sketch failures and capped gathers, all levels
  std::vector<LevelStats> levels;
  std::vector<FlightResult> flights;  // one per level that ran the light-edge step

  bool flagged() const { return failures > 0; }
};

MstRun mst_v1(Network& net, const WeightedGraph& g, const DriverConfig& cfg, std::uint64_t seed);
MstRun mst_v2(Network& net, const WeightedGraph& g, const DriverConfig& cfg, std::uint64_t seed);
MstRun run_mst(Network& net, const WeightedGraph& g, const DriverConfig& cfg, std::uint64_t seed);

}  // namespace ccmst
