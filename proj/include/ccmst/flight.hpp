#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ccmst/graph.hpp"
#include "ccmst/kwise_hash.hpp"
#include "ccmst/protocols.hpp"
#include "ccmst/sim.hpp"
#include "ccmst/sketch.hpp"

namespace ccmst {

struct PhaseComponent {
  NodeId label = 0;              // smallest member
  std::vector<NodeId> members;   // ascending
  WeightKey mwoe = WeightKey::infinity();
  std::optional<Edge> edge;      // lightest F-edge leaving the component
  bool active = false;

  friend bool operator==(const PhaseComponent&, const PhaseComponent&) = default;
};

// Boruvka on F, planned locally. A component takes part in a phase when it
// has an outgoing F-edge, or when it has just become a whole tree of F (the
// first phase without one) and is not all of V.
struct PhasePlan {
  std::vector<std::vector<NodeId>> label_of;           // [phase][node]
  std::vector<std::vector<PhaseComponent>> components; // [phase], by label
  std::vector<NodeId> final_label_of;

  std::size_t phases() const { return components.size(); }
  friend bool operator==(const PhasePlan&, const PhasePlan&) = default;
};

PhasePlan simulate_boruvka_locally(std::size_t n, std::span<const Edge> f_edges);

// The max(1, ceil(log2 n)) lowest ids.
std::vector<NodeId> select_commanders(std::size_t n);

struct ForestGather {
  std::vector<std::vector<Edge>> at_commander;
  std::uint64_t rounds = 0;
  std::uint64_t messages = 0;
};

// Every F-edge is reported once, by its smaller endpoint.
ForestGather gather_forest(Network& net, const Forest& f, const std::vector<NodeId>& commanders, unsigned depth,
                           unsigned weight_bits);

// L[i][j]: edges with exactly one endpoint in component j of phase i and key
// at most that component's MWOE key. Empty for inactive components.
std::vector<std::vector<std::vector<Edge>>> brute_force_lij(const WeightedGraph& g, const PhasePlan& plan);

enum class GatherMode {
  Linear,  // members contribute their ids; the root sketches the summed vector
  Exact,   // members ship serialized sketches that are merged up the tree
};

struct FlightConfig {
  double kappa = 4.0;
  bool theory_beta = false;
  GatherMode mode = GatherMode::Linear;
  unsigned max_batches = 64;
  unsigned branching = 0;  // 0: gather_branching(n, p)
  unsigned depth = 0;
  std::string step = "flight";
};

std::uint64_t flight_beta(std::size_t n, double p, const FlightConfig& cfg);

struct FlightResult {
  std::vector<Edge> light;  // sorted; includes E(F)
  std::vector<Edge> forest; // E(F)
  unsigned depth = 0;
  PhasePlan plan;
  std::uint64_t beta = 0;
  unsigned branching = 0;
  bool paper_branching = false;
  std::uint64_t samples = 0;
  std::uint64_t sample_failures = 0;  // sketches that decoded to nothing
  std::uint64_t capped_instances = 0; // gathers stopped by max_batches
  std::uint64_t batches = 0;
  std::size_t max_lhat = 0;           // largest per-component candidate set
  std::vector<std::vector<std::size_t>> lhat_sizes;  // [phase][component]
  std::uint64_t rounds = 0;
  std::uint64_t messages = 0;

  std::uint64_t failures() const { return sample_failures + capped_instances; }
};

// Returns E(F) plus the sampled F-light candidates. sketch_seed must be at
// least SketchParams::defaults(n).required_seed_bits() long.
FlightResult compute_f_light(Network& net, const WeightedGraph& g, const Forest& f, double p,
                             const SharedSeed& sketch_seed, const FlightConfig& cfg);

std::string phase_plan_json(const PhasePlan& plan, const FlightResult* result = nullptr);

}  // namespace ccmst
