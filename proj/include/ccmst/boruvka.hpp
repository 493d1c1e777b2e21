#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ccmst/graph.hpp"
#include "ccmst/sim.hpp"

namespace ccmst {

struct LmMstResult {
  Forest forest;
  std::uint64_t phases = 0;  // phases that merged something
  std::uint64_t rounds = 0;
  std::uint64_t messages = 0;
  std::vector<std::size_t> components_after_phase;
};

// Distributed Boruvka on the clique. Each node starts knowing only its
// incident edges of g; labels are the smallest id in a component. A phase is
// five rounds: candidates to leaders, leaders' choices to node 0, node 0
// merges with union-find and answers, leaders relabel members, and members
// tell neighbours about changed labels and chosen edges.
LmMstResult linear_messages_mst(Network& net, const WeightedGraph& g, const std::string& step, unsigned depth = 0);

}  // namespace ccmst
