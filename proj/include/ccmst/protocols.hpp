#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <unordered_map>
#include <vector>

#include "ccmst/sim.hpp"
#include "ccmst/sketch.hpp"

namespace ccmst {

// Every DGS/DSG/RSG invocation checks its closed-form bound here.
struct BoundAudit {
  std::atomic<std::uint64_t> checks{0};
  std::atomic<std::uint64_t> violations{0};
  // Per-protocol tallies. A DGS call is "literal" when it used exactly 2
  // rounds and k + k|R| messages; calls whose supporters sit inside R save
  // one message per such supporter and are not.
  std::atomic<std::uint64_t> dgs_calls{0};
  std::atomic<std::uint64_t> dgs_literal{0};
  std::atomic<std::uint64_t> dsg_calls{0};
  std::atomic<std::uint64_t> rsg_calls{0};
};
BoundAudit& bound_audit();

// Per-destination FIFO queues that start the next message on a link as soon
// as the previous message or train on it has finished.
class LinkScheduler {
 public:
  explicit LinkScheduler(std::size_t n) : queues_(n) {}
  void enqueue(Envelope e);
  void pump(RoundContext& ctx);
  bool idle() const { return pending_ == 0; }

 private:
  struct Queue {
    std::vector<Envelope> items;
    std::size_t head = 0;
    std::uint64_t free_at = 0;
    bool scheduled = false;
  };
  using Slot = std::pair<std::uint64_t, NodeId>;
  std::vector<Queue> queues_;
  std::priority_queue<Slot, std::vector<Slot>, std::greater<Slot>> ready_;
  std::size_t pending_ = 0;
};

// A share of a bulk transfer. A transfer of F fragments from origin to
// final_dst is spread over the n-2 other nodes, which forward their share.
struct Piece : Cargo {
  NodeId origin = 0;
  NodeId final_dst = 0;
  std::uint64_t stream = 0;
  std::uint64_t count = 0;  // fragments in this piece
  std::uint64_t total = 0;  // fragments in the whole transfer
  std::shared_ptr<const Cargo> content;
};

// Metered cost is exactly 2F messages for n >= 3 (F when n = 2).
void send_bulk(LinkScheduler& sched, RoundContext& ctx, NodeId dst, std::uint64_t stream, std::uint64_t fragments,
               std::shared_ptr<const Cargo> content, LabelId label);

class BulkReceiver {
 public:
  struct Complete {
    NodeId origin;
    std::uint64_t stream;
    std::shared_ptr<const Cargo> content;
  };
  // Handles a piece train. Relays it if this node is an intermediate;
  // returns the transfer once all its fragments have arrived here.
  std::optional<Complete> on_delivery(const Delivery& d, RoundContext& ctx, LinkScheduler& sched, LabelId label);

 private:
  std::map<std::pair<NodeId, std::uint64_t>, std::uint64_t> got_;
};

struct RsgItem {
  NodeId src = 0;
  NodeId dst = 0;
  Payload payload;
};

struct RsgDelivered {
  NodeId src;
  Payload payload;
};

struct RsgResult {
  std::vector<std::vector<RsgDelivered>> delivered;  // by destination, ordered by (src, submission order)
  std::uint64_t k = 0;                               // items that crossed the network
  std::uint64_t rounds = 0;
  std::uint64_t messages = 0;
  std::uint64_t budget = 0;
  bool within_budget = true;
};

struct RsgParams {
  double epsilon = 1.0 / 3.0;
  double c = 1.0;
  bool enforce_caps = true;
};

std::uint64_t rsg_destination_cap(std::size_t n, const RsgParams& p);
std::uint64_t rsg_round_budget(const RsgParams& p);

RsgResult rsg_route(Network& net, std::vector<RsgItem> items, const RsgParams& params, const Label& label);
// Splits the task into sequential rsg_route calls that each respect the caps.
RsgResult rsg_route_batched(Network& net, std::vector<RsgItem> items, const RsgParams& params, const Label& label);

struct DsgResult {
  std::vector<std::vector<Payload>> received;  // indexed like destinations
  std::uint64_t k = 0;
  std::uint64_t rounds = 0;
  std::uint64_t messages = 0;
};

// Every destination receives every item. Item payloads must leave two words
// free for the count piggyback.
DsgResult dsg_gather(Network& net, const std::vector<std::vector<Payload>>& items_by_holder,
                     const std::vector<NodeId>& destinations, const Label& label);

struct DgsResult {
  std::vector<std::vector<Payload>> received;  // by node; only receivers are filled
  std::vector<NodeId> supporters;
  std::uint64_t rounds = 0;
  std::uint64_t messages = 0;
  std::uint64_t expected_messages = 0;
};

// Supporters are chosen outside R when possible; then the cost is exactly
// k + k|R|. Each supporter that is itself a receiver saves one message.
DgsResult dgs_broadcast(Network& net, NodeId holder, const std::vector<Payload>& items,
                        const std::vector<NodeId>& receivers, const Label& label);

struct SortResult {
  std::vector<std::vector<std::uint64_t>> ranks;  // ranks[v][i] for the i-th key held by v
  std::uint64_t k = 0;
  std::uint64_t workers = 0;
  std::uint64_t rounds = 0;
  std::uint64_t messages = 0;
  std::uint64_t rsg_budget_failures = 0;
};

// Keys are ranked by (key, holder, local index). Keys must fit in two words.
SortResult distributed_sort(Network& net, const std::vector<std::vector<std::uint64_t>>& keys, double epsilon,
                            const Label& label);

struct GatherTree {
  std::vector<NodeId> members;               // ascending
  unsigned branching = 2;
  std::vector<std::vector<NodeId>> levels;   // levels[0] = members, back() = {root}
  std::unordered_map<NodeId, NodeId> parent; // root absent
  std::unordered_map<NodeId, std::uint32_t> children;

  NodeId root() const { return levels.back().front(); }
  std::size_t depth() const { return levels.size() - 1; }
  std::uint32_t child_count(NodeId v) const {
    auto it = children.find(v);
    return it == children.end() ? 0 : it->second;
  }
};

GatherTree build_gather_tree(std::vector<NodeId> component, unsigned s);

struct BranchingChoice {
  unsigned s;
  bool paper_regime;  // true when the paper's s-formula was within [2, ceil(sqrt n)]
};
BranchingChoice gather_branching(std::size_t n, double p);

struct GatherRole {
  std::uint32_t instance = 0;
  NodeId parent = 0;
  bool is_root = false;
  std::uint32_t nchildren = 0;
};

template <class V>
struct ValueCargo : Cargo {
  explicit ValueCargo(V v) : value(std::move(v)) {}
  V value;
};

struct GatherLabels {
  LabelId bulk;
  LabelId control;
};

// Bottom-up aggregation over many gather trees at once. Each non-root sends
// its aggregate to its parent as a bulk transfer; the root may request
// further batches, which travel down the tree as single control messages.
//
// Policy:
//   using Value;
//   Value own(const GatherRole&, std::uint32_t batch);
//   void merge(Value& acc, const Value& child);
//   std::uint64_t fragments(const Value&);
//   bool at_root(const GatherRole&, std::uint32_t batch, Value&& acc);  // true: another batch
template <class Policy>
class TreeGatherProgram : public NodeProgram {
 public:
  using Value = typename Policy::Value;

  TreeGatherProgram(Policy& policy, std::vector<GatherRole> roles, GatherLabels labels, std::size_t n)
      : policy_(policy), labels_(labels), sched_(n) {
    states_.reserve(roles.size());
    for (auto& r : roles) {
      index_[r.instance] = states_.size();
      states_.push_back(State{r});
    }
  }

  void on_round(RoundContext& ctx) override {
    if (!started_) {
      started_ = true;
      for (auto& st : states_) begin_batch(ctx, st);
    }
    for (const Delivery& d : ctx.inbox()) {
      if (d.cargo) {
        auto done = receiver_.on_delivery(d, ctx, sched_, labels_.bulk);
        if (!done) continue;
        const std::uint32_t instance = static_cast<std::uint32_t>(done->stream >> 32);
        const std::uint32_t batch = static_cast<std::uint32_t>(done->stream & 0xffffffffu);
        State& st = state(instance);
        if (batch != st.batch) throw CorruptionError("gather transfer for a stale batch");
        if (st.batch == 0) st.children.push_back(done->origin);
        const auto& v = static_cast<const ValueCargo<Value>&>(*done->content).value;
        policy_.merge(st.acc, v);
        if (++st.children_done == st.role.nchildren) complete(ctx, st);
      } else {
        BitReader r(d.payload);
        const std::uint32_t instance = static_cast<std::uint32_t>(r.get(32));
        const std::uint32_t batch = static_cast<std::uint32_t>(r.get(ctx.word()));
        State& st = state(instance);
        st.batch = batch;
        begin_batch(ctx, st);
      }
    }
    sched_.pump(ctx);
  }

  bool done() const override { return started_ && sched_.idle(); }

 private:
  struct State {
    GatherRole role;
    std::uint32_t batch = 0;
    Value acc{};
    std::uint32_t children_done = 0;
    std::vector<NodeId> children;
  };

  State& state(std::uint32_t instance) {
    auto it = index_.find(instance);
    if (it == index_.end()) throw CorruptionError("message for an unknown gather instance");
    return states_[it->second];
  }

  void begin_batch(RoundContext& ctx, State& st) {
    if (st.batch > 0) {
      for (NodeId c : st.children) {
        BitWriter w;
        w.put(st.role.instance, 32).put(st.batch, ctx.word());
        sched_.enqueue(Envelope{c, w.finish(), 1, nullptr, labels_.control});
      }
    }
    st.acc = policy_.own(st.role, st.batch);
    st.children_done = 0;
    if (st.role.nchildren == 0) complete(ctx, st);
  }

  void complete(RoundContext& ctx, State& st) {
    if (st.role.is_root) {
      if (policy_.at_root(st.role, st.batch, std::move(st.acc))) {
        ++st.batch;
        begin_batch(ctx, st);
      }
      return;
    }
    const std::uint64_t frags = policy_.fragments(st.acc);
    auto cargo = std::make_shared<ValueCargo<Value>>(std::move(st.acc));
    st.acc = Value{};
    send_bulk(sched_, ctx, st.role.parent, (std::uint64_t(st.role.instance) << 32) | st.batch, frags,
              std::move(cargo), labels_.bulk);
  }

  Policy& policy_;
  GatherLabels labels_;
  LinkScheduler sched_;
  BulkReceiver receiver_;
  std::vector<State> states_;
  std::unordered_map<std::uint32_t, std::size_t> index_;
  bool started_ = false;
};

// Runs the programs built by make(v) as one event-driven stage.
template <class Program>
StageStats run_programs(Network& net, std::vector<std::unique_ptr<Program>>& progs, const Label& label,
                        Network::Schedule schedule = Network::Schedule::EveryRound) {
  std::vector<NodeProgram*> ptrs;
  ptrs.reserve(progs.size());
  for (auto& p : progs) ptrs.push_back(p.get());
  return net.run(ptrs, label, schedule);
}

struct AggregateResult {
  std::vector<Sketch> root_vector;
  StageStats stats;
};

// Merges per-member sketch vectors up the tree; bulk transfers carry the
// serialized sketches, fragmented per sketch.
AggregateResult tree_gather_aggregate(Network& net, const GatherTree& tree,
                                      const std::unordered_map<NodeId, std::vector<Sketch>>& vectors,
                                      const Label& label);

}  // namespace ccmst
