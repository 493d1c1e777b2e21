#include "ccmst/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ccmst {

BoundAudit& bound_audit() {
  static BoundAudit audit;
  return audit;
}

namespace {

void audit_check(bool ok, const std::string& what) {
  bound_audit().checks.fetch_add(1, std::memory_order_relaxed);
  if (!ok) {
    bound_audit().violations.fetch_add(1, std::memory_order_relaxed);
    throw BoundViolation(what);
  }
}

template <class P>
std::vector<std::unique_ptr<P>> make_programs(std::size_t n, const std::function<std::unique_ptr<P>(NodeId)>& make) {
  std::vector<std::unique_ptr<P>> out;
  out.reserve(n);
  for (NodeId v = 0; v < n; ++v) out.push_back(make(v));
  return out;
}

// Appends the bits of src after whatever w already holds.
void append_payload(BitWriter& w, const Payload& src) {
  BitReader r(src);
  std::uint32_t left = src.bits();
  while (left > 0) {
    unsigned chunk = std::min<std::uint32_t>(left, 64);
    w.put(r.get(chunk), chunk);
    left -= chunk;
  }
}

Payload rest_of(BitReader& r) {
  BitWriter w;
  while (r.remaining() > 0) {
    unsigned chunk = std::min<std::uint32_t>(r.remaining(), 64);
    w.put(r.get(chunk), chunk);
  }
  return w.finish();
}

}  // namespace

void LinkScheduler::enqueue(Envelope e) {
  Queue& q = queues_.at(e.dst);
  const NodeId dst = e.dst;
  q.items.push_back(std::move(e));
  ++pending_;
  if (!q.scheduled) {
    q.scheduled = true;
    ready_.push({q.free_at, dst});
  }
}

void LinkScheduler::pump(RoundContext& ctx) {
  const std::uint64_t now = ctx.round();
  while (!ready_.empty() && ready_.top().first <= now) {
    const NodeId dst = ready_.top().second;
    ready_.pop();
    Queue& q = queues_[dst];
    Envelope e = std::move(q.items[q.head++]);
    q.free_at = now + e.fragments;
    --pending_;
    ctx.send(std::move(e));
    if (q.head < q.items.size()) {
      ready_.push({q.free_at, dst});
    } else {
      q.items.clear();
      q.head = 0;
      q.scheduled = false;
    }
  }
}

void send_bulk(LinkScheduler& sched, RoundContext& ctx, NodeId dst, std::uint64_t stream, std::uint64_t fragments,
               std::shared_ptr<const Cargo> content, LabelId label) {
  const NodeId self = ctx.self();
  const std::size_t n = ctx.n();
  if (fragments == 0) throw ParameterError("bulk transfer of zero fragments");
  auto make_piece = [&](std::uint64_t count) {
    auto p = std::make_shared<Piece>();
    p->origin = self;
    p->final_dst = dst;
    p->stream = stream;
    p->count = count;
    p->total = fragments;
    p->content = content;
    return p;
  };
  if (n <= 2) {
    sched.enqueue(Envelope{dst, {}, fragments, make_piece(fragments), label});
    return;
  }
  const std::size_t relays = n - 2;
  const std::size_t offset = ctx.rng()() % relays;
  const std::uint64_t base = fragments / relays, rem = fragments % relays;
  for (std::size_t i = 0; i < relays; ++i) {
    const std::uint64_t cnt = base + (i < rem ? 1 : 0);
    if (cnt == 0) break;
    // The (offset + i)-th node of V minus {self, dst}.
    NodeId w = static_cast<NodeId>((offset + i) % relays);
    const NodeId lo = std::min(self, dst), hi = std::max(self, dst);
    if (w >= lo) ++w;
    if (w >= hi) ++w;
    sched.enqueue(Envelope{w, {}, cnt, make_piece(cnt), label});
  }
}

std::optional<BulkReceiver::Complete> BulkReceiver::on_delivery(const Delivery& d, RoundContext& ctx,
                                                                LinkScheduler& sched, LabelId label) {
  const auto* piece = dynamic_cast<const Piece*>(d.cargo.get());
  if (!piece) throw CorruptionError("train without a bulk piece");
  if (piece->final_dst != ctx.self()) {
    sched.enqueue(Envelope{piece->final_dst, {}, piece->count, d.cargo, label});
    return std::nullopt;
  }
  auto key = std::make_pair(piece->origin, piece->stream);
  std::uint64_t& got = got_[key];
  got += piece->count;
  if (got < piece->total) return std::nullopt;
  if (got > piece->total) throw CorruptionError("bulk transfer overran its fragment count");
  got_.erase(key);
  return Complete{piece->origin, piece->stream, piece->content};
}

// ---------------------------------------------------------------- RSG

std::uint64_t rsg_destination_cap(std::size_t n, const RsgParams& p) {
  return static_cast<std::uint64_t>(std::floor(p.c * std::pow(double(n), 1.0 - p.epsilon) + 1e-9));
}

std::uint64_t rsg_round_budget(const RsgParams& p) {
  return static_cast<std::uint64_t>(std::ceil(3.0 * p.c / p.epsilon - 1e-9));
}

namespace {

class RsgProgram : public NodeProgram {
 public:
  RsgProgram(std::size_t n, std::vector<Envelope> scatter, std::vector<std::vector<RsgDelivered>>& out)
      : sched_(n), scatter_(std::move(scatter)), out_(out) {}

  void on_round(RoundContext& ctx) override {
    if (ctx.round() == 1)
      for (auto& e : scatter_) sched_.enqueue(std::move(e));
    for (const Delivery& d : ctx.inbox()) {
      BitReader r(d.payload);
      const bool forward = r.get_flag();
      const NodeId who = static_cast<NodeId>(r.get(ctx.word()));
      if (!forward) {
        BitWriter w;
        w.put_flag(true).put(d.src, ctx.word());
        Payload rest = rest_of(r);
        append_payload(w, rest);
        sched_.enqueue(Envelope{who, w.finish()});
      } else {
        out_[ctx.self()].push_back({who, rest_of(r)});
      }
    }
    sched_.pump(ctx);
  }
  bool done() const override { return sched_.idle(); }

 private:
  LinkScheduler sched_;
  std::vector<Envelope> scatter_;
  std::vector<std::vector<RsgDelivered>>& out_;
};

}  // namespace

RsgResult rsg_route(Network& net, std::vector<RsgItem> items, const RsgParams& params, const Label& label) {
  const std::size_t n = net.n();
  const unsigned word = net.word_bits();
  RsgResult res;
  res.delivered.assign(n, {});
  res.budget = rsg_round_budget(params);

  std::vector<std::vector<std::size_t>> by_src(n);
  std::vector<std::uint64_t> dst_load(n, 0);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const RsgItem& it = items[i];
    if (it.src >= n || it.dst >= n) throw ParameterError("rsg item endpoint out of range");
    if (it.payload.bits() + word + 1 > net.bandwidth_bits()) throw ParameterError("rsg item payload too large");
    if (it.src == it.dst) {
      res.delivered[it.dst].push_back({it.src, it.payload});
      continue;
    }
    by_src[it.src].push_back(i);
    ++dst_load[it.dst];
  }
  const std::uint64_t cap = rsg_destination_cap(n, params);
  for (NodeId v = 0; v < n; ++v) {
    if (by_src[v].size() > n) throw ParameterError("rsg source holds more than n items");
    if (params.enforce_caps && dst_load[v] > cap) throw ParameterError("rsg destination load exceeds c*n^(1-eps)");
    res.k += by_src[v].size();
  }

  // Scatter plan: each source gives its items distinct random intermediates
  // (never the source or the item's destination); leftovers go in later batches.
  std::vector<std::vector<Envelope>> scatter(n);
  std::mt19937_64 rng(splitmix64(net.config().seed ^ (net.stages_run() * 0x2545f4914f6cdd1dULL)));
  std::vector<NodeId> pool;
  std::vector<long> pos(n, -1);
  for (NodeId s = 0; s < n; ++s) {
    std::vector<std::size_t> pending = by_src[s];
    while (!pending.empty()) {
      pool.clear();
      for (NodeId w = 0; w < n; ++w) {
        if (w == s) continue;
        pos[w] = static_cast<long>(pool.size());
        pool.push_back(w);
      }
      std::vector<std::size_t> deferred;
      for (std::size_t idx : pending) {
        const NodeId dst = items[idx].dst;
        const bool has_dst = pos[dst] >= 0;
        const std::size_t choices = pool.size() - (has_dst ? 1 : 0);
        if (choices == 0) {
          deferred.push_back(idx);
          continue;
        }
        std::size_t r = rng() % choices;
        if (has_dst && r >= static_cast<std::size_t>(pos[dst])) ++r;
        const NodeId w = pool[r];
        pool[r] = pool.back();
        pos[pool[r]] = static_cast<long>(r);
        pool.pop_back();
        pos[w] = -1;
        BitWriter bw;
        bw.put_flag(false).put(dst, word);
        append_payload(bw, items[idx].payload);
        scatter[s].push_back(Envelope{w, bw.finish()});
      }
      for (NodeId w : pool) pos[w] = -1;
      pending.swap(deferred);
    }
  }

  std::vector<std::unique_ptr<RsgProgram>> progs;
  for (NodeId v = 0; v < n; ++v) progs.push_back(std::make_unique<RsgProgram>(n, std::move(scatter[v]), res.delivered));
  StageStats st = run_programs(net, progs, label);
  res.rounds = res.k ? st.rounds : 0;
  res.messages = st.messages;
  res.within_budget = res.rounds <= res.budget;
  bound_audit().rsg_calls.fetch_add(1, std::memory_order_relaxed);
  audit_check(res.messages == 2 * res.k, "rsg used " + std::to_string(res.messages) + " messages for k = " +
                                             std::to_string(res.k));
  for (auto& v : res.delivered)
    std::stable_sort(v.begin(), v.end(), [](const RsgDelivered& a, const RsgDelivered& b) { return a.src < b.src; });
  return res;
}

RsgResult rsg_route_batched(Network& net, std::vector<RsgItem> items, const RsgParams& params, const Label& label) {
  const std::size_t n = net.n();
  const std::uint64_t cap = std::max<std::uint64_t>(1, rsg_destination_cap(n, params));
  std::vector<std::vector<RsgItem>> batches;
  std::vector<std::vector<std::uint64_t>> src_load, dst_load;
  for (auto& it : items) {
    std::size_t b = 0;
    if (it.src != it.dst) {
      while (b < batches.size() && (src_load[b][it.src] >= n - 1 || dst_load[b][it.dst] >= cap)) ++b;
    }
    if (b == batches.size()) {
      batches.emplace_back();
      src_load.emplace_back(n, 0);
      dst_load.emplace_back(n, 0);
    }
    if (it.src != it.dst) {
      ++src_load[b][it.src];
      ++dst_load[b][it.dst];
    }
    batches[b].push_back(std::move(it));
  }
  RsgResult total;
  total.delivered.assign(n, {});
  total.budget = rsg_round_budget(params);
  for (auto& batch : batches) {
    RsgResult r = rsg_route(net, std::move(batch), params, label);
    total.k += r.k;
    total.rounds += r.rounds;
    total.messages += r.messages;
    total.within_budget = total.within_budget && r.within_budget;
    for (NodeId v = 0; v < n; ++v)
      for (auto& d : r.delivered[v]) total.delivered[v].push_back(std::move(d));
  }
  return total;
}

// ---------------------------------------------------------------- DSG

namespace {

enum DsgType : std::uint64_t { kDsgItem = 0, kDsgCount = 1, kDsgOffset = 2, kDsgRelay = 3 };

struct DsgShared {
  std::vector<NodeId> dests;
  std::vector<char> is_dest;
  NodeId coordinator;
  std::vector<std::vector<Payload>>* received;  // by destination index
  std::vector<long> dest_index;
};

class DsgProgram : public NodeProgram {
 public:
  DsgProgram(std::size_t n, const DsgShared& sh, std::vector<Payload> items)
      : sched_(n), sh_(sh), items_(std::move(items)) {}

  void on_round(RoundContext& ctx) override {
    const NodeId self = ctx.self();
    const unsigned w = ctx.word();
    if (ctx.round() == 1 && !items_.empty()) {
      // The coordinator's links carry offsets in round 2, so it only sends one item early.
      if (items_.size() <= (self == sh_.coordinator ? 1u : 2u)) {
        for (const Payload& p : items_) to_all_dests(ctx, p, self);
      } else {
        // Heavy holder: first item, with the count, to the coordinator.
        for (NodeId d : sh_.dests) {
          if (d == self) continue;
          BitWriter bw;
          bw.put(d == sh_.coordinator ? kDsgCount : kDsgItem, 2);
          if (d == sh_.coordinator) bw.put(items_.size(), 2 * w);
          append_payload(bw, items_[0]);
          sched_.enqueue(Envelope{d, bw.finish()});
        }
        if (sh_.is_dest[self]) keep(self, items_[0]);
        if (self == sh_.coordinator) heavy_.push_back({self, items_.size()});
      }
    }
    for (const Delivery& d : ctx.inbox()) {
      BitReader r(d.payload);
      const auto type = r.get(2);
      if (type == kDsgItem) {
        keep(self, rest_of(r));
      } else if (type == kDsgCount) {
        const std::uint64_t cnt = r.get(2 * w);
        heavy_.push_back({d.src, cnt});
        keep(self, rest_of(r));
      } else if (type == kDsgOffset) {
        scatter(ctx, r.get(2 * w));
      } else {
        relay(ctx, rest_of(r));
      }
    }
    if (self == sh_.coordinator && ctx.round() == 2 && !heavy_.empty()) {
      std::sort(heavy_.begin(), heavy_.end());
      std::uint64_t offset = 0;
      for (auto [h, cnt] : heavy_) {
        if (h == self) {
          // Offsets leave first; our own scatter would hold up those links.
          own_offset_ = offset;
        } else {
          BitWriter bw;
          bw.put(kDsgOffset, 2).put(offset, 2 * w);
          sched_.enqueue(Envelope{h, bw.finish()});
        }
        offset += cnt - 1;
      }
      heavy_.clear();
    } else if (own_offset_ && ctx.round() == 3) {
      scatter(ctx, *own_offset_);
      own_offset_.reset();
    }
    sched_.pump(ctx);
  }
  bool done() const override { return sched_.idle() && !own_offset_; }

 private:
  void keep(NodeId self, Payload p) { (*sh_.received)[sh_.dest_index[self]].push_back(std::move(p)); }

  void to_all_dests(RoundContext& ctx, const Payload& p, NodeId self) {
    for (NodeId d : sh_.dests) {
      if (d == self) continue;
      BitWriter bw;
      bw.put(kDsgItem, 2);
      append_payload(bw, p);
      sched_.enqueue(Envelope{d, bw.finish()});
    }
    if (sh_.is_dest[self]) keep(self, p);
    (void)ctx;
  }

  void scatter(RoundContext& ctx, std::uint64_t offset) {
    const std::size_t n = ctx.n();
    std::vector<std::size_t> own;
    for (std::size_t j = 1; j < items_.size(); ++j) {
      const NodeId relay_node = static_cast<NodeId>((offset + j - 1) % n);
      if (relay_node == ctx.self()) {
        own.push_back(j);
        continue;
      }
      BitWriter bw;
      bw.put(kDsgRelay, 2);
      append_payload(bw, items_[j]);
      sched_.enqueue(Envelope{relay_node, bw.finish()});
    }
    // Items we relay ourselves queue behind the scatter, which other relays wait on.
    for (std::size_t j : own) relay(ctx, items_[j]);
  }

  void relay(RoundContext& ctx, const Payload& p) { to_all_dests(ctx, p, ctx.self()); }

  LinkScheduler sched_;
  const DsgShared& sh_;
  std::vector<Payload> items_;
  std::vector<std::pair<NodeId, std::uint64_t>> heavy_;
  std::optional<std::uint64_t> own_offset_;
};

}  // namespace

DsgResult dsg_gather(Network& net, const std::vector<std::vector<Payload>>& items_by_holder,
                     const std::vector<NodeId>& destinations, const Label& label) {
  const std::size_t n = net.n();
  if (items_by_holder.size() != n) throw ParameterError("dsg needs one item list per node");
  if (destinations.empty()) throw ParameterError("dsg needs at least one destination");
  DsgShared sh;
  sh.dests = destinations;
  std::sort(sh.dests.begin(), sh.dests.end());
  sh.dests.erase(std::unique(sh.dests.begin(), sh.dests.end()), sh.dests.end());
  sh.is_dest.assign(n, 0);
  sh.dest_index.assign(n, -1);
  for (std::size_t i = 0; i < sh.dests.size(); ++i) {
    if (sh.dests[i] >= n) throw ParameterError("dsg destination out of range");
    sh.is_dest[sh.dests[i]] = 1;
    sh.dest_index[sh.dests[i]] = static_cast<long>(i);
  }
  sh.coordinator = sh.dests.front();
  DsgResult res;
  res.received.assign(sh.dests.size(), {});
  sh.received = &res.received;
  for (const auto& v : items_by_holder) {
    res.k += v.size();
    for (const Payload& p : v)
      if (p.bits() + 2 + 2 * net.word_bits() > net.bandwidth_bits()) throw ParameterError("dsg item payload too large");
  }

  std::vector<std::unique_ptr<DsgProgram>> progs;
  for (NodeId v = 0; v < n; ++v) progs.push_back(std::make_unique<DsgProgram>(n, sh, items_by_holder[v]));
  StageStats st = run_programs(net, progs, label);
  res.rounds = st.rounds;
  res.messages = st.messages;
  for (const auto& got : res.received)
    if (got.size() != res.k) throw CorruptionError("dsg destination missed items");
  const std::uint64_t round_bound = 2 * ceil_div(res.k, n) + 2;
  const std::uint64_t msg_bound = (2 * res.k + 2) * sh.dests.size();
  audit_check(res.rounds <= round_bound, "dsg took " + std::to_string(res.rounds) + " rounds, bound " +
                                             std::to_string(round_bound));
  bound_audit().dsg_calls.fetch_add(1, std::memory_order_relaxed);
  audit_check(res.messages <= msg_bound, "dsg used " + std::to_string(res.messages) + " messages, bound " +
                                             std::to_string(msg_bound));
  return res;
}

// ---------------------------------------------------------------- DGS

namespace {

class DgsProgram : public NodeProgram {
 public:
  DgsProgram(std::size_t n, NodeId holder, const std::vector<NodeId>& supporters, const std::vector<Payload>& items,
             const std::vector<NodeId>& receivers, const std::vector<char>& is_receiver,
             std::vector<std::vector<Payload>>& out)
      : sched_(n), holder_(holder), supporters_(supporters), items_(items), receivers_(receivers),
        is_receiver_(is_receiver), out_(out) {}

  void on_round(RoundContext& ctx) override {
    const NodeId self = ctx.self();
    if (ctx.round() == 1 && self == holder_) {
      for (std::size_t i = 0; i < items_.size(); ++i) {
        if (supporters_[i] == self) continue;
        sched_.enqueue(Envelope{supporters_[i], items_[i]});
      }
    }
    if (ctx.round() == 2) {
      for (const Delivery& d : ctx.inbox()) fan_out(d.payload, self);
      if (self == holder_)
        for (std::size_t i = 0; i < items_.size(); ++i)
          if (supporters_[i] == self) fan_out(items_[i], self);
    } else if (ctx.round() == 3 && self != holder_) {
      for (const Delivery& d : ctx.inbox()) out_[self].push_back(d.payload);
    }
    if (ctx.round() == 1 && self == holder_ && is_receiver_[self]) {
      for (const Payload& p : items_) out_[self].push_back(p);
    }
    sched_.pump(ctx);
  }
  bool done() const override { return sched_.idle(); }

 private:
  void fan_out(const Payload& p, NodeId self) {
    for (NodeId r : receivers_) {
      if (r == self) {
        if (self != holder_) out_[self].push_back(p);
        continue;
      }
      sched_.enqueue(Envelope{r, p});
    }
  }

  LinkScheduler sched_;
  NodeId holder_;
  const std::vector<NodeId>& supporters_;
  const std::vector<Payload>& items_;
  const std::vector<NodeId>& receivers_;
  const std::vector<char>& is_receiver_;
  std::vector<std::vector<Payload>>& out_;
};

}  // namespace

DgsResult dgs_broadcast(Network& net, NodeId holder, const std::vector<Payload>& items,
                        const std::vector<NodeId>& receivers_in, const Label& label) {
  const std::size_t n = net.n();
  if (holder >= n) throw ParameterError("dgs holder out of range");
  if (items.size() > n) throw ParameterError("dgs broadcasts at most n items");
  std::vector<NodeId> receivers = receivers_in;
  std::sort(receivers.begin(), receivers.end());
  receivers.erase(std::unique(receivers.begin(), receivers.end()), receivers.end());
  std::vector<char> is_receiver(n, 0);
  for (NodeId r : receivers) {
    if (r >= n) throw ParameterError("dgs receiver out of range");
    is_receiver[r] = 1;
  }
  for (const Payload& p : items)
    if (p.bits() > net.bandwidth_bits()) throw ParameterError("dgs item larger than one message");

  // Supporters: non-receivers first, then receivers, then the holder itself.
  std::vector<NodeId> order;
  for (int pass = 0; pass < 2; ++pass)
    for (std::size_t i = 1; i < n; ++i) {
      NodeId v = static_cast<NodeId>((holder + i) % n);
      if (bool(is_receiver[v]) == bool(pass)) order.push_back(v);
    }
  order.push_back(holder);
  DgsResult res;
  res.supporters.assign(order.begin(), order.begin() + items.size());
  for (NodeId s : res.supporters) {
    res.expected_messages += (s != holder ? 1 : 0);
    res.expected_messages += receivers.size() - (is_receiver[s] ? 1 : 0);
  }
  res.received.assign(n, {});

  std::vector<std::unique_ptr<DgsProgram>> progs;
  for (NodeId v = 0; v < n; ++v)
    progs.push_back(std::make_unique<DgsProgram>(n, holder, res.supporters, items, receivers, is_receiver, res.received));
  StageStats st = run_programs(net, progs, label);
  res.rounds = items.empty() ? 0 : st.rounds;
  res.messages = st.messages;
  for (NodeId r : receivers)
    if (res.received[r].size() != items.size()) throw CorruptionError("dgs receiver missed items");
  audit_check(res.messages == res.expected_messages,
              "dgs used " + std::to_string(res.messages) + " messages, expected " + std::to_string(res.expected_messages));
  audit_check(res.rounds <= 2, "dgs took " + std::to_string(res.rounds) + " rounds");
  bound_audit().dgs_calls.fetch_add(1, std::memory_order_relaxed);
  if (res.rounds == 2 && res.messages == items.size() + items.size() * receivers.size())
    bound_audit().dgs_literal.fetch_add(1, std::memory_order_relaxed);
  return res;
}

// ---------------------------------------------------------------- gather trees

GatherTree build_gather_tree(std::vector<NodeId> component, unsigned s) {
  if (s < 2) throw ParameterError("gather tree branching must be >= 2");
  if (component.empty()) throw ParameterError("gather tree over an empty component");
  std::sort(component.begin(), component.end());
  component.erase(std::unique(component.begin(), component.end()), component.end());
  GatherTree t;
  t.members = component;
  t.branching = s;
  t.levels.push_back(component);
  while (t.levels.back().size() > 1) {
    const auto& cur = t.levels.back();
    std::vector<NodeId> next;
    for (std::size_t b = 0; b < cur.size(); b += s) {
      const NodeId rep = cur[b];
      next.push_back(rep);
      for (std::size_t i = b + 1; i < std::min(cur.size(), b + s); ++i) {
        t.parent[cur[i]] = rep;
        ++t.children[rep];
      }
    }
    t.levels.push_back(std::move(next));
  }
  return t;
}

BranchingChoice gather_branching(std::size_t n, double p) {
  const double lg = std::log2(double(n));
  const double formula = std::pow(double(n), 2.0 / 3.0) * p / std::pow(lg, 9.0);
  const unsigned cap = static_cast<unsigned>(std::ceil(std::sqrt(double(n))));
  const double s = std::max(2.0, std::min(std::floor(formula), double(cap)));
  return {static_cast<unsigned>(s), formula >= 2.0 && formula <= cap};
}

namespace {

struct SketchVectorPolicy {
  using Value = std::vector<std::vector<std::uint8_t>>;
  const std::unordered_map<NodeId, std::vector<Sketch>>* leaves;
  std::vector<Sketch> root_result;
  unsigned bandwidth;
  unsigned header;
  std::vector<NodeId> owner_of;  // instance -> node (single instance here)

  Value own(const GatherRole&, std::uint32_t) { return {}; }
  void merge(Value& acc, const Value& child) {
    if (acc.size() != child.size()) throw IncompatibleSketch("sketch vectors differ in length");
    for (std::size_t i = 0; i < acc.size(); ++i) {
      Sketch a = Sketch::deserialize(acc[i]);
      a.merge_from(Sketch::deserialize(child[i]));
      acc[i] = a.serialize();
    }
  }
  std::uint64_t fragments(const Value& v) {
    std::uint64_t f = 0;
    for (const auto& bytes : v) f += fragment_count(bytes.size() * 8, bandwidth, header);
    return std::max<std::uint64_t>(f, 1);
  }
  bool at_root(const GatherRole&, std::uint32_t, Value&& acc) {
    root_result.clear();
    for (const auto& bytes : acc) root_result.push_back(Sketch::deserialize(bytes));
    return false;
  }
};

// Per-node wrapper so own() can see which node it runs on.
struct NodeSketchPolicy {
  using Value = SketchVectorPolicy::Value;
  SketchVectorPolicy* shared;
  NodeId self;
  Value own(const GatherRole& r, std::uint32_t b) {
    (void)r;
    (void)b;
    Value v;
    for (const Sketch& s : shared->leaves->at(self)) v.push_back(s.serialize());
    return v;
  }
  void merge(Value& acc, const Value& child) { shared->merge(acc, child); }
  std::uint64_t fragments(const Value& v) { return shared->fragments(v); }
  bool at_root(const GatherRole& r, std::uint32_t b, Value&& acc) { return shared->at_root(r, b, std::move(acc)); }
};

}  // namespace

AggregateResult tree_gather_aggregate(Network& net, const GatherTree& tree,
                                      const std::unordered_map<NodeId, std::vector<Sketch>>& vectors,
                                      const Label& label) {
  const std::size_t n = net.n();
  std::size_t len = 0;
  bool first = true;
  for (NodeId v : tree.members) {
    auto it = vectors.find(v);
    if (it == vectors.end()) throw ParameterError("gather tree member without a sketch vector");
    if (first) {
      len = it->second.size();
      first = false;
    } else if (it->second.size() != len) {
      throw IncompatibleSketch("sketch vectors differ in length");
    }
  }
  SketchVectorPolicy shared;
  shared.leaves = &vectors;
  shared.bandwidth = net.bandwidth_bits();
  shared.header = net.header_bits();
  std::vector<NodeSketchPolicy> policies(n);
  std::vector<std::unique_ptr<NodeProgram>> progs(n);
  GatherLabels labels{net.intern({"tree-gather", label.step, label.depth}), net.intern(label)};
  std::vector<char> member(n, 0);
  for (NodeId v : tree.members) member[v] = 1;
  for (NodeId v = 0; v < n; ++v) {
    policies[v] = NodeSketchPolicy{&shared, v};
    // Non-members hold no role but still relay bulk pieces.
    if (!member[v]) {
      progs[v] = std::make_unique<TreeGatherProgram<NodeSketchPolicy>>(policies[v], std::vector<GatherRole>{}, labels, n);
      continue;
    }
    GatherRole role;
    role.instance = 0;
    role.is_root = v == tree.root();
    role.parent = role.is_root ? v : tree.parent.at(v);
    role.nchildren = tree.child_count(v);
    progs[v] = std::make_unique<TreeGatherProgram<NodeSketchPolicy>>(policies[v], std::vector<GatherRole>{role},
                                                                    labels, n);
  }
  AggregateResult res;
  res.stats = run_programs(net, progs, label, Network::Schedule::EventDriven);
  res.root_vector = std::move(shared.root_result);
  return res;
}

// ---------------------------------------------------------------- sorting

namespace {

class DirectProgram : public NodeProgram {
 public:
  DirectProgram(std::size_t n, std::vector<Envelope> out, std::vector<std::vector<Delivery>>& inbox)
      : sched_(n), out_(std::move(out)), inbox_(inbox) {}
  void on_round(RoundContext& ctx) override {
    if (ctx.round() == 1)
      for (auto& e : out_) sched_.enqueue(std::move(e));
    for (const Delivery& d : ctx.inbox()) inbox_[ctx.self()].push_back(d);
    sched_.pump(ctx);
  }
  bool done() const override { return sched_.idle(); }

 private:
  LinkScheduler sched_;
  std::vector<Envelope> out_;
  std::vector<std::vector<Delivery>>& inbox_;
};

// One round of point-to-point messages; returns each node's inbox.
std::vector<std::vector<Delivery>> direct_send(Network& net, std::vector<std::vector<Envelope>> out, const Label& label,
                                               StageStats& stats) {
  std::vector<std::vector<Delivery>> inbox(net.n());
  std::vector<std::unique_ptr<DirectProgram>> progs;
  for (NodeId v = 0; v < net.n(); ++v) progs.push_back(std::make_unique<DirectProgram>(net.n(), std::move(out[v]), inbox));
  StageStats st = run_programs(net, progs, label);
  stats.rounds += st.rounds;
  stats.messages += st.messages;
  return inbox;
}

struct SortKey {
  std::uint64_t key;
  std::uint64_t label;  // global label, orders (holder, local index)
  NodeId holder;
  friend bool operator<(const SortKey& a, const SortKey& b) {
    return a.key != b.key ? a.key < b.key : a.label < b.label;
  }
};

Payload encode_sort_key(const SortKey& k, unsigned w) {
  BitWriter bw;
  bw.put(k.key, 2 * w).put(k.label, 2 * w).put(k.holder, w);
  return bw.finish();
}

SortKey decode_sort_key(const Payload& p, unsigned w) {
  BitReader r(p);
  SortKey k;
  k.key = r.get(2 * w);
  k.label = r.get(2 * w);
  k.holder = static_cast<NodeId>(r.get(w));
  return k;
}

}  // namespace

SortResult distributed_sort(Network& net, const std::vector<std::vector<std::uint64_t>>& keys, double epsilon,
                            const Label& label) {
  const std::size_t n = net.n();
  const unsigned w = net.word_bits();
  if (keys.size() != n) throw ParameterError("sort needs one key list per node");
  if (!(epsilon > 0 && epsilon <= 1)) throw ParameterError("sort epsilon must lie in (0, 1]");
  SortResult res;
  for (const auto& v : keys) {
    if (v.size() > n) throw ParameterError("a node holds more than n keys");
    for (std::uint64_t k : v)
      if (2 * w < 64 && (k >> (2 * w)) != 0) throw ParameterError("sort key wider than two words");
    res.k += v.size();
  }
  const double cap = std::ceil(std::pow(double(n), 2.0 - epsilon) - 1e-9);
  if (double(res.k) > cap) throw ParameterError("sort input exceeds n^(2-eps) keys");
  res.ranks.assign(n, {});
  for (NodeId v = 0; v < n; ++v) res.ranks[v].assign(keys[v].size(), 0);
  if (res.k == 0) return res;

  const std::uint64_t before_msgs = net.transcript().messages_total;
  const std::uint64_t before_rounds = net.transcript().rounds;
  const Label own{"dsort", label.step, label.depth};
  const Label rsg_label{"rsg", label.step, label.depth};
  const Label dsg_label{"dsg", label.step, label.depth};
  const Label dgs_label{"dgs", label.step, label.depth};
  const RsgParams rp{epsilon / 2, 2.0, true};
  const std::uint64_t W = std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::floor(std::sqrt(double(res.k)))));
  res.workers = W;
  StageStats scratch;

  // Counts to v* = 0, which answers with label offsets.
  std::vector<std::vector<Payload>> counts(n);
  for (NodeId v = 0; v < n; ++v)
    if (!keys[v].empty()) {
      BitWriter bw;
      bw.put(v, w).put(keys[v].size(), 2 * w);
      counts[v].push_back(bw.finish());
    }
  DsgResult cnt = dsg_gather(net, counts, {0}, dsg_label);
  std::vector<std::uint64_t> count_at(n, 0);
  for (const Payload& p : cnt.received[0]) {
    BitReader r(p);
    NodeId v = static_cast<NodeId>(r.get(w));
    count_at[v] = r.get(2 * w);
  }
  std::vector<std::uint64_t> idx(n, 0);
  {
    std::uint64_t acc = 0;
    std::vector<std::vector<Envelope>> out(n);
    for (NodeId v = 0; v < n; ++v) {
      idx[v] = acc;
      acc += count_at[v];
      if (count_at[v] && v != 0) {
        BitWriter bw;
        bw.put(idx[v], 2 * w);
        out[0].push_back(Envelope{v, bw.finish()});
      }
    }
    auto inbox = direct_send(net, std::move(out), own, scratch);
    for (NodeId v = 1; v < n; ++v)
      for (const Delivery& d : inbox[v]) idx[v] = BitReader(d.payload).get(2 * w);
  }

  // Redistribute: label i goes to worker i mod W.
  std::vector<RsgItem> items;
  for (NodeId v = 0; v < n; ++v)
    for (std::size_t j = 0; j < keys[v].size(); ++j) {
      SortKey sk{keys[v][j], idx[v] + j, v};
      items.push_back({v, static_cast<NodeId>(sk.label % W), encode_sort_key(sk, w)});
    }
  RsgResult spread = rsg_route_batched(net, std::move(items), rp, rsg_label);
  res.rsg_budget_failures += spread.within_budget ? 0 : 1;
  std::vector<std::vector<SortKey>> at_worker(W);
  for (NodeId v = 0; v < W; ++v)
    for (const auto& d : spread.delivered[v]) at_worker[v].push_back(decode_sort_key(d.payload, w));

  // Splitters from a log-rate sample at worker 0.
  const std::size_t per_worker = std::max(1u, ceil_log2(n));
  std::vector<std::vector<Payload>> samples(n);
  for (NodeId v = 0; v < W; ++v) {
    auto& ks = at_worker[v];
    std::sort(ks.begin(), ks.end());
    const std::size_t take = std::min(per_worker, ks.size());
    for (std::size_t t = 0; t < take; ++t) samples[v].push_back(encode_sort_key(ks[(t * ks.size()) / take], w));
  }
  DsgResult sampled = dsg_gather(net, samples, {0}, dsg_label);
  std::vector<SortKey> pool;
  for (const Payload& p : sampled.received[0]) pool.push_back(decode_sort_key(p, w));
  std::sort(pool.begin(), pool.end());
  std::vector<Payload> split_msgs;
  for (std::uint64_t j = 1; j < W && !pool.empty(); ++j) split_msgs.push_back(encode_sort_key(pool[(j * pool.size()) / W], w));
  std::vector<NodeId> workers(W);
  std::iota(workers.begin(), workers.end(), 0u);
  DgsResult split = dgs_broadcast(net, 0, split_msgs, workers, dgs_label);

  // Route to bucket owners.
  items.clear();
  for (NodeId v = 0; v < W; ++v) {
    std::vector<SortKey> splitters;
    for (const Payload& p : split.received[v]) splitters.push_back(decode_sort_key(p, w));
    std::sort(splitters.begin(), splitters.end());
    for (const SortKey& sk : at_worker[v]) {
      const auto b = std::upper_bound(splitters.begin(), splitters.end(), sk) - splitters.begin();
      items.push_back({v, static_cast<NodeId>(b), encode_sort_key(sk, w)});
    }
  }
  RsgResult bucketed = rsg_route_batched(net, std::move(items), rp, rsg_label);
  res.rsg_budget_failures += bucketed.within_budget ? 0 : 1;
  std::vector<std::vector<SortKey>> bucket(W);
  for (NodeId v = 0; v < W; ++v) {
    for (const auto& d : bucketed.delivered[v]) bucket[v].push_back(decode_sort_key(d.payload, w));
    std::sort(bucket[v].begin(), bucket[v].end());
  }

  // Prefix counts of bucket sizes through worker 0.
  std::vector<std::vector<Payload>> bsize(n);
  for (NodeId v = 0; v < W; ++v) {
    BitWriter bw;
    bw.put(v, w).put(bucket[v].size(), 2 * w);
    bsize[v].push_back(bw.finish());
  }
  DsgResult sizes = dsg_gather(net, bsize, {0}, dsg_label);
  std::vector<std::uint64_t> bucket_count(W, 0), bucket_offset(W, 0);
  for (const Payload& p : sizes.received[0]) {
    BitReader r(p);
    NodeId v = static_cast<NodeId>(r.get(w));
    bucket_count[v] = r.get(2 * w);
  }
  {
    std::uint64_t acc = 0;
    std::vector<std::vector<Envelope>> out(n);
    for (NodeId v = 0; v < W; ++v) {
      bucket_offset[v] = acc;
      acc += bucket_count[v];
      if (v != 0) {
        BitWriter bw;
        bw.put(bucket_offset[v], 2 * w);
        out[0].push_back(Envelope{v, bw.finish()});
      }
    }
    auto inbox = direct_send(net, std::move(out), own, scratch);
    for (NodeId v = 1; v < W; ++v)
      for (const Delivery& d : inbox[v]) bucket_offset[v] = BitReader(d.payload).get(2 * w);
  }

  // Ranks back to the holders.
  items.clear();
  for (NodeId v = 0; v < W; ++v)
    for (std::size_t pos = 0; pos < bucket[v].size(); ++pos) {
      const SortKey& sk = bucket[v][pos];
      BitWriter bw;
      bw.put(sk.label, 2 * w).put(bucket_offset[v] + pos, 2 * w);
      items.push_back({v, sk.holder, bw.finish()});
    }
  RsgResult back = rsg_route_batched(net, std::move(items), rp, rsg_label);
  res.rsg_budget_failures += back.within_budget ? 0 : 1;
  for (NodeId v = 0; v < n; ++v)
    for (const auto& d : back.delivered[v]) {
      BitReader r(d.payload);
      const std::uint64_t lab = r.get(2 * w), rank = r.get(2 * w);
      const std::uint64_t local = lab - idx[v];
      if (local >= keys[v].size()) throw CorruptionError("rank returned for a label this node does not hold");
      res.ranks[v][local] = rank;
    }

  res.messages = net.transcript().messages_total - before_msgs;
  res.rounds = net.transcript().rounds - before_rounds;
  return res;
}

}  // namespace ccmst
