#include "ccmst/boruvka.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>

#include "ccmst/protocols.hpp"

namespace ccmst {

namespace {

constexpr unsigned kSubRounds = 5;

struct Common {
  unsigned weight_bits = 1;
  bool finished = false;
  std::uint64_t merge_phases = 0;
  std::vector<std::size_t> components_after;
};

void put_key(BitWriter& w, const WeightKey& k, unsigned wb, unsigned word) {
  w.put(k.w, wb).put(k.lo, word).put(k.hi, word);
}

WeightKey get_key(BitReader& r, unsigned wb, unsigned word) {
  WeightKey k;
  k.w = r.get(wb);
  k.lo = static_cast<NodeId>(r.get(word));
  k.hi = static_cast<NodeId>(r.get(word));
  return k;
}

class LmMstProgram : public NodeProgram {
 public:
  LmMstProgram(NodeId self, const WeightedGraph& g, Common& common, std::size_t n)
      : self_(self), label_(self), common_(common) {
    for (const Incident& inc : g.incident(self)) nbrs_.push_back({inc.nbr, g.edges()[inc.edge].key, inc.nbr});
    std::sort(nbrs_.begin(), nbrs_.end(), [](const Nbr& a, const Nbr& b) { return a.key < b.key; });
    members_.push_back(self);
    if (self == 0) {
      dsu_.resize(n);
      std::iota(dsu_.begin(), dsu_.end(), 0u);
      components_ = n;
    }
  }

  void on_round(RoundContext& ctx) override {
    switch ((ctx.round() - 1) % kSubRounds) {
      case 0: candidates(ctx); break;
      case 1: choose(ctx); break;
      case 2: merge(ctx); break;
      case 3: relabel(ctx); break;
      case 4: notify(ctx); break;
    }
  }

  bool done() const override { return self_ != 0 || common_.finished; }

  // Neighbours across edges this node added to the forest.
  const std::vector<NodeId>& chosen() const { return chosen_; }

 private:
  struct Nbr {
    NodeId id;
    WeightKey key;
    NodeId label;
  };
  struct Cand {
    WeightKey key;
    NodeId target;
    NodeId member;
  };

  Nbr* find_nbr(NodeId id) {
    for (Nbr& x : nbrs_)
      if (x.id == id) return &x;
    throw CorruptionError("message from a node that is not a neighbour");
  }

  void candidates(RoundContext& ctx) {
    const unsigned w = ctx.word();
    for (const Delivery& d : ctx.inbox()) {
      BitReader r(d.payload);
      const bool is_nbr = r.get_flag(), selected = r.get_flag(), join = r.get_flag();
      const NodeId lab = static_cast<NodeId>(r.get(w));
      if (is_nbr) find_nbr(d.src)->label = lab;
      if (selected) chosen_.push_back(d.src);
      if (join) members_.push_back(d.src);
    }
    own_.reset();
    for (const Nbr& x : nbrs_) {
      if (x.label == label_) continue;
      if (label_ == self_) {
        own_ = Cand{x.key, x.label, self_};
      } else {
        BitWriter bw;
        put_key(bw, x.key, common_.weight_bits, w);
        bw.put(x.label, w);
        ctx.send(Envelope{label_, bw.finish()});
      }
      my_candidate_ = x.id;
      return;
    }
    my_candidate_.reset();
  }

  void choose(RoundContext& ctx) {
    const unsigned w = ctx.word();
    best_ = own_;
    for (const Delivery& d : ctx.inbox()) {
      BitReader r(d.payload);
      Cand c;
      c.key = get_key(r, common_.weight_bits, w);
      c.target = static_cast<NodeId>(r.get(w));
      c.member = d.src;
      if (!best_ || c.key < best_->key) best_ = c;
    }
    if (!best_) return;
    if (self_ == 0) {
      pointers_.push_back({0, best_->target});
    } else {
      BitWriter bw;
      bw.put(best_->target, w);
      put_key(bw, best_->key, common_.weight_bits, w);
      ctx.send(Envelope{0, bw.finish()});
    }
  }

  NodeId find(NodeId x) {
    while (dsu_[x] != x) x = dsu_[x] = dsu_[dsu_[x]];
    return x;
  }

  void merge(RoundContext& ctx) {
    reply_.reset();
    if (self_ != 0) return;
    const unsigned w = ctx.word();
    for (const Delivery& d : ctx.inbox()) {
      BitReader r(d.payload);
      pointers_.push_back({d.src, static_cast<NodeId>(r.get(w))});
    }
    if (pointers_.empty()) {
      common_.finished = true;
      return;
    }
    // Roots are always the smallest id, so the root is the new label.
    for (auto [from, to] : pointers_) {
      NodeId a = find(from), b = find(to);
      if (a == b) continue;
      if (b < a) std::swap(a, b);
      dsu_[b] = a;
      --components_;
    }
    ++common_.merge_phases;
    common_.components_after.push_back(components_);
    for (auto [from, to] : pointers_) {
      const NodeId nl = find(from);
      if (from == 0) {
        reply_ = nl;
        continue;
      }
      BitWriter bw;
      bw.put(nl, w);
      ctx.send(Envelope{from, bw.finish()});
    }
    pointers_.clear();
  }

  void relabel(RoundContext& ctx) {
    const unsigned w = ctx.word();
    std::optional<NodeId> nl = reply_;
    for (const Delivery& d : ctx.inbox()) nl = static_cast<NodeId>(BitReader(d.payload).get(w));
    update_.reset();
    if (!nl) return;
    for (NodeId m : members_) {
      const bool selected = best_ && best_->member == m;
      if (*nl == label_ && !selected) continue;
      if (m == self_) {
        update_ = {*nl, selected};
        continue;
      }
      BitWriter bw;
      bw.put_flag(selected).put(*nl, w);
      ctx.send(Envelope{m, bw.finish()});
    }
    if (*nl != label_) members_.clear();
  }

  void notify(RoundContext& ctx) {
    const unsigned w = ctx.word();
    std::optional<std::pair<NodeId, bool>> up = update_;
    for (const Delivery& d : ctx.inbox()) {
      BitReader r(d.payload);
      const bool selected = r.get_flag();
      up = {static_cast<NodeId>(r.get(w)), selected};
    }
    if (!up) return;
    const auto [nl, selected] = *up;
    struct Flags {
      bool nbr = false, selected = false, join = false;
    };
    std::map<NodeId, Flags> out;
    if (selected) {
      if (!my_candidate_) throw CorruptionError("selected a node without a candidate edge");
      chosen_.push_back(*my_candidate_);
      out[*my_candidate_].selected = true;
      out[*my_candidate_].nbr = true;
    }
    if (nl != label_) {
      for (const Nbr& x : nbrs_)
        if (x.label != label_) out[x.id].nbr = true;
      if (nl != self_) out[nl].join = true;
    }
    for (const auto& [dst, f] : out) {
      BitWriter bw;
      bw.put_flag(f.nbr).put_flag(f.selected).put_flag(f.join).put(nl, w);
      ctx.send(Envelope{dst, bw.finish()});
    }
    // The whole old component moves to the new label together.
    if (nl != label_)
      for (Nbr& x : nbrs_)
        if (x.label == label_) x.label = nl;
    label_ = nl;
  }

  NodeId self_;
  NodeId label_;
  Common& common_;
  std::vector<Nbr> nbrs_;
  std::vector<NodeId> members_;  // meaningful at leaders
  std::vector<NodeId> chosen_;
  std::optional<NodeId> my_candidate_;
  std::optional<Cand> own_, best_;
  std::optional<NodeId> reply_;
  std::optional<std::pair<NodeId, bool>> update_;
  // Node 0 only.
  std::vector<NodeId> dsu_;
  std::vector<std::pair<NodeId, NodeId>> pointers_;
  std::size_t components_ = 0;
};

}  // namespace

LmMstResult linear_messages_mst(Network& net, const WeightedGraph& g, const std::string& step, unsigned depth) {
  const std::size_t n = net.n();
  if (g.n() != n) throw ParameterError("graph size differs from the network size");
  Common common;
  common.weight_bits = bits_for(g.max_weight());
  if (common.weight_bits + 3 * net.word_bits() + 3 > net.bandwidth_bits())
    throw ParameterError("edge weights too wide for one message");
  std::vector<std::unique_ptr<LmMstProgram>> progs;
  for (NodeId v = 0; v < n; ++v) progs.push_back(std::make_unique<LmMstProgram>(v, g, common, n));
  StageStats st = run_programs(net, progs, Label{"lm-mst", step, depth});

  std::vector<Edge> out;
  for (NodeId v = 0; v < n; ++v)
    for (NodeId u : progs[v]->chosen()) {
      const long e = g.find_edge(v, u);
      if (e < 0) throw CorruptionError("forest edge missing from the input graph");
      out.push_back(g.edges()[e]);
    }
  sort_edges(out);
  out.erase(std::unique(out.begin(), out.end()), out.end());

  LmMstResult res;
  res.forest = Forest(WeightedGraph(n, std::move(out)));
  res.phases = common.merge_phases;
  res.rounds = st.rounds;
  res.messages = st.messages;
  res.components_after_phase = std::move(common.components_after);
  return res;
}

}  // namespace ccmst
