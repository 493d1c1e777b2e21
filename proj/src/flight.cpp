#include "ccmst/flight.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

namespace ccmst {

std::vector<NodeId> select_commanders(std::size_t n) {
  if (n < 2) throw ParameterError("commanders need n >= 2");
  std::vector<NodeId> c(std::max(1u, ceil_log2(n)));
  std::iota(c.begin(), c.end(), 0u);
  return c;
}

PhasePlan simulate_boruvka_locally(std::size_t n, std::span<const Edge> f_edges) {
  PhasePlan plan;
  std::vector<NodeId> label(n);
  std::iota(label.begin(), label.end(), 0u);
  std::vector<char> reported_bottom(n, 0);  // by label; a component without F-edges never changes
  while (true) {
    std::map<NodeId, PhaseComponent> comps;
    for (NodeId v = 0; v < n; ++v) {
      auto& c = comps[label[v]];
      c.label = label[v];
      c.members.push_back(v);
    }
    for (const Edge& e : f_edges) {
      if (label[e.u] == label[e.v]) continue;
      for (NodeId l : {label[e.u], label[e.v]}) {
        auto& c = comps[l];
        if (e.key < c.mwoe) {
          c.mwoe = e.key;
          c.edge = e;
        }
      }
    }
    bool any_active = false, any_edge = false;
    std::vector<PhaseComponent> list;
    for (auto& [l, c] : comps) {
      if (c.edge) {
        c.active = true;
        any_edge = true;
      } else if (!reported_bottom[l] && c.members.size() < n) {
        c.active = true;
        reported_bottom[l] = 1;
      }
      any_active = any_active || c.active;
      list.push_back(std::move(c));
    }
    if (!any_active) break;
    plan.label_of.push_back(label);
    plan.components.push_back(std::move(list));
    if (!any_edge) break;

    std::vector<NodeId> dsu(n);
    std::iota(dsu.begin(), dsu.end(), 0u);
    auto find = [&](NodeId x) {
      while (dsu[x] != x) x = dsu[x] = dsu[dsu[x]];
      return x;
    };
    for (const PhaseComponent& c : plan.components.back()) {
      if (!c.edge) continue;
      NodeId a = find(label[c.edge->u]), b = find(label[c.edge->v]);
      if (a == b) continue;
      if (b < a) std::swap(a, b);
      dsu[b] = a;
    }
    for (NodeId v = 0; v < n; ++v) label[v] = find(label[v]);
  }
  plan.final_label_of = label;
  return plan;
}

ForestGather gather_forest(Network& net, const Forest& f, const std::vector<NodeId>& commanders, unsigned depth,
                           unsigned weight_bits) {
  const std::size_t n = net.n();
  const unsigned w = net.word_bits();
  std::vector<std::vector<Payload>> items(n);
  for (const Edge& e : f.edges()) {
    BitWriter bw;
    bw.put(e.u, w).put(e.v, w).put(e.key.w, weight_bits);
    items[e.u].push_back(bw.finish());
  }
  DsgResult r = dsg_gather(net, items, commanders, Label{"dsg", "flight.1", depth});
  ForestGather out;
  out.rounds = r.rounds;
  out.messages = r.messages;
  std::vector<NodeId> dests = commanders;
  std::sort(dests.begin(), dests.end());
  out.at_commander.resize(dests.size());
  for (std::size_t i = 0; i < dests.size(); ++i) {
    for (const Payload& p : r.received[i]) {
      BitReader br(p);
      Edge e;
      e.u = static_cast<NodeId>(br.get(w));
      e.v = static_cast<NodeId>(br.get(w));
      e.key = WeightKey{br.get(weight_bits), e.u, e.v, false};
      out.at_commander[i].push_back(e);
    }
    sort_edges(out.at_commander[i]);
  }
  return out;
}

std::vector<std::vector<std::vector<Edge>>> brute_force_lij(const WeightedGraph& g, const PhasePlan& plan) {
  std::vector<std::vector<std::vector<Edge>>> out(plan.phases());
  for (std::size_t i = 0; i < plan.phases(); ++i) {
    const auto& comps = plan.components[i];
    const auto& label = plan.label_of[i];
    std::map<NodeId, std::size_t> index;
    for (std::size_t j = 0; j < comps.size(); ++j) index[comps[j].label] = j;
    out[i].resize(comps.size());
    for (const Edge& e : g.edges()) {
      if (label[e.u] == label[e.v]) continue;
      for (NodeId l : {label[e.u], label[e.v]}) {
        const std::size_t j = index.at(l);
        if (comps[j].active && !(comps[j].mwoe < e.key)) out[i][j].push_back(e);
      }
    }
  }
  return out;
}

std::uint64_t flight_beta(std::size_t n, double p, const FlightConfig& cfg) {
  if (!(p > 0 && p <= 1)) throw ParameterError("flight needs p in (0, 1]");
  const double lg = std::max(1u, ceil_log2(n));
  if (cfg.theory_beta) return static_cast<std::uint64_t>(std::ceil(std::pow(std::log2(double(n)), 5.0) / p));
  const double inv = std::ceil(1.0 / p - 1e-9);
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(cfg.kappa * lg * inv)));
}

namespace {

struct Tuple {
  NodeId label = 0;
  WeightKey mwoe = WeightKey::infinity();
  NodeId parent = 0;
  std::uint32_t nchildren = 0;
};

// Per node: phase -> tuple.
using TupleTable = std::vector<std::map<std::uint32_t, Tuple>>;

class TupleProgram : public NodeProgram {
 public:
  TupleProgram(std::size_t n, std::vector<Envelope> out) : sched_(n), out_(std::move(out)) {}
  void on_round(RoundContext& ctx) override {
    if (ctx.round() == 1)
      for (auto& e : out_) sched_.enqueue(std::move(e));
    for (const Delivery& d : ctx.inbox()) inbox.push_back(d);
    sched_.pump(ctx);
  }
  bool done() const override { return sched_.idle(); }
  std::vector<Delivery> inbox;

 private:
  LinkScheduler sched_;
  std::vector<Envelope> out_;
};

struct InstanceLog {
  std::uint32_t phase = 0;
  NodeId label = 0;
  std::set<std::pair<NodeId, NodeId>> found;
  std::uint64_t trailing = 0;  // samples since the last new edge
  std::uint64_t batches = 0;
  std::uint64_t samples = 0;
  std::uint64_t failures = 0;
  bool capped = false;
};

struct FlightShared {
  const WeightedGraph* g = nullptr;
  const TupleTable* tuples = nullptr;
  SketchParams params;
  const SharedSeed* seed = nullptr;
  std::uint64_t beta = 0;
  std::uint64_t sketch_fragments = 0;
  unsigned depth = 0;
  unsigned max_batches = 0;
  std::size_t n = 0;
  std::map<std::uint32_t, InstanceLog> logs;

  std::uint32_t phase_of(std::uint32_t instance) const { return instance / static_cast<std::uint32_t>(n); }
  std::uint64_t tag(std::uint32_t phase, NodeId label, std::uint64_t t) const {
    return make_tag(TagPurpose::Sketch, depth, phase, label, t);
  }
  const Tuple& tuple(NodeId v, std::uint32_t phase) const { return (*tuples)[v].at(phase); }

  void restricted_incidence(NodeId v, const WeightKey& threshold, std::vector<SparseEntry>& out) const {
    for (const Incident& inc : g->incident(v)) {
      const WeightKey& k = g->edges()[inc.edge].key;
      if (threshold < k) continue;
      out.push_back({std::uint64_t(std::min(v, inc.nbr)) * n + std::max(v, inc.nbr), v < inc.nbr ? 1 : -1});
    }
  }

  void record(InstanceLog& log, const SampleResult& s) {
    ++log.samples;
    if (s.kind == SampleResult::Kind::Failure) ++log.failures;
    if (s.is_edge()) {
      if (g->find_edge(s.u, s.v) < 0) throw CorruptionError("sketch decoded an edge that is not in the graph");
      if (log.found.insert({s.u, s.v}).second) {
        log.trailing = 0;
        return;
      }
    }
    ++log.trailing;
  }

  // True when the root should ask for another batch.
  bool finish_batch(InstanceLog& log) {
    ++log.batches;
    const double d = double(log.found.size());
    const std::uint64_t window = std::max<std::uint64_t>(
        ceil_div(beta, 4), static_cast<std::uint64_t>(std::ceil(3.0 * (d + 1.0) * std::log(double(n)))));
    if (log.trailing >= window) return false;
    if (log.batches >= max_batches) {
      log.capped = true;
      return false;
    }
    return true;
  }

  InstanceLog& log_for(const GatherRole& role) {
    InstanceLog& log = logs[role.instance];
    log.phase = phase_of(role.instance);
    log.label = role.instance % static_cast<std::uint32_t>(n);
    return log;
  }
};

struct LinearPolicy {
  using Value = std::vector<NodeId>;
  FlightShared* sh = nullptr;
  NodeId self = 0;

  Value own(const GatherRole&, std::uint32_t) { return {self}; }
  void merge(Value& acc, const Value& child) { acc.insert(acc.end(), child.begin(), child.end()); }
  std::uint64_t fragments(const Value&) { return sh->beta * sh->sketch_fragments; }
  bool at_root(const GatherRole& role, std::uint32_t batch, Value&& members) {
    InstanceLog& log = sh->log_for(role);
    const Tuple& t = sh->tuple(self, log.phase);
    // By linearity, the merged sketches equal sketches of the summed
    // restricted incidence vectors of the members.
    std::vector<SparseEntry> vec;
    for (NodeId v : members) sh->restricted_incidence(v, t.mwoe, vec);
    const std::vector<SparseEntry> sum = canonical_vector(vec);
    for (std::uint64_t k = 0; k < sh->beta; ++k) {
      const std::uint64_t tag = sh->tag(log.phase, log.label, std::uint64_t(batch) * sh->beta + k);
      sh->record(log, sample_canonical(*sh->seed, sh->params, tag, sum));
    }
    return sh->finish_batch(log);
  }
};

struct ExactPolicy {
  using Value = std::vector<std::vector<std::uint8_t>>;
  FlightShared* sh = nullptr;
  NodeId self = 0;

  Value own(const GatherRole& role, std::uint32_t batch) {
    const std::uint32_t phase = sh->phase_of(role.instance);
    const Tuple& t = sh->tuple(self, phase);
    std::vector<SparseEntry> vec;
    sh->restricted_incidence(self, t.mwoe, vec);
    Value out;
    out.reserve(sh->beta);
    for (std::uint64_t k = 0; k < sh->beta; ++k) {
      SketchFamilies fam(*sh->seed, sh->params, sh->tag(phase, t.label, std::uint64_t(batch) * sh->beta + k));
      out.push_back(build_sketch(fam, vec).serialize());
    }
    return out;
  }
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
    return f;
  }
  bool at_root(const GatherRole& role, std::uint32_t batch, Value&& acc) {
    InstanceLog& log = sh->log_for(role);
    for (std::uint64_t k = 0; k < acc.size(); ++k) {
      SketchFamilies fam(*sh->seed, sh->params, sh->tag(log.phase, log.label, std::uint64_t(batch) * sh->beta + k));
      sh->record(log, sample(Sketch::deserialize(acc[k]), fam));
    }
    return sh->finish_batch(log);
  }

  unsigned bandwidth = 0;
  unsigned header = 0;
};

template <class Policy>
StageStats run_gather(Network& net, FlightShared& sh, const TupleTable& tuples, const Label& label,
                      const std::function<void(Policy&)>& setup) {
  const std::size_t n = net.n();
  std::vector<Policy> policies(n);
  std::vector<std::unique_ptr<TreeGatherProgram<Policy>>> progs;
  GatherLabels labels{net.intern(Label{"tree-gather", label.step, label.depth}), net.intern(label)};
  for (NodeId v = 0; v < n; ++v) {
    policies[v].sh = &sh;
    policies[v].self = v;
    setup(policies[v]);
    std::vector<GatherRole> roles;
    for (const auto& [phase, t] : tuples[v]) {
      GatherRole r;
      r.instance = phase * static_cast<std::uint32_t>(n) + t.label;
      r.is_root = t.label == v;
      r.parent = t.parent;
      r.nchildren = t.nchildren;
      roles.push_back(r);
    }
    progs.push_back(std::make_unique<TreeGatherProgram<Policy>>(policies[v], std::move(roles), labels, n));
  }
  return run_programs(net, progs, label, Network::Schedule::EventDriven);
}

struct Notice {
  std::uint32_t phase;
  NodeId label;
  NodeId u, v;
  friend auto operator<=>(const Notice&, const Notice&) = default;
};

class NotifyProgram : public NodeProgram {
 public:
  NotifyProgram(std::size_t n, std::vector<Envelope> out, std::vector<Payload> local)
      : sched_(n), out_(std::move(out)), local_(std::move(local)) {}
  void on_round(RoundContext& ctx) override {
    if (ctx.round() == 1) {
      for (auto& e : out_) sched_.enqueue(std::move(e));
      for (auto& p : local_) inbox.push_back(std::move(p));
    }
    for (const Delivery& d : ctx.inbox()) inbox.push_back(d.payload);
    sched_.pump(ctx);
  }
  bool done() const override { return sched_.idle(); }
  std::vector<Payload> inbox;

 private:
  LinkScheduler sched_;
  std::vector<Envelope> out_;
  std::vector<Payload> local_;
};

}  // namespace

FlightResult compute_f_light(Network& net, const WeightedGraph& g, const Forest& f, double p,
                             const SharedSeed& sketch_seed, const FlightConfig& cfg) {
  const std::size_t n = net.n();
  const unsigned w = net.word_bits();
  if (g.n() != n || f.n() != n) throw ParameterError("graph size differs from the network size");
  for (const Edge& e : f.edges()) {
    const long id = g.find_edge(e.u, e.v);
    if (id < 0 || !(g.edges()[id].key == e.key)) throw ParameterError("forest edge is not an edge of the graph");
  }
  const unsigned wb = bits_for(g.max_weight());
  if (5 * w + wb + 2 > net.bandwidth_bits()) throw ParameterError("edge weights too wide for a phase tuple");

  FlightResult res;
  res.forest = f.edges();
  res.depth = cfg.depth;
  const std::uint64_t msgs0 = net.transcript().messages_total, rounds0 = net.transcript().rounds;
  res.beta = flight_beta(n, p, cfg);
  const BranchingChoice bc = gather_branching(n, p);
  res.branching = cfg.branching ? cfg.branching : bc.s;
  res.paper_branching = cfg.branching ? false : bc.paper_regime;

  // Step 1: every commander learns F.
  const std::vector<NodeId> commanders = select_commanders(n);
  ForestGather fg = gather_forest(net, f, commanders, cfg.depth, wb);
  for (const auto& edges : fg.at_commander)
    if (!same_edge_set(edges, f.edges())) throw CorruptionError("commander holds the wrong forest");

  // Step 2: each commander plans Boruvka on F; all plans agree.
  std::vector<PhasePlan> plans;
  for (const auto& edges : fg.at_commander) plans.push_back(simulate_boruvka_locally(n, edges));
  for (const auto& pl : plans)
    if (!(pl == plans.front())) throw CorruptionError("commanders disagree on the phase plan");
  res.plan = std::move(plans.front());
  const PhasePlan& plan = res.plan;

  // Step 3: commander (i mod c) sends the phase-i tuple to every member of an
  // active component. The receiver knows i mod c from the sender; one bit
  // carries i div c.
  const unsigned c = static_cast<unsigned>(commanders.size());
  if (plan.phases() > 2 * c) throw CorruptionError("more phases than the commanders can cover");
  TupleTable tuples(n);
  {
    std::vector<std::vector<Envelope>> out(n);
    std::vector<std::vector<std::pair<std::uint32_t, Tuple>>> local(n);
    for (std::uint32_t i = 0; i < plan.phases(); ++i) {
      const NodeId cmd = commanders[i % c];
      for (const PhaseComponent& comp : plan.components[i]) {
        if (!comp.active) continue;
        const GatherTree tree = build_gather_tree(comp.members, res.branching);
        for (NodeId v : comp.members) {
          Tuple t;
          t.label = comp.label;
          t.mwoe = comp.mwoe;
          t.parent = v == tree.root() ? v : tree.parent.at(v);
          t.nchildren = tree.child_count(v);
          if (v == cmd) {
            local[v].push_back({i, t});
            continue;
          }
          BitWriter bw;
          bw.put_flag(i >= c).put(t.label, w).put_flag(t.mwoe.inf);
          bw.put(t.mwoe.w, wb).put(t.mwoe.lo, w).put(t.mwoe.hi, w);
          bw.put(t.parent, w).put(t.nchildren, w);
          out[cmd].push_back(Envelope{v, bw.finish()});
        }
      }
    }
    std::vector<std::unique_ptr<TupleProgram>> progs;
    for (NodeId v = 0; v < n; ++v) progs.push_back(std::make_unique<TupleProgram>(n, std::move(out[v])));
    run_programs(net, progs, Label{"flight", "flight.3", cfg.depth});
    for (NodeId v = 0; v < n; ++v) {
      for (auto& [i, t] : local[v]) tuples[v][i] = t;
      for (const Delivery& d : progs[v]->inbox) {
        BitReader br(d.payload);
        const auto i = static_cast<std::uint32_t>(d.src + (br.get_flag() ? c : 0));
        Tuple t;
        t.label = static_cast<NodeId>(br.get(w));
        const bool inf = br.get_flag();
        t.mwoe.w = br.get(wb);
        t.mwoe.lo = static_cast<NodeId>(br.get(w));
        t.mwoe.hi = static_cast<NodeId>(br.get(w));
        t.mwoe.inf = inf;
        if (inf) t.mwoe = WeightKey::infinity();
        t.parent = static_cast<NodeId>(br.get(w));
        t.nchildren = static_cast<std::uint32_t>(br.get(w));
        tuples[v][i] = t;
      }
    }
  }

  // Step 4 is local: the restricted sketches are built where step 5 needs them.
  // Step 5: gather sketches up each component's tree and sample at the root.
  FlightShared sh;
  sh.g = &g;
  sh.tuples = &tuples;
  sh.params = SketchParams::defaults(n);
  if (sketch_seed.bits() < sh.params.required_seed_bits()) throw ParameterError("sketch seed too short");
  sh.seed = &sketch_seed;
  sh.beta = res.beta;
  sh.sketch_fragments = fragment_count(sh.params.serialized_bits(), net.bandwidth_bits(), net.header_bits());
  sh.depth = cfg.depth;
  sh.max_batches = std::max(1u, cfg.max_batches);
  sh.n = n;
  const Label gather_label{"flight", cfg.step + ".5", cfg.depth};
  if (cfg.mode == GatherMode::Linear) {
    run_gather<LinearPolicy>(net, sh, tuples, gather_label, [](LinearPolicy&) {});
  } else {
    const unsigned bw = net.bandwidth_bits(), hb = net.header_bits();
    run_gather<ExactPolicy>(net, sh, tuples, gather_label, [&](ExactPolicy& pol) {
      pol.bandwidth = bw;
      pol.header = hb;
    });
  }

  // Step 6: roots notify both endpoints of every distinct sampled edge.
  res.lhat_sizes.resize(plan.phases());
  for (std::size_t i = 0; i < plan.phases(); ++i) res.lhat_sizes[i].assign(plan.components[i].size(), 0);
  std::vector<std::vector<Envelope>> out(n);
  std::vector<std::vector<Payload>> local(n);
  for (const auto& [instance, log] : sh.logs) {
    res.samples += log.samples;
    res.sample_failures += log.failures;
    res.capped_instances += log.capped ? 1 : 0;
    res.batches += log.batches;
    res.max_lhat = std::max(res.max_lhat, log.found.size());
    const auto& comps = plan.components[log.phase];
    for (std::size_t j = 0; j < comps.size(); ++j)
      if (comps[j].label == log.label) res.lhat_sizes[log.phase][j] = log.found.size();
    for (const auto& [a, b] : log.found) {
      for (auto [end, other] : {std::pair{a, b}, std::pair{b, a}}) {
        BitWriter bw;
        bw.put(log.phase, w).put(log.label, w).put(other, w);
        if (end == log.label) {
          local[end].push_back(bw.finish());
        } else {
          out[log.label].push_back(Envelope{end, bw.finish()});
        }
      }
    }
  }
  std::vector<std::unique_ptr<NotifyProgram>> nprogs;
  for (NodeId v = 0; v < n; ++v) nprogs.push_back(std::make_unique<NotifyProgram>(n, std::move(out[v]), std::move(local[v])));
  run_programs(net, nprogs, Label{"flight", cfg.step + ".6", cfg.depth});

  // Endpoints check what they can see locally; each notice needs exactly one
  // endpoint inside the component.
  std::map<Notice, int> inside, seen;
  std::vector<Edge> light(f.edges().begin(), f.edges().end());
  for (NodeId x = 0; x < n; ++x) {
    for (const Payload& pl : nprogs[x]->inbox) {
      BitReader br(pl);
      const auto i = static_cast<std::uint32_t>(br.get(w));
      const NodeId lab = static_cast<NodeId>(br.get(w));
      const NodeId y = static_cast<NodeId>(br.get(w));
      const long id = g.find_edge(x, y);
      if (id < 0) throw CorruptionError("notified edge is not incident to the endpoint");
      const Edge& e = g.edges()[id];
      const Notice key{i, lab, e.u, e.v};
      ++seen[key];
      auto it = tuples[x].find(i);
      if (it != tuples[x].end() && it->second.label == lab) {
        if (it->second.mwoe < e.key) throw CorruptionError("sampled edge is heavier than the component's MWOE");
        ++inside[key];
      }
      if (x == e.u) light.push_back(e);
    }
  }
  for (const auto& [key, count] : seen)
    if (count != 2 || inside[key] != 1) throw CorruptionError("sampled edge does not leave its component");
  sort_edges(light);
  light.erase(std::unique(light.begin(), light.end()), light.end());
  res.light = std::move(light);
  res.messages = net.transcript().messages_total - msgs0;
  res.rounds = net.transcript().rounds - rounds0;
  return res;
}

std::string phase_plan_json(const PhasePlan& plan, const FlightResult* result) {
  nlohmann::json j;
  j["phases"] = nlohmann::json::array();
  for (std::size_t i = 0; i < plan.phases(); ++i) {
    nlohmann::json ph = nlohmann::json::array();
    for (std::size_t c = 0; c < plan.components[i].size(); ++c) {
      const PhaseComponent& comp = plan.components[i][c];
      nlohmann::json jc;
      jc["label"] = comp.label;
      jc["size"] = comp.members.size();
      jc["active"] = comp.active;
      jc["mwoe"] = to_string(comp.mwoe);
      if (result && i < result->lhat_sizes.size()) jc["lhat"] = result->lhat_sizes[i][c];
      ph.push_back(jc);
    }
    j["phases"].push_back(ph);
  }
  if (result) {
    j["beta"] = result->beta;
    j["branching"] = result->branching;
    j["samples"] = result->samples;
    j["sample_failures"] = result->sample_failures;
    j["capped_instances"] = result->capped_instances;
    j["light_edges"] = result->light.size();
  }
  return j.dump();
}

}  // namespace ccmst
