#include "ccmst/driver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ccmst/protocols.hpp"

namespace ccmst {

void DriverConfig::validate() const {
  if (variant == Variant::V2 && !(epsilon > 0 && epsilon <= 1)) throw ParameterError("epsilon must lie in (0, 1]");
  if (base_c < 1) throw ParameterError("base_c must be at least 1");
  if (!(kappa > 0)) throw ParameterError("kappa must be positive");
  if (max_batches == 0) throw ParameterError("max_batches must be positive");
}

namespace {

double parse_real(const std::string& k, const std::string& v) {
  std::size_t pos = 0;
  double x = 0;
  try {
    x = std::stod(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size()) throw ParameterError("config key '" + k + "': not a number: " + v);
  return x;
}

bool parse_bool(const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ParameterError("not a boolean: " + v);
}

}  // namespace

DriverConfig parse_driver_config(const std::vector<std::pair<std::string, std::string>>& kv) {
  DriverConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "variant") {
      if (v == "v1") c.variant = Variant::V1;
      else if (v == "v2") c.variant = Variant::V2;
      else throw ParameterError("unknown variant: " + v);
    } else if (k == "epsilon") {
      c.epsilon = parse_real(k, v);
    } else if (k == "base_c") {
      c.base_c = parse_real(k, v);
    } else if (k == "kappa") {
      c.kappa = parse_real(k, v);
    } else if (k == "theory_beta") {
      c.theory_beta = parse_bool(v);
    } else if (k == "gather") {
      if (v == "linear") c.gather = GatherMode::Linear;
      else if (v == "exact") c.gather = GatherMode::Exact;
      else throw ParameterError("unknown gather mode: " + v);
    } else if (k == "max_batches") {
      const double b = parse_real(k, v);
      if (b < 1 || b != std::floor(b) || b > 1e9) throw ParameterError("max_batches must be a positive integer");
      c.max_batches = static_cast<unsigned>(b);
    }
  }
  c.validate();
  return c;
}

std::size_t seed_bits(std::size_t n) {
  return required_seed_bits(default_independence(n), prime_above(std::uint64_t(n) * n));
}

SeedBroadcast broadcast_seed(Network& net, std::mt19937_64& rng, unsigned depth) {
  const std::size_t n = net.n();
  SeedBroadcast out;
  out.seed = SharedSeed::random(seed_bits(n), rng);
  const auto bytes = out.seed.to_bytes();
  std::vector<Payload> frags = fragment(bytes, net.bandwidth_bits(), net.header_bits());
  out.fragments = frags.size();
  std::vector<NodeId> all(n);
  std::iota(all.begin(), all.end(), 0u);
  DgsResult r = dgs_broadcast(net, 0, frags, all, Label{"dgs", "pi", depth});
  for (NodeId v = 0; v < n; ++v) {
    const SharedSeed copy = SharedSeed::from_bytes(reassemble(r.received[v], net.header_bits()), out.seed.bits());
    if (!(copy == out.seed)) throw CorruptionError("node " + std::to_string(v) + " holds a different pi");
  }
  out.rounds = r.rounds;
  out.messages = r.messages;
  return out;
}

MEstimate estimate_m(Network& net, const WeightedGraph& g, unsigned depth) {
  const std::size_t n = net.n();
  const unsigned w = net.word_bits();
  std::vector<std::vector<Payload>> items(n);
  for (NodeId v = 0; v < n; ++v) {
    BitWriter bw;
    bw.put(v, w).put(g.degree(v), w);
    items[v].push_back(bw.finish());
  }
  DsgResult d = dsg_gather(net, items, {0}, Label{"dsg", "m-est", depth});
  std::uint64_t sum = 0;
  for (const Payload& p : d.received[0]) {
    BitReader r(p);
    r.get(w);
    sum += r.get(w);
  }
  BitWriter bw;
  bw.put(sum / 2, 2 * w + 1);
  std::vector<NodeId> all(n);
  std::iota(all.begin(), all.end(), 0u);
  DgsResult b = dgs_broadcast(net, 0, {bw.finish()}, all, Label{"dgs", "m-est", depth});
  MEstimate out;
  out.m = sum / 2;
  for (NodeId v = 0; v < n; ++v)
    if (BitReader(b.received[v].at(0)).get(2 * w + 1) != out.m) throw CorruptionError("node learned a different m");
  out.rounds = d.rounds + b.rounds;
  out.messages = d.messages + b.messages;
  return out;
}

WeightedGraph sample_subgraph(const WeightedGraph& g, const SharedSeed& pi, double p, unsigned depth) {
  const std::size_t n = g.n();
  const HashFamily fam =
      derive_family(pi, default_independence(n), prime_above(std::uint64_t(n) * n), make_tag(TagPurpose::EdgeSample, depth));
  std::vector<Edge> keep;
  for (const Edge& e : g.edges())
    if (bernoulli_sample(fam, std::uint64_t(e.u) * n + e.v, p)) keep.push_back(e);
  return g.subgraph(keep);
}

namespace {

FlightConfig flight_config(const DriverConfig& cfg, unsigned depth) {
  FlightConfig fc;
  fc.kappa = cfg.kappa;
  fc.theory_beta = cfg.theory_beta;
  fc.mode = cfg.gather;
  fc.max_batches = cfg.max_batches;
  fc.depth = depth;
  return fc;
}

void absorb(MstRun& run, FlightResult&& fr, unsigned depth) {
  run.failures += fr.failures();
  if (depth == 0) {
    run.el = fr.light.size();
    run.max_lhat = fr.max_lhat;
  }
  run.flights.push_back(std::move(fr));
}

constexpr unsigned kMaxDepth = 64;

Forest v2_level(Network& net, const WeightedGraph& g, const DriverConfig& cfg, std::mt19937_64& rng, unsigned depth,
                MstRun& run) {
  if (depth > kMaxDepth) throw ParameterError("recursion too deep; epsilon too small?");
  const std::size_t n = net.n();
  run.depth = std::max(run.depth, depth);
  const MEstimate me = estimate_m(net, g, depth);
  LevelStats ls;
  ls.depth = depth;
  ls.m = me.m;
  if (double(me.m) < cfg.base_c * std::pow(double(n), 1.0 + cfg.epsilon)) {
    ls.base_case = true;
    ls.eh = me.m;
    run.levels.push_back(ls);
    if (depth == 0) run.eh = me.m;
    return linear_messages_mst(net, g, "lmmst", depth).forest;
  }
  const SeedBroadcast pi = broadcast_seed(net, rng, depth);
  const double p = std::pow(double(n), -cfg.epsilon);
  const WeightedGraph h = sample_subgraph(g, pi.seed, p, depth);
  ls.p = p;
  ls.eh = h.m();
  run.levels.push_back(ls);
  if (depth == 0) {
    run.p = p;
    run.eh = h.m();
  }
  const Forest f = v2_level(net, h, cfg, rng, depth + 1, run);
  FlightResult fr = compute_f_light(net, g, f, p, pi.seed, flight_config(cfg, depth));
  const WeightedGraph el = g.subgraph(fr.light);
  absorb(run, std::move(fr), depth);
  return linear_messages_mst(net, el, "final", depth).forest;
}

}  // namespace

MstRun mst_v1(Network& net, const WeightedGraph& g, const DriverConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t n = net.n();
  if (g.n() != n) throw ParameterError("graph size differs from the network size");
  std::mt19937_64 rng(splitmix64(seed));
  MstRun run;
  const SeedBroadcast pi = broadcast_seed(net, rng, 0);
  const MEstimate me = estimate_m(net, g, 0);
  run.p = me.m == 0 ? 1.0 : std::min(1.0, std::sqrt(double(n) / double(me.m)));
  const WeightedGraph h = run.p >= 1.0 ? g : sample_subgraph(g, pi.seed, run.p, 0);
  run.eh = h.m();
  run.levels.push_back(LevelStats{0, me.m, run.p, h.m(), false});
  const Forest f = linear_messages_mst(net, h, "lmmst", 0).forest;
  FlightResult fr = compute_f_light(net, g, f, run.p, pi.seed, flight_config(cfg, 0));
  const WeightedGraph el = g.subgraph(fr.light);
  absorb(run, std::move(fr), 0);
  run.forest = linear_messages_mst(net, el, "final", 0).forest;
  return run;
}

MstRun mst_v2(Network& net, const WeightedGraph& g, const DriverConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (g.n() != net.n()) throw ParameterError("graph size differs from the network size");
  std::mt19937_64 rng(splitmix64(seed));
  MstRun run;
  run.forest = v2_level(net, g, cfg, rng, 0, run);
  return run;
}

MstRun run_mst(Network& net, const WeightedGraph& g, const DriverConfig& cfg, std::uint64_t seed) {
  return cfg.variant == Variant::V1 ? mst_v1(net, g, cfg, seed) : mst_v2(net, g, cfg, seed);
}

}  // namespace ccmst
