#include "ccmst/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ccmst/boruvka.hpp"
#include "ccmst/flight.hpp"
#include "ccmst/kwise_hash.hpp"
#include "ccmst/protocols.hpp"
#include "ccmst/sketch.hpp"

namespace ccmst {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  if (!s.empty() && s.back() == sep) out.push_back({});
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ParameterError("bad number for '" + key + "': " + v);
  return x;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ParameterError("bad integer for '" + key + "': " + v);
  return x;
}

bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ParameterError("bad boolean for '" + key + "': " + v);
}

std::string fmt_double(double x) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  (void)ec;
  return std::string(buf, ptr);
}

const std::set<std::string> kDriverKeys = {"variant", "epsilon", "base_c", "kappa", "theory_beta", "gather",
                                           "max_batches"};

ExperimentSpec build_spec(const KeyValues& point) {
  ExperimentSpec s;
  s.echo = point;
  KeyValues driver_kv;
  bool have_n = false;
  for (const auto& [k, v] : point) {
    if (kDriverKeys.count(k)) {
      driver_kv.emplace_back(k, v);
    } else if (k == "n") {
      s.n = parse_uint(k, v);
      have_n = true;
    } else if (k == "m") {
      s.m_expr = v;
    } else if (k == "seeds") {
      std::tie(s.seed_first, s.seed_last) = parse_seed_range(v);
    } else if (k == "beta") {
      s.beta_words = static_cast<unsigned>(parse_uint(k, v));
    } else if (k == "check_flight") {
      s.check_flight = parse_flag(k, v);
    } else if (k == "record_wall_time") {
      s.record_wall_time = parse_flag(k, v);
    } else if (k == "timeout_ms") {
      s.timeout_ms = parse_double(k, v);
    } else if (k != "name") {
      throw ParameterError("unknown experiment key '" + k + "'");
    }
  }
  if (!have_n) throw ParameterError("experiment config needs n");
  if (s.n < 2) throw ParameterError("n must be at least 2");
  s.driver = parse_driver_config(driver_kv);
  s.complete = s.m_expr == "complete";
  s.m = resolve_m(s.m_expr, s.n);
  return s;
}

}  // namespace

std::string ExperimentSpec::echo_string() const {
  std::string out;
  for (const auto& [k, v] : echo) {
    if (!out.empty()) out += ';';
    out += k + "=" + v;
  }
  return out;
}

std::uint64_t resolve_m(const std::string& raw, std::size_t n) {
  const std::uint64_t max_m = std::uint64_t(n) * (n - 1) / 2;
  std::string e;
  for (char c : raw)
    if (c != ' ') e += c;
  if (e == "complete") return max_m;
  if (e.empty()) throw ParameterError("empty edge-count expression");
  double value = 0;
  const auto npos = e.find('n');
  if (npos == std::string::npos) {
    value = parse_double("m", e);
  } else {
    const double coef = npos == 0 ? 1.0 : parse_double("m", e.substr(0, npos));
    std::string rest = e.substr(npos + 1);
    double div = 1.0, expo = 1.0;
    if (const auto slash = rest.find('/'); slash != std::string::npos) {
      div = parse_double("m", rest.substr(slash + 1));
      rest = rest.substr(0, slash);
    }
    if (!rest.empty()) {
      if (rest[0] != '^') throw ParameterError("cannot parse edge count '" + raw + "'");
      expo = parse_double("m", rest.substr(1));
    }
    if (div <= 0) throw ParameterError("edge count divides by zero");
    value = coef * std::pow(double(n), expo) / div;
  }
  if (!(value >= 0)) throw ParameterError("negative edge count '" + raw + "'");
  return std::min<std::uint64_t>(max_m, static_cast<std::uint64_t>(std::llround(value)));
}

std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& s) {
  std::string a = s, b = s;
  if (const auto p = s.find(".."); p != std::string::npos) {
    a = s.substr(0, p);
    b = s.substr(p + 2);
  } else if (const auto d = s.find('-'); d != std::string::npos) {
    a = s.substr(0, d);
    b = s.substr(d + 1);
  }
  const std::uint64_t lo = parse_uint("seeds", trim(a)), hi = parse_uint("seeds", trim(b));
  if (hi < lo) throw ParameterError("empty seed range " + s);
  return {lo, hi};
}

std::vector<ExperimentSpec> expand_config(const KeyValues& kv) {
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& [k, v] : kv) {
    auto vals = split(v, ',');
    for (const auto& x : vals)
      if (x.empty()) throw ParameterError("empty value in list for '" + k + "'");
    axes.emplace_back(k, std::move(vals));
  }
  std::vector<ExperimentSpec> out;
  std::vector<std::size_t> pos(axes.size(), 0);
  while (true) {
    KeyValues point;
    for (std::size_t i = 0; i < axes.size(); ++i) point.emplace_back(axes[i].first, axes[i].second[pos[i]]);
    out.push_back(build_spec(point));
    std::size_t i = axes.size();
    while (i > 0) {
      --i;
      if (++pos[i] < axes[i].second.size()) break;
      pos[i] = 0;
      if (i == 0) return out;
    }
    if (axes.empty()) return out;
  }
}

std::vector<ExperimentSpec> load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open config " + path);
  return expand_config(parse_key_values(in));
}

WeightedGraph experiment_graph(const ExperimentSpec& spec, std::uint64_t seed) {
  GeneratorParams gp;
  gp.n = spec.n;
  if (spec.complete) {
    gp.model = GraphModel::Complete;
  } else {
    gp.model = GraphModel::ErdosRenyi;
    gp.m = spec.m;
  }
  return generate_graph(gp, seed);
}

ExperimentRecord run_one(const ExperimentSpec& spec, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const WeightedGraph g = experiment_graph(spec, seed);
  ExperimentRecord rec;
  rec.config = spec.echo_string();
  rec.variant = spec.variant_name();
  rec.n = spec.n;
  rec.m = g.m();
  rec.eps = spec.driver.variant == Variant::V2 ? spec.driver.epsilon : 0.0;
  rec.seed = seed;

  SimConfig sc;
  sc.n = spec.n;
  sc.beta = spec.beta_words;
  sc.seed = seed;
  sc.wall_limit_ms = spec.timeout_ms;
  Network net(sc);
  try {
    MstRun run = run_mst(net, g, spec.driver, seed);
    rec.p = run.p;
    rec.eh = run.eh;
    rec.el = run.el;
    rec.max_lij = run.max_lhat;
    rec.depth = run.depth;
    rec.failures = run.failures;
    for (const FlightResult& fr : run.flights) {
      rec.sketch_failures += fr.sample_failures;
      rec.capped_gathers += fr.capped_instances;
    }
    rec.oracle_match = same_edge_set(run.forest.edges(), kruskal_mst(g).edges());
    if (spec.check_flight) {
      for (const FlightResult& fr : run.flights)
        if (fr.depth == 0) {
          const Forest f(WeightedGraph(spec.n, fr.forest));
          rec.flight_match = same_edge_set(fr.light, brute_force_f_light(g, f));
        }
    }
  } catch (const Timeout&) {
    rec.status = "timeout";
    rec.failures += 1;
  } catch (const ModelViolation& e) {
    rec.status = std::string("error: model violation: ") + e.what();
    rec.failures += 1;
  } catch (const CorruptionError& e) {
    rec.status = std::string("error: corruption: ") + e.what();
    rec.failures += 1;
  } catch (const BoundViolation& e) {
    rec.status = std::string("error: bound: ") + e.what();
    rec.failures += 1;
  }
  const Transcript& t = net.transcript();
  rec.rounds = t.rounds;
  rec.msgs_total = t.messages_total;
  rec.msgs_pi = step_metrics(t, "pi").messages;
  rec.msgs_mest = step_metrics(t, "m-est").messages;
  rec.msgs_lmmst = step_metrics(t, "lmmst").messages;
  rec.msgs_flight = step_metrics(t, "flight").messages;
  rec.msgs_final = step_metrics(t, "final").messages;
  rec.msgs_by_step = t.by_step;
  rec.msgs_by_protocol = t.by_protocol;
  if (spec.record_wall_time)
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

void run_experiment(const ExperimentSpec& spec, const std::function<void(const ExperimentRecord&)>& sink,
                    unsigned jobs) {
  const std::uint64_t count = spec.seed_last - spec.seed_first + 1;
  if (jobs <= 1 || count == 1) {
    for (std::uint64_t s = spec.seed_first; s <= spec.seed_last; ++s) sink(run_one(spec, s));
    return;
  }
  // Workers fill slots; the caller's thread emits them in seed order.
  std::vector<std::optional<ExperimentRecord>> slots(count);
  std::vector<std::exception_ptr> errors(count);
  std::mutex mu;
  std::condition_variable cv;
  std::uint64_t next = 0;
  auto worker = [&] {
    while (true) {
      std::uint64_t i;
      {
        std::lock_guard lock(mu);
        if (next >= count) return;
        i = next++;
      }
      std::optional<ExperimentRecord> r;
      std::exception_ptr err;
      try {
        r = run_one(spec, spec.seed_first + i);
      } catch (...) {
        err = std::current_exception();
      }
      {
        std::lock_guard lock(mu);
        slots[i] = std::move(r);
        errors[i] = err;
        if (err && !slots[i]) slots[i].emplace();
      }
      cv.notify_all();
    }
  };
  std::vector<std::thread> pool;
  for (unsigned j = 0; j < std::min<std::uint64_t>(jobs, count); ++j) pool.emplace_back(worker);
  std::exception_ptr first_error;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return slots[i].has_value(); });
    if (errors[i]) {
      if (!first_error) first_error = errors[i];
      continue;
    }
    ExperimentRecord r = std::move(*slots[i]);
    lock.unlock();
    if (!first_error) sink(r);
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {
      "variant",   "n",           "m",           "eps",       "p",  "seed",  "rounds",
      "msgs_total", "msgs_pi",    "msgs_mest",   "msgs_lmmst", "msgs_flight", "msgs_final",
      "EH",        "El",          "maxLij",      "oracle_match", "failures", "wall_ms"};
  return cols;
}

void write_csv(std::ostream& out, const std::vector<ExperimentRecord>& records) {
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  for (const ExperimentRecord& r : records) {
    out << r.variant << ',' << r.n << ',' << r.m << ',' << fmt_double(r.eps) << ',' << fmt_double(r.p) << ','
        << r.seed << ',' << r.rounds << ',' << r.msgs_total << ',' << r.msgs_pi << ',' << r.msgs_mest << ','
        << r.msgs_lmmst << ',' << r.msgs_flight << ',' << r.msgs_final << ',' << r.eh << ',' << r.el << ','
        << r.max_lij << ',' << (r.oracle_match ? 1 : 0) << ',' << r.failures << ',' << fmt_double(r.wall_ms)
        << '\n';
  }
  if (!out) throw std::runtime_error("failed writing CSV");
}

std::vector<ExperimentRecord> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParameterError("CSV is empty");
  const auto header = split(line, ',');
  if (header != csv_columns()) throw ParameterError("CSV header does not match the record columns");
  std::vector<ExperimentRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != header.size()) throw ParameterError("CSV row has " + std::to_string(f.size()) + " fields");
    ExperimentRecord r;
    std::size_t i = 0;
    r.variant = f[i++];
    r.n = parse_uint("n", f[i++]);
    r.m = parse_uint("m", f[i++]);
    r.eps = parse_double("eps", f[i++]);
    r.p = parse_double("p", f[i++]);
    r.seed = parse_uint("seed", f[i++]);
    r.rounds = parse_uint("rounds", f[i++]);
    for (std::uint64_t* x : {&r.msgs_total, &r.msgs_pi, &r.msgs_mest, &r.msgs_lmmst, &r.msgs_flight, &r.msgs_final,
                             &r.eh, &r.el, &r.max_lij})
      *x = parse_uint("count", f[i++]);
    r.oracle_match = parse_flag("oracle_match", f[i++]);
    r.failures = parse_uint("failures", f[i++]);
    r.wall_ms = parse_double("wall_ms", f[i++]);
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

nlohmann::json to_json(const ExperimentRecord& r) {
  nlohmann::json j;
  j["config"] = r.config;
  j["variant"] = r.variant;
  j["n"] = r.n;
  j["m"] = r.m;
  j["eps"] = r.eps;
  j["p"] = r.p;
  j["seed"] = r.seed;
  j["rounds"] = r.rounds;
  j["msgs_total"] = r.msgs_total;
  j["msgs_pi"] = r.msgs_pi;
  j["msgs_mest"] = r.msgs_mest;
  j["msgs_lmmst"] = r.msgs_lmmst;
  j["msgs_flight"] = r.msgs_flight;
  j["msgs_final"] = r.msgs_final;
  j["EH"] = r.eh;
  j["El"] = r.el;
  j["maxLij"] = r.max_lij;
  j["oracle_match"] = r.oracle_match;
  j["failures"] = r.failures;
  j["sketch_failures"] = r.sketch_failures;
  j["capped_gathers"] = r.capped_gathers;
  j["wall_ms"] = r.wall_ms;
  j["depth"] = r.depth;
  j["status"] = r.status;
  j["flight_match"] = r.flight_match ? nlohmann::json(*r.flight_match) : nlohmann::json(nullptr);
  j["msgs_by_step"] = r.msgs_by_step;
  j["msgs_by_protocol"] = r.msgs_by_protocol;
  return j;
}

ExperimentRecord from_json(const nlohmann::json& j) {
  ExperimentRecord r;
  r.config = j.at("config").get<std::string>();
  r.variant = j.at("variant").get<std::string>();
  r.n = j.at("n").get<std::size_t>();
  r.m = j.at("m").get<std::uint64_t>();
  r.eps = j.at("eps").get<double>();
  r.p = j.at("p").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.rounds = j.at("rounds").get<std::uint64_t>();
  r.msgs_total = j.at("msgs_total").get<std::uint64_t>();
  r.msgs_pi = j.at("msgs_pi").get<std::uint64_t>();
  r.msgs_mest = j.at("msgs_mest").get<std::uint64_t>();
  r.msgs_lmmst = j.at("msgs_lmmst").get<std::uint64_t>();
  r.msgs_flight = j.at("msgs_flight").get<std::uint64_t>();
  r.msgs_final = j.at("msgs_final").get<std::uint64_t>();
  r.eh = j.at("EH").get<std::uint64_t>();
  r.el = j.at("El").get<std::uint64_t>();
  r.max_lij = j.at("maxLij").get<std::uint64_t>();
  r.oracle_match = j.at("oracle_match").get<bool>();
  r.failures = j.at("failures").get<std::uint64_t>();
  r.sketch_failures = j.at("sketch_failures").get<std::uint64_t>();
  r.capped_gathers = j.at("capped_gathers").get<std::uint64_t>();
  r.wall_ms = j.at("wall_ms").get<double>();
  r.depth = j.at("depth").get<unsigned>();
  r.status = j.at("status").get<std::string>();
  if (!j.at("flight_match").is_null()) r.flight_match = j.at("flight_match").get<bool>();
  r.msgs_by_step = j.at("msgs_by_step").get<std::map<std::string, std::uint64_t>>();
  r.msgs_by_protocol = j.at("msgs_by_protocol").get<std::map<std::string, std::uint64_t>>();
  return r;
}

}  // namespace

std::string records_json(const std::vector<ExperimentRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : records) arr.push_back(to_json(r));
  return arr.dump(2) + "\n";
}

std::vector<ExperimentRecord> parse_records_json(const std::string& text) {
  nlohmann::json arr;
  try {
    arr = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("bad records JSON: ") + e.what());
  }
  if (!arr.is_array()) throw ParameterError("records JSON must be an array");
  std::vector<ExperimentRecord> out;
  for (const auto& j : arr) out.push_back(from_json(j));
  return out;
}

void write_gnuplot(const std::filesystem::path& dir, const std::string& stem,
                   const std::vector<ExperimentRecord>& records) {
  struct Acc {
    double msgs = 0;
    std::size_t count = 0;
  };
  // (variant, eps) -> n -> m -> mean messages
  std::map<std::pair<std::string, double>, std::map<std::size_t, std::map<std::uint64_t, Acc>>> groups;
  for (const auto& r : records) {
    Acc& a = groups[{r.variant, r.eps}][r.n][r.m];
    a.msgs += double(r.msgs_total);
    ++a.count;
  }
  std::filesystem::create_directories(dir);
  std::ofstream by_m(dir / (stem + "_msgs_vs_m.dat")), by_n(dir / (stem + "_msgs_vs_n.dat"));
  if (!by_m || !by_n) throw std::runtime_error("cannot write gnuplot files in " + dir.string());
  by_m << "# m mean_msgs msgs_over_sqrt_mn runs; one block per (variant, eps, n)\n";
  by_n << "# n mean_msgs runs; one block per (variant, eps), densest m per n\n";
  for (const auto& [key, per_n] : groups) {
    for (const auto& [n, per_m] : per_n) {
      by_m << "# variant=" << key.first << " eps=" << fmt_double(key.second) << " n=" << n << '\n';
      for (const auto& [m, a] : per_m) {
        const double mean = a.msgs / double(a.count);
        by_m << m << ' ' << fmt_double(mean) << ' ' << fmt_double(mean / std::sqrt(double(m) * double(n))) << ' '
             << a.count << '\n';
      }
      by_m << "\n\n";
    }
    by_n << "# variant=" << key.first << " eps=" << fmt_double(key.second) << '\n';
    for (const auto& [n, per_m] : per_n) {
      const Acc& a = per_m.rbegin()->second;
      by_n << n << ' ' << fmt_double(a.msgs / double(a.count)) << ' ' << a.count << '\n';
    }
    by_n << "\n\n";
  }
}

std::filesystem::path output_dir() {
  const char* env = std::getenv("CCMST_OUT");
  std::filesystem::path dir = env && *env ? std::filesystem::path(env) : std::filesystem::path("ccmst-out");
  std::filesystem::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------- verify suites

bool VerifyReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const VerifyCheck& c) { return c.pass; });
}

namespace {

void add(VerifyReport& rep, std::string name, bool pass, std::string detail = {}) {
  rep.checks.push_back({std::move(name), pass, std::move(detail)});
}

// Every distinct k-tuple of points sees each value tuple from exactly one
// coefficient vector.
bool exhaustive_independence(unsigned k, std::uint64_t q) {
  std::uint64_t families = 1;
  for (unsigned i = 0; i < k; ++i) families *= q;
  std::vector<std::uint64_t> xs(k);
  std::function<bool(unsigned)> over_points = [&](unsigned i) -> bool {
    if (i == k) {
      std::vector<std::uint32_t> hits(families, 0);
      for (std::uint64_t code = 0; code < families; ++code) {
        std::vector<std::uint64_t> coeffs(k);
        std::uint64_t c = code;
        for (unsigned j = 0; j < k; ++j, c /= q) coeffs[j] = c % q;
        const HashFamily h = HashFamily::from_coefficients(coeffs, q);
        std::uint64_t cell = 0;
        for (unsigned j = 0; j < k; ++j) cell = cell * q + h.eval(xs[j]);
        ++hits[cell];
      }
      return std::all_of(hits.begin(), hits.end(), [](std::uint32_t h) { return h == 1; });
    }
    for (std::uint64_t x = 0; x < q; ++x) {
      if (std::find(xs.begin(), xs.begin() + i, x) != xs.begin() + i) continue;
      xs[i] = x;
      if (!over_points(i + 1)) return false;
    }
    return true;
  };
  return over_points(0);
}

VerifyReport verify_hash() {
  VerifyReport rep{"hash", {}};
  for (auto [k, q] : {std::pair{2u, 5ull}, {2u, 7ull}, {3u, 5ull}})
    add(rep, "exhaustive k=" + std::to_string(k) + " q=" + std::to_string(q), exhaustive_independence(k, q));
  bool thresholds = true;
  for (std::uint64_t q : {101ull, 4099ull, 65537ull})
    for (double p : {0.0, 0.01, 0.25, 0.5, 1.0}) {
      const double got = double(bernoulli_threshold(q, p)) / double(q);
      if (std::abs(got - p) > 1.0 / double(q)) thresholds = false;
    }
  add(rep, "bernoulli thresholds within 1/q", thresholds);
  std::mt19937_64 rng(7);
  const SharedSeed seed = SharedSeed::random(required_seed_bits(8, prime_above(64 * 64)), rng);
  const HashFamily a = derive_family(seed, 8, prime_above(64 * 64), 11);
  const HashFamily b = derive_family(seed, 8, prime_above(64 * 64), 11);
  const HashFamily c = derive_family(seed, 8, prime_above(64 * 64), 12);
  add(rep, "derivation is deterministic per tag", a.coeffs() == b.coeffs() && a.coeffs() != c.coeffs());
  return rep;
}

VerifyReport verify_sketch() {
  VerifyReport rep{"sketch", {}};
  const std::size_t n = 64;
  const SketchParams params = SketchParams::defaults(n);
  std::mt19937_64 rng(21);
  const SharedSeed seed = SharedSeed::random(params.required_seed_bits(), rng);
  const EdgeIndexing idx(n);
  std::uint64_t linear_bad = 0, lazy_bad = 0, unsound = 0, failures = 0, samples = 0;
  for (int t = 0; t < 200; ++t) {
    const SketchFamilies fam(seed, params, make_tag(TagPurpose::Test, 1, t));
    auto edge_vec = [&](std::size_t nnz) {
      std::vector<SparseEntry> v;
      for (std::size_t i = 0; i < nnz; ++i) {
        NodeId u = static_cast<NodeId>(rng() % n), w = static_cast<NodeId>(rng() % n);
        if (u == w) continue;
        v.push_back({idx.index(u, w), (rng() & 1) ? 1 : -1});
      }
      return v;
    };
    const auto x = edge_vec(1 + rng() % 40), y = edge_vec(1 + rng() % 40);
    std::vector<SparseEntry> xy = x;
    xy.insert(xy.end(), y.begin(), y.end());
    if (!(merge(build_sketch(fam, x), build_sketch(fam, y)) == build_sketch(fam, xy))) ++linear_bad;
    const SampleResult direct = sample(build_sketch(fam, xy), fam);
    const SampleResult lazy = sample_vector(seed, params, fam.tag(), xy);
    if (direct.kind != lazy.kind || direct.u != lazy.u || direct.v != lazy.v) ++lazy_bad;
    const auto canon = canonical_vector(xy);
    ++samples;
    if (lazy.kind == SampleResult::Kind::Failure) ++failures;
    if (lazy.is_edge()) {
      const std::uint64_t j = idx.index(lazy.u, lazy.v);
      if (!std::any_of(canon.begin(), canon.end(), [&](const SparseEntry& e) { return e.index == j; })) ++unsound;
    } else if (lazy.kind == SampleResult::Kind::Empty && !canon.empty()) {
      ++unsound;
    }
  }
  add(rep, "merge equals sketch of the sum", linear_bad == 0, std::to_string(linear_bad) + " mismatches");
  add(rep, "lazy sampler equals materialized sampler", lazy_bad == 0, std::to_string(lazy_bad) + " mismatches");
  add(rep, "decoded indices lie in the support", unsound == 0, std::to_string(unsound) + " unsound");
  add(rep, "failure rate at most 2%", failures * 50 <= samples,
      std::to_string(failures) + "/" + std::to_string(samples));
  // Cancellation: an internal edge added from both endpoints vanishes.
  const SketchFamilies fam(seed, params, make_tag(TagPurpose::Test, 2));
  const std::vector<SparseEntry> ends = {{idx.index(1, 2), 1}, {idx.index(1, 2), -1}, {idx.index(2, 9), 1}};
  const SampleResult s = sample(build_sketch(fam, ends), fam);
  add(rep, "internal edges cancel", s.is_edge() && s.u == 2 && s.v == 9);
  return rep;
}

VerifyReport verify_routing() {
  VerifyReport rep{"routing", {}};
  const auto violations0 = bound_audit().violations.load();
  std::mt19937_64 rng(31);
  const std::size_t n = 32;
  bool dgs_ok = true;
  std::string dgs_detail;
  for (std::size_t k : {1, 2, 4, 8})
    for (std::size_t r : {1, 4, 8, 16}) {
      SimConfig sc;
      sc.n = n;
      Network net(sc);
      const NodeId holder = static_cast<NodeId>(rng() % n);
      std::vector<NodeId> others;
      for (NodeId v = 0; v < n; ++v)
        if (v != holder) others.push_back(v);
      std::shuffle(others.begin(), others.end(), rng);
      std::vector<NodeId> recv(others.begin(), others.begin() + r);
      std::vector<Payload> items;
      for (std::size_t i = 0; i < k; ++i) items.push_back(BitWriter().put(i, 8).finish());
      const DgsResult d = dgs_broadcast(net, holder, items, recv, Label{"dgs", "verify"});
      if (d.rounds != 2 || d.messages != k + k * r) {
        dgs_ok = false;
        dgs_detail = "k=" + std::to_string(k) + " |R|=" + std::to_string(r) + ": " + std::to_string(d.messages) +
                     " messages, " + std::to_string(d.rounds) + " rounds";
      }
    }
  add(rep, "DGS: 2 rounds and k + k|R| messages", dgs_ok, dgs_detail);

  bool dsg_ok = true;
  std::string dsg_detail;
  for (std::size_t k : {0, 5, 31, 64, 100})
    for (std::size_t nd : {1, 3, 5}) {
      SimConfig sc;
      sc.n = n;
      Network net(sc);
      std::vector<std::vector<Payload>> items(n);
      for (std::size_t i = 0; i < k; ++i) items[rng() % (1 + rng() % n)].push_back(BitWriter().put(i % 256, 8).finish());
      std::vector<NodeId> dests;
      while (dests.size() < nd) {
        const NodeId v = static_cast<NodeId>(rng() % n);
        if (std::find(dests.begin(), dests.end(), v) == dests.end()) dests.push_back(v);
      }
      try {
        const DsgResult d = dsg_gather(net, items, dests, Label{"dsg", "verify"});
        if (d.rounds > 2 * ceil_div(k, n) + 2 || d.messages > (2 * k + 2) * nd) dsg_ok = false;
      } catch (const std::exception& e) {
        dsg_ok = false;
        dsg_detail = e.what();
      }
    }
  add(rep, "DSG: rounds <= 2ceil(k/n)+2, messages <= (2k+2)|V*|", dsg_ok, dsg_detail);

  bool rsg_ok = true, rsg_budget = true;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t nn = 64;
    SimConfig sc;
    sc.n = nn;
    sc.seed = 100 + trial;
    Network net(sc);
    RsgParams rp;
    const std::uint64_t cap = rsg_destination_cap(nn, rp);
    std::vector<std::uint64_t> load(nn, 0);
    std::vector<RsgItem> items;
    for (NodeId s = 0; s < nn; ++s)
      for (int j = 0; j < 4; ++j) {
        const NodeId d = static_cast<NodeId>(rng() % nn);
        if (d == s || load[d] >= cap) continue;
        ++load[d];
        items.push_back({s, d, BitWriter().put(s, 8).finish()});
      }
    const RsgResult r = rsg_route(net, items, rp, Label{"rsg", "verify"});
    if (r.messages != 2 * r.k) rsg_ok = false;
    if (!r.within_budget) rsg_budget = false;
    for (NodeId d = 0; d < nn; ++d)
      if (r.delivered[d].size() != load[d]) rsg_ok = false;
  }
  add(rep, "RSG: exactly 2k messages, every item delivered", rsg_ok);
  add(rep, "RSG: within the round budget", rsg_budget);
  add(rep, "no bound violations recorded", bound_audit().violations.load() == violations0);
  return rep;
}

VerifyReport verify_sort() {
  VerifyReport rep{"sort", {}};
  for (std::size_t n : {16, 64}) {
    bool ok = true;
    std::uint64_t max_ratio_num = 0, max_k = 1;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      SimConfig sc;
      sc.n = n;
      sc.seed = seed;
      Network net(sc);
      std::mt19937_64 rng(seed);
      const std::size_t k = static_cast<std::size_t>(std::pow(double(n), 1.5));
      std::vector<std::vector<std::uint64_t>> keys(n);
      std::vector<std::tuple<std::uint64_t, NodeId, std::size_t>> all;
      const std::uint64_t key_max = std::uint64_t(n) * n;
      for (std::size_t i = 0; i < k; ++i) {
        const NodeId v = static_cast<NodeId>(rng() % n);
        const std::uint64_t key = rng() % key_max;
        all.emplace_back(key, v, keys[v].size());
        keys[v].push_back(key);
      }
      std::sort(all.begin(), all.end());
      const SortResult r = distributed_sort(net, keys, 0.5, Label{"dsort", "verify"});
      for (std::size_t i = 0; i < all.size(); ++i) {
        const auto [key, v, j] = all[i];
        if (r.ranks[v][j] != i) ok = false;
      }
      if (r.messages * max_k > max_ratio_num * k) {
        max_ratio_num = r.messages;
        max_k = k;
      }
    }
    add(rep, "ranks match sequential sort, n=" + std::to_string(n), ok,
        "max messages/k = " + fmt_double(double(max_ratio_num) / double(max_k)));
  }
  return rep;
}

VerifyReport verify_flight() {
  VerifyReport rep{"flight", {}};
  const std::size_t n = 64;
  std::uint64_t exact = 0, false_pos = 0, runs = 0, unexplained = 0;
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    GeneratorParams gp;
    gp.n = n;
    gp.m = 512;
    const WeightedGraph g = generate_graph(gp, seed);
    const double p = std::sqrt(double(n) / double(g.m()));
    std::mt19937_64 rng(seed);
    const SharedSeed pi = SharedSeed::random(
        std::max(seed_bits(n), SketchParams::defaults(n).required_seed_bits()), rng);
    const WeightedGraph h = sample_subgraph(g, pi, p, 0);
    const Forest f = kruskal_mst(h);
    SimConfig sc;
    sc.n = n;
    sc.seed = seed;
    Network net(sc);
    const FlightResult fr = compute_f_light(net, g, f, p, pi, FlightConfig{});
    const auto truth = brute_force_f_light(g, f);
    ++runs;
    std::set<std::pair<NodeId, NodeId>> t;
    for (const Edge& e : truth) t.insert({e.u, e.v});
    for (const Edge& e : fr.light)
      if (!t.count({e.u, e.v})) ++false_pos;
    if (same_edge_set(fr.light, truth)) ++exact;
    else if (fr.failures() == 0) ++unexplained;
  }
  add(rep, "no false positives", false_pos == 0, std::to_string(false_pos) + " edges");
  add(rep, "every miss co-occurs with a logged failure", unexplained == 0);
  add(rep, "exact on all seeds", exact == runs, std::to_string(exact) + "/" + std::to_string(runs));
  return rep;
}

VerifyReport verify_mst() {
  VerifyReport rep{"mst", {}};
  struct Case {
    std::string name;
    KeyValues kv;
  };
  const std::vector<Case> cases = {
      {"v1 n=32 m=4n", {{"variant", "v1"}, {"n", "32"}, {"m", "4n"}, {"seeds", "1-100"}}},
      {"v2 eps=1/4 n=32 m=n^2/4", {{"variant", "v2"}, {"epsilon", "0.25"}, {"base_c", "1"}, {"n", "32"},
                                  {"m", "n^2/4"}, {"seeds", "1-100"}}},
  };
  for (const Case& c : cases) {
    const ExperimentSpec spec = expand_config(c.kv).front();
    std::uint64_t wrong = 0, flagged = 0, silent = 0;
    run_experiment(spec, [&](const ExperimentRecord& r) {
      if (r.failures > 0) ++flagged;
      if (!r.oracle_match) {
        ++wrong;
        if (r.failures == 0) ++silent;
      }
    });
    add(rep, c.name + ": matches Kruskal on every unflagged run", silent == 0,
        std::to_string(wrong) + " wrong, " + std::to_string(flagged) + " flagged");
    add(rep, c.name + ": at most 1% flagged", flagged <= 1);
  }
  return rep;
}

}  // namespace

const std::vector<std::string>& verify_suites() {
  static const std::vector<std::string> names = {"hash", "sketch", "routing", "sort", "flight", "mst"};
  return names;
}

VerifyReport verify_suite(const std::string& name) {
  if (name == "hash") return verify_hash();
  if (name == "sketch") return verify_sketch();
  if (name == "routing") return verify_routing();
  if (name == "sort") return verify_sort();
  if (name == "flight") return verify_flight();
  if (name == "mst") return verify_mst();
  throw ParameterError("unknown verify suite '" + name + "'");
}

}  // namespace ccmst
