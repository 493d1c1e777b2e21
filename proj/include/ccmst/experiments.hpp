#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ccmst/driver.hpp"
#include "ccmst/graph.hpp"

namespace ccmst {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// One point of a sweep, after comma lists have been expanded.
struct ExperimentSpec {
  KeyValues echo;  // the keys that produced this point, in file order
  DriverConfig driver;
  std::size_t n = 0;
  std::string m_expr = "4n";
  bool complete = false;
  std::uint64_t m = 0;  // resolved target
  std::uint64_t seed_first = 1;
  std::uint64_t seed_last = 1;
  unsigned beta_words = 8;
  bool check_flight = false;
  bool record_wall_time = true;  // false writes wall_ms = 0, for byte-stable output
  double timeout_ms = 0;

  std::string variant_name() const { return driver.variant == Variant::V1 ? "v1" : "v2"; }
  std::string echo_string() const;
};

// Edge-count expressions: an integer, "complete", or [c]n[^e][/d] such as
// "4n", "n^1.5", "n^2/8". Clamped to n(n-1)/2.
std::uint64_t resolve_m(const std::string& expr, std::size_t n);

// Seed ranges: "7", "1-100" or "1..100".
std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& s);

// Cartesian product over every comma-separated value, first key outermost.
std::vector<ExperimentSpec> expand_config(const KeyValues& kv);
std::vector<ExperimentSpec> load_config_file(const std::string& path);

struct ExperimentRecord {
  std::string config;
  std::string variant;
  std::size_t n = 0;
  std::uint64_t m = 0;
  double eps = 0;
  double p = 1;
  std::uint64_t seed = 0;
  std::uint64_t rounds = 0;
  std::uint64_t msgs_total = 0;
  std::uint64_t msgs_pi = 0;
  std::uint64_t msgs_mest = 0;
  std::uint64_t msgs_lmmst = 0;
  std::uint64_t msgs_flight = 0;
  std::uint64_t msgs_final = 0;
  std::uint64_t eh = 0;
  std::uint64_t el = 0;
  std::uint64_t max_lij = 0;
  bool oracle_match = false;
  std::uint64_t failures = 0;
  std::uint64_t sketch_failures = 0;  // part of failures
  std::uint64_t capped_gathers = 0;   // part of failures
  double wall_ms = 0;
  unsigned depth = 0;
  std::string status = "ok";  // ok | timeout | error: ...
  std::optional<bool> flight_match;
  std::map<std::string, std::uint64_t> msgs_by_step;
  std::map<std::string, std::uint64_t> msgs_by_protocol;

  friend bool operator==(const ExperimentRecord&, const ExperimentRecord&) = default;
};

WeightedGraph experiment_graph(const ExperimentSpec& spec, std::uint64_t seed);

// Never throws for protocol trouble: model violations, corrupt decodes and
// timeouts become a record with failures >= 1 and a non-ok status.
ExperimentRecord run_one(const ExperimentSpec& spec, std::uint64_t seed);

// Runs every seed of the spec; sink sees records in seed order. jobs > 1 runs
// seeds on worker threads.
void run_experiment(const ExperimentSpec& spec, const std::function<void(const ExperimentRecord&)>& sink,
                    unsigned jobs = 1);

const std::vector<std::string>& csv_columns();
void write_csv(std::ostream& out, const std::vector<ExperimentRecord>& records);
std::vector<ExperimentRecord> read_csv(std::istream& in);
std::string records_json(const std::vector<ExperimentRecord>& records);
std::vector<ExperimentRecord> parse_records_json(const std::string& text);

// Mean messages per (variant, n, m) point, in two gnuplot-ready tables.
void write_gnuplot(const std::filesystem::path& dir, const std::string& stem,
                   const std::vector<ExperimentRecord>& records);

// CCMST_OUT, or ./ccmst-out when unset. Created on demand.
std::filesystem::path output_dir();

struct VerifyCheck {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct VerifyReport {
  std::string suite;
  std::vector<VerifyCheck> checks;
  bool passed() const;
};

const std::vector<std::string>& verify_suites();
VerifyReport verify_suite(const std::string& name);

}  // namespace ccmst
