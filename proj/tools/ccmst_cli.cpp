// ccmst: batch driver for the congested-clique MST experiments.
//
//   ccmst run <config> [--jobs N] [--stem NAME]
//   ccmst sweep <config> [--jobs N] [--stem NAME]
//   ccmst verify <suite|all>
//   ccmst export <records.json> [--stem NAME]
//
// Output files land in $CCMST_OUT (default ./ccmst-out).

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ccmst/experiments.hpp"

namespace {

using namespace ccmst;

std::string stem_of(const std::string& path, const std::string& given) {
  return given.empty() ? std::filesystem::path(path).stem().string() : given;
}

void write_outputs(const std::string& stem, const std::vector<ExperimentRecord>& records, bool plots) {
  const auto dir = output_dir();
  {
    std::ofstream csv(dir / (stem + ".csv"));
    write_csv(csv, records);
  }
  {
    std::ofstream js(dir / (stem + ".json"));
    js << records_json(records);
    if (!js) throw std::runtime_error("failed writing JSON");
  }
  if (plots) write_gnuplot(dir, stem, records);
  std::cerr << "wrote " << (dir / (stem + ".csv")).string() << " and .json\n";
}

// Returns the number of silent wrong answers.
std::size_t summarize(const ExperimentSpec& spec, const std::vector<ExperimentRecord>& recs, bool ratio) {
  std::size_t wrong = 0, flagged = 0, silent = 0, timeouts = 0;
  double msgs = 0, rounds = 0, m = 0;
  for (const auto& r : recs) {
    if (r.failures) ++flagged;
    if (r.status == "timeout") ++timeouts;
    if (!r.oracle_match) {
      ++wrong;
      if (!r.failures) ++silent;
    }
    msgs += double(r.msgs_total);
    rounds += double(r.rounds);
    m += double(r.m);
  }
  const double k = recs.empty() ? 1.0 : double(recs.size());
  std::cout << spec.echo_string() << ": runs=" << recs.size() << " wrong=" << wrong << " flagged=" << flagged
            << " timeouts=" << timeouts << " mean_msgs=" << std::setprecision(6) << msgs / k
            << " mean_rounds=" << rounds / k;
  if (ratio) std::cout << " msgs/sqrt(mn)=" << (msgs / k) / std::sqrt((m / k) * double(spec.n));
  std::cout << '\n';
  return silent;
}

int run_config(const std::string& path, const std::string& stem, unsigned jobs, bool sweep) {
  const auto specs = load_config_file(path);
  std::vector<ExperimentRecord> all;
  std::size_t silent = 0;
  for (const auto& spec : specs) {
    std::vector<ExperimentRecord> recs;
    run_experiment(spec, [&](const ExperimentRecord& r) { recs.push_back(r); }, jobs);
    silent += summarize(spec, recs, sweep);
    all.insert(all.end(), recs.begin(), recs.end());
  }
  write_outputs(stem_of(path, stem), all, sweep);
  if (silent) std::cerr << silent << " run(s) returned a wrong MST without flagging a failure\n";
  return silent ? 1 : 0;
}

int verify(const std::string& which) {
  std::vector<std::string> suites = which == "all" ? verify_suites() : std::vector<std::string>{which};
  bool ok = true;
  for (const auto& s : suites) {
    const VerifyReport rep = verify_suite(s);
    for (const auto& c : rep.checks) {
      std::cout << (c.pass ? "PASS " : "FAIL ") << rep.suite << ": " << c.name;
      if (!c.detail.empty()) std::cout << " (" << c.detail << ")";
      std::cout << '\n';
    }
    ok = ok && rep.passed();
  }
  return ok ? 0 : 1;
}

int export_records(const std::string& path, const std::string& stem) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  write_outputs(stem_of(path, stem), parse_records_json(ss.str()), true);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Congested-clique MST experiments"};
  app.require_subcommand(1);

  std::string config, stem, suite, records;
  unsigned jobs = 1;

  auto* run = app.add_subcommand("run", "Run every point of a config over its seed range");
  run->add_option("config", config, "key = value config file")->required()->check(CLI::ExistingFile);
  run->add_option("--jobs,-j", jobs, "Worker threads")->check(CLI::PositiveNumber);
  run->add_option("--stem", stem, "Output file stem (default: config name)");

  auto* sweep = app.add_subcommand("sweep", "Like run, plus gnuplot tables and msgs/sqrt(mn) per point");
  sweep->add_option("config", config, "key = value config file")->required()->check(CLI::ExistingFile);
  sweep->add_option("--jobs,-j", jobs, "Worker threads")->check(CLI::PositiveNumber);
  sweep->add_option("--stem", stem, "Output file stem (default: config name)");

  auto* ver = app.add_subcommand("verify", "Run a property suite");
  std::vector<std::string> choices = verify_suites();
  choices.push_back("all");
  ver->add_option("suite", suite, "Suite name")->required()->check(CLI::IsMember(choices));

  auto* exp = app.add_subcommand("export", "Rewrite a records JSON file as CSV and gnuplot tables");
  exp->add_option("records", records, "Records JSON")->required()->check(CLI::ExistingFile);
  exp->add_option("--stem", stem, "Output file stem (default: input name)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (run->parsed()) return run_config(config, stem, jobs, false);
    if (sweep->parsed()) return run_config(config, stem, jobs, true);
    if (ver->parsed()) return verify(suite);
    if (exp->parsed()) return export_records(records, stem);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
