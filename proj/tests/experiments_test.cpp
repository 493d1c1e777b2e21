#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "ccmst/experiments.hpp"

using namespace ccmst;

namespace {

ExperimentSpec spec_of(const KeyValues& kv) {
  const auto specs = expand_config(kv);
  EXPECT_EQ(specs.size(), 1u);
  return specs.front();
}

std::string csv_of(const std::vector<ExperimentRecord>& rs) {
  std::ostringstream out;
  write_csv(out, rs);
  return out.str();
}

std::vector<ExperimentRecord> run_all(const ExperimentSpec& s, unsigned jobs = 1) {
  std::vector<ExperimentRecord> rs;
  run_experiment(s, [&](const ExperimentRecord& r) { rs.push_back(r); }, jobs);
  return rs;
}

}  // namespace

TEST(ResolveM, Expressions) {
  EXPECT_EQ(resolve_m("4n", 32), 128u);
  EXPECT_EQ(resolve_m("n", 32), 32u);
  EXPECT_EQ(resolve_m("n^1.5", 256), 4096u);
  EXPECT_EQ(resolve_m("n^2/8", 64), 512u);
  EXPECT_EQ(resolve_m("n^2/4", 256), 16384u);
  EXPECT_EQ(resolve_m("n^1.2", 256), std::uint64_t(std::llround(std::pow(256.0, 1.2))));
  EXPECT_EQ(resolve_m("300", 64), 300u);
  EXPECT_EQ(resolve_m("complete", 10), 45u);
  EXPECT_EQ(resolve_m("n^3", 10), 45u);  // clamped
  EXPECT_EQ(resolve_m(" 2 n ", 10), 20u);
  for (const char* bad : {"", "x", "n^", "4m", "n/0", "-3", "n^2/-1"}) EXPECT_THROW(resolve_m(bad, 10), ParameterError) << bad;
}

TEST(SeedRange, Forms) {
  EXPECT_EQ(parse_seed_range("7"), (std::pair<std::uint64_t, std::uint64_t>{7, 7}));
  EXPECT_EQ(parse_seed_range("1-100"), (std::pair<std::uint64_t, std::uint64_t>{1, 100}));
  EXPECT_EQ(parse_seed_range("3..5"), (std::pair<std::uint64_t, std::uint64_t>{3, 5}));
  EXPECT_THROW(parse_seed_range("5-3"), ParameterError);
  EXPECT_THROW(parse_seed_range("a"), ParameterError);
}

TEST(ExpandConfig, CartesianProductFirstKeyOutermost) {
  const auto specs = expand_config({{"variant", "v1,v2"}, {"n", "32,64,128"}, {"m", "4n"}, {"epsilon", "0.5"}});
  ASSERT_EQ(specs.size(), 6u);
  EXPECT_EQ(specs[0].variant_name(), "v1");
  EXPECT_EQ(specs[0].n, 32u);
  EXPECT_EQ(specs[1].n, 64u);
  EXPECT_EQ(specs[3].variant_name(), "v2");
  EXPECT_EQ(specs[3].n, 32u);
  EXPECT_EQ(specs[5].m, 512u);
  EXPECT_EQ(specs[4].echo_string(), "variant=v2;n=64;m=4n;epsilon=0.5");
}

TEST(ExpandConfig, Errors) {
  EXPECT_THROW(expand_config({{"m", "4n"}}), ParameterError);
  EXPECT_THROW(expand_config({{"n", "1"}}), ParameterError);
  EXPECT_THROW(expand_config({{"n", "32"}, {"colour", "blue"}}), ParameterError);
  EXPECT_THROW(expand_config({{"n", "32,,64"}}), ParameterError);
  EXPECT_THROW(expand_config({{"n", "32"}, {"variant", "v9"}}), ParameterError);
  EXPECT_THROW(expand_config({{"n", "-5"}}), ParameterError);
}

TEST(ConfigFile, LoadsKeyValueText) {
  const auto path = std::filesystem::temp_directory_path() / "ccmst_experiments_test.cfg";
  {
    std::ofstream f(path);
    f << "# sweep\nname = t\nvariant = v1\nn = 32, 64\nm = 4n\nseeds = 1-3\n";
  }
  const auto specs = load_config_file(path.string());
  std::filesystem::remove(path);
  ASSERT_EQ(specs.size(), 2u);
  EXPECT_EQ(specs[1].n, 64u);
  EXPECT_EQ(specs[1].seed_first, 1u);
  EXPECT_EQ(specs[1].seed_last, 3u);
  EXPECT_THROW(load_config_file("/nonexistent/ccmst.cfg"), ParameterError);
}

TEST(RunOne, TinyGraphMatchesOracle) {
  const auto s = spec_of({{"variant", "v1"}, {"n", "16"}, {"m", "40"}, {"check_flight", "1"}});
  const ExperimentRecord r = run_one(s, 1);
  EXPECT_EQ(r.status, "ok");
  EXPECT_TRUE(r.oracle_match);
  ASSERT_TRUE(r.flight_match.has_value());
  EXPECT_TRUE(*r.flight_match);
  EXPECT_EQ(r.n, 16u);
  EXPECT_EQ(r.m, 40u);
  EXPECT_EQ(r.msgs_total, r.msgs_pi + r.msgs_mest + r.msgs_lmmst + r.msgs_flight + r.msgs_final);
  std::uint64_t by_step = 0;
  for (const auto& [k, v] : r.msgs_by_step) by_step += v;
  EXPECT_EQ(by_step, r.msgs_total);
  EXPECT_EQ(r.failures, r.sketch_failures + r.capped_gathers);
}

TEST(RunOne, CompleteGraphV2) {
  const auto s = spec_of({{"variant", "v2"}, {"epsilon", "0.5"}, {"base_c", "1"}, {"n", "32"}, {"m", "complete"}});
  const ExperimentRecord r = run_one(s, 2);
  EXPECT_EQ(r.m, 32u * 31 / 2);
  EXPECT_GE(r.depth, 1u);
  EXPECT_TRUE(r.oracle_match || r.failures > 0);
}

TEST(RunOne, TimeoutIsAFlaggedRecord) {
  const auto s = spec_of({{"variant", "v1"}, {"n", "128"}, {"m", "2048"}, {"timeout_ms", "0.001"}});
  const ExperimentRecord r = run_one(s, 1);
  EXPECT_EQ(r.status, "timeout");
  EXPECT_FALSE(r.oracle_match);
  EXPECT_GE(r.failures, 1u);
}

TEST(RunOne, WrongAnswersAreNeverSilent) {
  const auto s = spec_of({{"variant", "v1"}, {"n", "24"}, {"m", "n^1.5"}, {"seeds", "1-15"}, {"kappa", "0.01"},
                          {"max_batches", "1"}});
  // kappa and max_batches are starved on purpose so some runs get flagged.
  std::size_t wrong = 0;
  for (const ExperimentSpec& spec : expand_config({{"variant", "v1,v2"}, {"epsilon", "0.5"}, {"base_c", "1"},
                                                   {"n", "24"}, {"m", "n^1.5"}, {"seeds", "1-15"}}))
    for (const auto& r : run_all(spec)) EXPECT_TRUE(r.oracle_match) << r.variant << " seed " << r.seed;
  for (const auto& r : run_all(s)) {
    if (r.oracle_match) continue;
    ++wrong;
    EXPECT_GE(r.failures, 1u) << "silent wrong answer, seed " << r.seed;
  }
  EXPECT_GT(wrong, 0u);
}

TEST(Records, CsvHeaderOnlyAndRows) {
  const std::string empty = csv_of({});
  EXPECT_EQ(empty,
            "variant,n,m,eps,p,seed,rounds,msgs_total,msgs_pi,msgs_mest,msgs_lmmst,msgs_flight,msgs_final,EH,El,"
            "maxLij,oracle_match,failures,wall_ms\n");
  std::istringstream in(empty);
  EXPECT_TRUE(read_csv(in).empty());

  const auto s = spec_of({{"variant", "v1"}, {"n", "16"}, {"m", "4n"}, {"seeds", "1-10"}});
  const auto rs = run_all(s);
  ASSERT_EQ(rs.size(), 10u);
  const std::string text = csv_of(rs);
  std::istringstream lines(text);
  std::string line;
  std::size_t rows = 0;
  std::getline(lines, line);
  while (std::getline(lines, line)) {
    ++rows;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), std::ptrdiff_t(csv_columns().size() - 1));
  }
  EXPECT_EQ(rows, 10u);

  std::istringstream back(text);
  const auto parsed = read_csv(back);
  ASSERT_EQ(parsed.size(), rs.size());
  for (std::size_t i = 0; i < rs.size(); ++i) {
    EXPECT_EQ(parsed[i].seed, rs[i].seed);
    EXPECT_EQ(parsed[i].msgs_total, rs[i].msgs_total);
    EXPECT_EQ(parsed[i].p, rs[i].p);
    EXPECT_EQ(parsed[i].wall_ms, rs[i].wall_ms);
    EXPECT_EQ(parsed[i].oracle_match, rs[i].oracle_match);
  }
  std::istringstream bad("variant,n\n");
  EXPECT_THROW(read_csv(bad), ParameterError);
}

TEST(Records, JsonRoundTrip) {
  const auto s = spec_of({{"variant", "v1"}, {"n", "20"}, {"m", "60"}, {"seeds", "1-4"}, {"check_flight", "1"}});
  auto rs = run_all(s);
  rs.push_back(ExperimentRecord{});
  rs.back().status = "error: model violation: x";
  EXPECT_EQ(parse_records_json(records_json(rs)), rs);
}

TEST(Records, ByteIdenticalCsvWithoutWallTime) {
  const KeyValues kv = {{"variant", "v1"}, {"n", "24"}, {"m", "n^1.5"}, {"seeds", "1-6"}, {"record_wall_time", "0"}};
  const auto a = csv_of(run_all(spec_of(kv)));
  const auto b = csv_of(run_all(spec_of(kv), 3));
  EXPECT_EQ(a, b);
}

TEST(Records, ParallelRunsKeepSeedOrder) {
  const auto s = spec_of({{"variant", "v1"}, {"n", "16"}, {"m", "4n"}, {"seeds", "5-12"}});
  const auto rs = run_all(s, 4);
  ASSERT_EQ(rs.size(), 8u);
  for (std::size_t i = 0; i < rs.size(); ++i) EXPECT_EQ(rs[i].seed, 5 + i);
}

TEST(Export, GnuplotFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "ccmst_gnuplot_test";
  std::filesystem::remove_all(dir);
  std::vector<ExperimentRecord> rs;
  for (const ExperimentSpec& spec : expand_config({{"variant", "v1"}, {"n", "16,24"}, {"m", "4n,n^1.5"}, {"seeds", "1-2"}})) {
    const auto part = run_all(spec);
    rs.insert(rs.end(), part.begin(), part.end());
  }
  write_gnuplot(dir, "t", rs);
  EXPECT_TRUE(std::filesystem::exists(dir / "t_msgs_vs_m.dat"));
  EXPECT_TRUE(std::filesystem::exists(dir / "t_msgs_vs_n.dat"));
  std::filesystem::remove_all(dir);
}

TEST(Export, OutputDirFollowsEnvironment) {
  const auto dir = std::filesystem::temp_directory_path() / "ccmst_outdir_test";
  std::filesystem::remove_all(dir);
  ::setenv("CCMST_OUT", dir.c_str(), 1);
  EXPECT_EQ(output_dir(), dir);
  EXPECT_TRUE(std::filesystem::is_directory(dir));
  ::unsetenv("CCMST_OUT");
  std::filesystem::remove_all(dir);
}

TEST(Verify, HashSuitePasses) {
  const VerifyReport r = verify_suite("hash");
  EXPECT_TRUE(r.passed());
  EXPECT_FALSE(r.checks.empty());
  EXPECT_EQ(verify_suites().size(), 6u);
  EXPECT_ANY_THROW(verify_suite("nope"));
}
