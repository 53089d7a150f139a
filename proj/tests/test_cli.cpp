#include <gtest/gtest.h>

#include <json.hpp>

#include <sstream>
#include <string>
#include <vector>

#include "divtol/cli.hpp"
#include "support/fixtures.hpp"

using nlohmann::json;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "divtol");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Outcome o;
  o.code = divtol::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

json error_of(const Outcome& o) { return json::parse(o.err).at("error"); }

/// One exposed mouse pressing 3 times, one control pressing twice, A* = 1.
struct TwoMouseFiles {
  fixtures::TempDir dir;
  std::string exposures = dir.write("exposures.csv", "mouse_id,exposed\nm1,1\nm2,0\n");
  std::string bins = dir.write("bins.csv", "mouse_id,session,b0\nm1,1,3\nm2,1,2\n");

  std::vector<std::string> args(const std::string& command) const {
    return {"--command", command,    "--exposures", exposures,    "--bins", bins,
            "--interval", "60",      "--bin-width", "60",         "--optimal", "1"};
  }
};

std::vector<std::string> study_args(const fixtures::StudyFiles& f, const std::string& command) {
  return {"--command", command, "--exposures", f.exposures, "--bins", f.bins,
          "--optimal", fixtures::first_bin_optimal(), "--weights", "sixty-minus-midpoint"};
}

std::vector<std::string> with(std::vector<std::string> base, std::initializer_list<std::string> more) {
  base.insert(base.end(), more);
  return base;
}

}  // namespace

TEST(CliEstimate, TwoMouseExample) {
  const TwoMouseFiles f;
  const auto o = run(f.args("estimate"));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto j = json::parse(o.out);
  EXPECT_NEAR(j["rows"][0]["theta_e"].get<double>(), 0.2, 1e-9);
  EXPECT_EQ(j["n"], 2);
  EXPECT_NE(o.err.find("theta_e = 0.2"), std::string::npos);
  EXPECT_NE(o.err.find("more than controls"), std::string::npos);
}

TEST(CliEstimate, GridMethodAgrees) {
  const TwoMouseFiles f;
  const auto o = run(with(f.args("estimate"), {"--method", "grid"}));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto row = json::parse(o.out)["rows"][0];
  EXPECT_NEAR(row["theta_e"].get<double>(), 0.2, 2e-6);
  EXPECT_EQ(row["method"], "grid");
}

TEST(CliEstimate, MissingExposuresIsLinkageError) {
  const TwoMouseFiles f;
  auto args = f.args("estimate");
  args[3] = f.dir.file("absent.csv");
  const auto o = run(args);
  EXPECT_NE(o.code, 0);
  EXPECT_EQ(error_of(o)["class"], "linkage");

  const auto none = run({"--command", "estimate", "--bins", f.bins, "--interval", "60",
                         "--bin-width", "60", "--optimal", "1"});
  EXPECT_NE(none.code, 0);
  EXPECT_EQ(error_of(none)["class"], "linkage");
}

TEST(CliEstimate, WeightedStudyFavorsExposedTolerance) {
  const fixtures::TempDir dir;
  const auto files = fixtures::write_study(dir, fixtures::study_fixture(17, 13, 13, 25));
  const auto o = run(study_args(files, "estimate"));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto row = json::parse(o.out)["rows"][0];
  EXPECT_LT(row["theta_e"].get<double>(), 0.5);
  EXPECT_GT(row["group_divergence_contrast"].get<double>(), 0.0);
}

TEST(CliEstimate, BootstrapColumns) {
  const fixtures::TempDir dir;
  const auto files = fixtures::write_study(dir, fixtures::study_fixture(18, 8, 8, 25));
  const auto o = run(with(study_args(files, "estimate"), {"--bootstrap", "200", "--seed", "4"}));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto row = json::parse(o.out)["rows"][0];
  EXPECT_LE(row["ci_lo"].get<double>(), row["theta_e"].get<double>());
  EXPECT_GE(row["ci_hi"].get<double>(), row["theta_e"].get<double>());
  EXPECT_EQ(row["bootstrap_replicates"], 200);
}

TEST(CliEstimate, EventInputMatchesBinnedInput) {
  const fixtures::TempDir dir;
  const auto ex = dir.write("e.csv", "mouse_id,exposed\nm1,1\nm2,0\nm3,0\n");
  const auto ev = dir.write("ev.csv",
                            "mouse_id,session,press_time_s\nm1,1,1.0\nm1,1,2.0\nm1,2,61.0\n"
                            "m2,1,50.0\nm3,1,58.0\nm3,1,3.0\n");
  const auto bins = dir.write("b.csv",
                              "mouse_id,session,b0,b1\nm1,1,2,0\nm1,2,1,0\nm2,1,0,1\nm3,1,1,1\n");
  const std::vector<std::string> common{"--command", "estimate", "--exposures", ex,
                                        "--bin-width", "30", "--optimal", "1,0"};
  const auto a = run(with(common, {"--events", ev}));
  const auto b = run(with(common, {"--bins", bins}));
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(json::parse(a.out)["rows"], json::parse(b.out)["rows"]);
}

TEST(CliEstimate, OptimalMustMatchBins) {
  const TwoMouseFiles f;
  auto args = f.args("estimate");
  args.back() = "1,0";
  const auto o = run(args);
  EXPECT_EQ(o.code, 2);
  EXPECT_EQ(error_of(o)["class"], "configuration");
}

TEST(CliEstimate, SingleGroupIsDataError) {
  const fixtures::TempDir dir;
  const auto ex = dir.write("e.csv", "mouse_id,exposed\nm1,1\nm2,1\n");
  const auto b = dir.write("b.csv", "mouse_id,session,b0\nm1,1,3\nm2,1,2\n");
  const auto o = run({"--command", "estimate", "--exposures", ex, "--bins", b, "--bin-width", "60",
                      "--optimal", "1"});
  EXPECT_EQ(o.code, 1);
  EXPECT_EQ(error_of(o)["class"], "data");
  EXPECT_NE(error_of(o)["message"].get<std::string>().find("missing control group"), std::string::npos);
}

TEST(CliCurves, TwoMouseCrossing) {
  const TwoMouseFiles f;
  const auto o = run(f.args("curves"));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto j = json::parse(o.out);
  EXPECT_NEAR(j["crossing_theta"].get<double>(), 0.2, 1e-9);
  EXPECT_EQ(j["rows"].size(), 201u);
  EXPECT_NEAR(j["crossing_gap"].get<double>(), 0.0, 1e-9);
}

TEST(CliCurves, TwoPointGrid) {
  const TwoMouseFiles f;
  const auto o = run(with(f.args("curves"), {"--grid-points", "2"}));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto j = json::parse(o.out);
  ASSERT_EQ(j["rows"].size(), 2u);
  EXPECT_EQ(j["rows"][0]["theta"], 0.0);
  EXPECT_EQ(j["rows"][1]["theta"], 1.0);
  // The mean gap is linear in theta, so one segment still locates it exactly.
  EXPECT_NEAR(j["crossing_theta"].get<double>(), 0.2, 1e-12);
}

TEST(CliCurves, CrossingStaysNearEstimate) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const fixtures::TempDir dir;
    const auto files =
        fixtures::write_study(dir, fixtures::study_fixture(900 + seed, 6 + seed, 9 - seed, 25));
    const auto o = run(study_args(files, "curves"));
    ASSERT_EQ(o.code, 0) << o.err;
    const auto j = json::parse(o.out);
    ASSERT_TRUE(j["crossing_theta"].is_number());
    EXPECT_LE(j["crossing_gap"].get<double>(), fixtures::crossing_gap_bound) << "seed " << seed;
    EXPECT_NEAR(j["crossing_gap"].get<double>(),
                std::abs(j["crossing_theta"].get<double>() - j["theta_hat"].get<double>()), 1e-15);
  }
}

TEST(CliSimulateMc, SingleDatasetIsDeterministic) {
  const std::vector<std::string> args{"--command", "simulate-mc", "--datasets", "1", "--seed", "5"};
  const auto a = run(args), b = run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const auto j = json::parse(a.out);
  EXPECT_EQ(j["retained"].get<int>() + j["degenerate_count"].get<int>(), 1);
}

TEST(CliSimulateMc, OutputFilesAreByteIdentical) {
  const fixtures::TempDir dir;
  const auto p1 = dir.file("a.json"), p2 = dir.file("b.json");
  const std::vector<std::string> base{"--command", "simulate-mc", "--datasets", "200", "--seed", "9"};
  ASSERT_EQ(run(with(base, {"--out", p1})).code, 0);
  ASSERT_EQ(run(with(base, {"--out", p2, "--workers", "3"})).code, 0);
  const auto t1 = fixtures::read_file(p1), t2 = fixtures::read_file(p2);
  ASSERT_FALSE(t1.empty());
  // Only the worker count, which is not echoed, differs between the runs.
  EXPECT_EQ(t1, t2);
}

TEST(CliSimulateMc, DefaultsNearReportedFractions) {
  const auto o = run({"--command", "simulate-mc", "--seed", "0"});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto j = json::parse(o.out);
  EXPECT_NEAR(j["frac_theta_below_half"].get<double>(), 0.7385, 0.05);
  EXPECT_NEAR(j["frac_b1_above_zero"].get<double>(), 0.7415, 0.05);
  EXPECT_EQ(j["config"]["positivity"], "reject_resample");
  EXPECT_EQ(j["config"]["shape_scope"], "per_dataset");
  EXPECT_EQ(j["config"]["seed"], 0);
}

TEST(CliConsistency, RowsPerSampleSize) {
  const auto o = run({"--command", "consistency", "--ns", "20,40", "--replicates", "30",
                      "--shape-scope", "per-observation"});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto j = json::parse(o.out);
  ASSERT_EQ(j["rows"].size(), 2u);
  EXPECT_EQ(j["rows"][1]["n"], 40);
  EXPECT_EQ(j["config"]["ns"], json::array({20, 40}));
}

TEST(CliIngestCheck, CleanStudy) {
  const fixtures::TempDir dir;
  const auto files = fixtures::write_study(dir, fixtures::study_fixture(2, 3, 3, 25));
  const auto o = run({"--command", "ingest-check", "--exposures", files.exposures, "--bins", files.bins});
  EXPECT_EQ(o.code, 0) << o.err;
  const auto j = json::parse(o.out);
  EXPECT_TRUE(j["clean"].get<bool>());
  EXPECT_TRUE(j["rows"].empty());
  EXPECT_EQ(j["n"], 6);
}

TEST(CliIngestCheck, SingleGroupReportsMissingControl) {
  const fixtures::TempDir dir;
  const auto ex = dir.write("e.csv", "mouse_id,exposed\nm1,1\nm2,1\n");
  const auto b = dir.write("b.csv", "mouse_id,session,b0\nm1,1,3\nm2,1,2\n");
  const auto o = run({"--command", "ingest-check", "--exposures", ex, "--bins", b, "--bin-width", "60"});
  EXPECT_EQ(o.code, 1);
  const auto j = json::parse(o.out);
  EXPECT_FALSE(j["clean"].get<bool>());
  ASSERT_EQ(j["rows"].size(), 1u);
  EXPECT_EQ(j["rows"][0]["kind"], "missing_control_group");
  EXPECT_EQ(j["rows"][0]["message"], "missing control group");
}

TEST(CliIngestCheck, RaggedRowIsSchemaViolationWithLine) {
  const fixtures::TempDir dir;
  const auto ex = dir.write("e.csv", "mouse_id,exposed\nm1,1\nm2,0\n");
  const auto b = dir.write("b.csv", "mouse_id,session,b0,b1\nm1,1,3,0\nm2,1,2\n");
  const auto o = run({"--command", "ingest-check", "--exposures", ex, "--bins", b, "--bin-width", "30"});
  EXPECT_EQ(o.code, 1);
  const auto j = json::parse(o.out);
  ASSERT_EQ(j["rows"].size(), 1u);
  EXPECT_EQ(j["rows"][0]["kind"], "schema");
  EXPECT_NE(j["rows"][0]["message"].get<std::string>().find("line 3"), std::string::npos);
}

TEST(CliFormat, CsvMatchesJson) {
  const fixtures::TempDir dir;
  const auto files = fixtures::write_study(dir, fixtures::study_fixture(21, 5, 5, 25));
  const auto j = json::parse(run(study_args(files, "curves")).out);
  const auto c = run(with(study_args(files, "curves"), {"--format", "csv"}));
  ASSERT_EQ(c.code, 0) << c.err;

  std::istringstream in(c.out);
  std::string line;
  std::vector<std::vector<double>> table;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.rfind("# ", 0) == 0) {
      if (line.rfind("# theta_hat=", 0) == 0) {
        EXPECT_NEAR(std::stod(line.substr(12)), j["theta_hat"].get<double>(), 1e-12);
      }
      continue;
    }
    if (!header_seen) {
      EXPECT_EQ(line, "theta,mean_reward_exposed,mean_reward_control");
      header_seen = true;
      continue;
    }
    std::vector<double> row;
    std::istringstream cells(line);
    for (std::string cell; std::getline(cells, cell, ',');) row.push_back(std::stod(cell));
    table.push_back(row);
  }
  ASSERT_EQ(table.size(), j["rows"].size());
  for (std::size_t k = 0; k < table.size(); ++k) {
    const auto& r = j["rows"][k];
    EXPECT_NEAR(table[k][0], r["theta"].get<double>(), 1e-12);
    EXPECT_NEAR(table[k][1], r["mean_reward_exposed"].get<double>(), 1e-12 * std::max(1.0, std::abs(table[k][1])));
    EXPECT_NEAR(table[k][2], r["mean_reward_control"].get<double>(), 1e-12 * std::max(1.0, std::abs(table[k][2])));
  }
}

TEST(CliErrors, ConfigurationErrorsExitTwo) {
  for (const auto& args : std::vector<std::vector<std::string>>{
           {},
           {"--command", "bogus"},
           {"--command", "estimate", "--norm", "l3"},
           {"--command", "simulate-mc", "--weights", "sixty-minus-midpoint"},
           {"--command", "simulate-mc", "--datasets", "0"},
           {"--command", "curves", "--grid-points", "1"},
           {"--command", "estimate", "--bins", "a", "--events", "b"},
           {"--command", "estimate", "--bin-width", "7", "--exposures", "x", "--bins", "y"}}) {
    const auto o = run(args);
    EXPECT_EQ(o.code, 2) << o.err;
    EXPECT_EQ(error_of(o)["class"], "configuration") << o.err;
  }
}

TEST(CliErrors, ErrorObjectOnStderrOnly) {
  const auto o = run({"--command", "estimate", "--exposures", "/nonexistent/e.csv", "--bins", "b.csv",
                      "--optimal", "1"});
  EXPECT_EQ(o.code, 1);
  EXPECT_TRUE(o.out.empty());
  const auto e = error_of(o);
  EXPECT_TRUE(e.contains("message"));
}

TEST(CliOutput, ConfigEchoCarriesSeed) {
  const TwoMouseFiles f;
  const auto o = run(with(f.args("estimate"), {"--seed", "42"}));
  ASSERT_EQ(o.code, 0);
  const auto cfg = json::parse(o.out)["config"];
  EXPECT_EQ(cfg["seed"], 42);
  EXPECT_EQ(cfg["command"], "estimate");
  EXPECT_EQ(cfg["norm"], "l2");
}

TEST(CliOutput, OutFileGetsDocumentAndStdoutGetsSummary) {
  const TwoMouseFiles f;
  const auto path = f.dir.file("est.json");
  const auto o = run(with(f.args("estimate"), {"--out", path}));
  ASSERT_EQ(o.code, 0);
  EXPECT_NE(o.out.find("theta_e = 0.2"), std::string::npos);
  EXPECT_NEAR(json::parse(fixtures::read_file(path))["rows"][0]["theta_e"].get<double>(), 0.2, 1e-9);
}

TEST(CliOutput, HelpListsOptions) {
  const auto o = run({"--help"});
  EXPECT_EQ(o.code, 0);
  EXPECT_NE(o.out.find("--command"), std::string::npos);
  EXPECT_NE(o.out.find("--shape-scope"), std::string::npos);
}
