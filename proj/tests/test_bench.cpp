#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "../vendor/doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mfcov/bench.hpp"

using namespace mfcov;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

TrialRecord make_record(int trial, double budget, const std::string& est,
                        double sef, double sei, double me) {
  TrialRecord r;
  r.trial = trial;
  r.budget = budget;
  r.estimator = est;
  r.se_frobenius = sef;
  r.se_intrinsic = sei;
  r.min_eig = me;
  return r;
}

std::string tiny_simple_config(const std::string& extra_top = "") {
  return std::string("{") + extra_top +
         "\"kind\":\"simple-gaussian\",\"seed\":42,\"simple_gaussian\":{"
         "\"dim\":3,\"noise_var\":0.5,\"budgets\":[6,20],\"pilots\":40,"
         "\"trials\":4,\"tune_trials\":2,\"lambda_grid\":[0.1,1.0],"
         "\"estimators\":[\"mrmf\",\"emf\",\"lemf\",\"hf\",\"lf\"]}}";
}

}  // namespace

TEST_CASE("parse_config_text: empty object yields the documented defaults") {
  const ExperimentConfig cfg = parse_config_text("{}");
  CHECK(cfg.kind == "simple-gaussian");
  CHECK(cfg.seed == 1);
  CHECK(cfg.out_dir == "out");
  CHECK(cfg.record_wall_time == false);
  CHECK(cfg.threads == 1);
  CHECK(cfg.simple.dim == 4);
  CHECK(cfg.simple.noise_var == 0.7);
  CHECK(cfg.simple.budgets == std::vector<double>{6.0, 56.0, 106.0, 206.0});
  CHECK(cfg.simple.coupled_fraction == 0.85);
  CHECK(cfg.simple.pilots == 1000);
  CHECK(cfg.simple.trials == 500);
  CHECK(cfg.simple.tune_trials == 32);
  CHECK(cfg.simple.estimators ==
        std::vector<std::string>{"mrmf", "emf", "lemf", "hf", "lf"});
  CHECK(cfg.metric.dim == 6);
  CHECK(cfg.metric.geodesic_t == 0.1);
  CHECK(cfg.metric.lambda_grid == std::vector<double>{3.0});
  CHECK(cfg.simple.solver.tol == 1e-8);
  CHECK(cfg.simple.solver.max_iter == 2000);
  CHECK(cfg.simple.solver.gradient == GradientMethod::Analytic);
  CHECK(cfg.raw_text == "{}");
}

TEST_CASE("parse_config_text rejects malformed documents") {
  CHECK_THROWS_AS(parse_config_text("not json"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("[1,2]"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("{\"kind\":\"nope\"}"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("{\"mystery\":1}"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("{\"simple_gaussian\":{\"mystery\":1}}"),
                  ConfigError);
  CHECK_THROWS_AS(parse_config_text("{\"metric_learning\":{\"mystery\":1}}"),
                  ConfigError);
  CHECK_THROWS_AS(
      parse_config_text("{\"simple_gaussian\":{\"solver\":{\"mystery\":1}}}"),
      ConfigError);
  CHECK_THROWS_AS(
      parse_config_text(
          "{\"simple_gaussian\":{\"lambda_grid\":{\"lo\":1,\"hi\":2,\"oops\":3}}}"),
      ConfigError);
  CHECK_THROWS_AS(parse_config_text("{\"seed\":-3}"), ConfigError);
}

TEST_CASE("parse_config_text: lambda grid accepts both spellings") {
  const ExperimentConfig a = parse_config_text(
      "{\"simple_gaussian\":{\"lambda_grid\":[0.5,1.5,2.5]}}");
  CHECK(a.simple.lambda_grid == std::vector<double>{0.5, 1.5, 2.5});
  const ExperimentConfig b = parse_config_text(
      "{\"simple_gaussian\":{\"lambda_grid\":{\"lo\":0.01,\"hi\":100.0,"
      "\"count\":5}}}");
  REQUIRE(b.simple.lambda_grid.size() == 5);
  CHECK(b.simple.lambda_grid.front() == 0.01);
  CHECK(b.simple.lambda_grid.back() == 100.0);
  CHECK_THROWS_AS(
      parse_config_text("{\"simple_gaussian\":{\"lambda_grid\":[2.0,1.0]}}"),
      ConfigError);
}

TEST_CASE("parse_config_text: estimator lists are validated per experiment") {
  CHECK_THROWS_AS(
      parse_config_text("{\"simple_gaussian\":{\"estimators\":[\"mrmf\",\"bogus\"]}}"),
      ConfigError);
  CHECK_THROWS_AS(
      parse_config_text("{\"simple_gaussian\":{\"estimators\":[\"hf\",\"hf\"]}}"),
      ConfigError);
  CHECK_THROWS_AS(
      parse_config_text("{\"simple_gaussian\":{\"estimators\":[]}}"), ConfigError);
  // Low-only has no meaning for metric learning and is rejected there.
  CHECK_THROWS_AS(
      parse_config_text(
          "{\"kind\":\"metric-learning\",\"metric_learning\":{\"estimators\":"
          "[\"lf\"]}}"),
      ConfigError);
  const ExperimentConfig ok = parse_config_text(
      "{\"kind\":\"metric-learning\",\"metric_learning\":{\"estimators\":"
      "[\"lemf\",\"hf\"]}}");
  CHECK(ok.metric.estimators == std::vector<std::string>{"lemf", "hf"});
}

TEST_CASE("parse_config_text: budgets and allocation are checked up front") {
  CHECK_THROWS_AS(
      parse_config_text("{\"simple_gaussian\":{\"budgets\":[56,6]}}"), ConfigError);
  CHECK_THROWS_AS(
      parse_config_text("{\"simple_gaussian\":{\"budgets\":[]}}"), ConfigError);
  // explicit_counts must pair up with the budgets.
  CHECK_THROWS_AS(
      parse_config_text("{\"simple_gaussian\":{\"budgets\":[6,56],"
                        "\"explicit_counts\":[[5,90]]}}"),
      ConfigError);
  // Counts exceeding the budget are caught at parse time.
  CHECK_THROWS_AS(
      parse_config_text("{\"simple_gaussian\":{\"budgets\":[6],"
                        "\"explicit_counts\":[[50,0]]}}"),
      ConfigError);
  const ExperimentConfig ok = parse_config_text(
      "{\"simple_gaussian\":{\"budgets\":[6],\"explicit_counts\":[[5,90]]}}");
  REQUIRE(ok.simple.explicit_counts.size() == 1);
  CHECK(ok.simple.explicit_counts[0] == std::pair<int, int>(5, 90));
}

TEST_CASE("parse_config_text: solver gradient spelling") {
  const ExperimentConfig fd = parse_config_text(
      "{\"simple_gaussian\":{\"solver\":{\"gradient\":\"fd\"}}}");
  CHECK(fd.simple.solver.gradient == GradientMethod::FiniteDifference);
  const ExperimentConfig an = parse_config_text(
      "{\"simple_gaussian\":{\"solver\":{\"gradient\":\"analytic\"}}}");
  CHECK(an.simple.solver.gradient == GradientMethod::Analytic);
  CHECK_THROWS_AS(
      parse_config_text("{\"simple_gaussian\":{\"solver\":{\"gradient\":\"magic\"}}}"),
      ConfigError);
}

TEST_CASE("apply_env_overrides honors and validates the environment") {
  ExperimentConfig cfg;
  cfg.out_dir = "orig";
  cfg.threads = 1;

  ::unsetenv("MFCOV_OUT_DIR");
  ::unsetenv("MFCOV_THREADS");
  apply_env_overrides(cfg);
  CHECK(cfg.out_dir == "orig");
  CHECK(cfg.threads == 1);

  ::setenv("MFCOV_OUT_DIR", "elsewhere", 1);
  ::setenv("MFCOV_THREADS", "3", 1);
  apply_env_overrides(cfg);
  CHECK(cfg.out_dir == "elsewhere");
  CHECK(cfg.threads == 3);

  ::setenv("MFCOV_THREADS", "abc", 1);
  CHECK_THROWS_AS(apply_env_overrides(cfg), ConfigError);
  ::setenv("MFCOV_THREADS", "0", 1);
  CHECK_THROWS_AS(apply_env_overrides(cfg), ConfigError);

  ::unsetenv("MFCOV_OUT_DIR");
  ::unsetenv("MFCOV_THREADS");
}

TEST_CASE("CSV rows freeze the exact field formatting") {
  TrialRecord r = make_record(1, 6.0, "mrmf", 0.125, 0.25, 0.5);
  r.mahalanobis = 9.5;
  r.wall_ms = 1.25;
  CHECK(format_csv_row(r) == "1,6,mrmf,0.125,0.25,0.5,9.5,1.250");

  TrialRecord fail = make_record(2, 56.0, "emf", kInf, kInf, -kInf);
  fail.wall_ms = 0.0;
  CHECK(format_csv_row(fail) == "2,56,emf,inf,inf,-inf,,0.000");

  const std::string header(kCsvHeader);
  CHECK(header ==
        "trial,budget,estimator,se_frobenius,se_intrinsic,min_eig,"
        "mahalanobis,wall_ms");
}

TEST_CASE("CSV round-trips through text exactly") {
  TrialRecord a = make_record(0, 6.0, "mrmf", 0.015625, 0.4, 0.001953125);
  a.mahalanobis = 6.25;
  TrialRecord b = make_record(1, 6.0, "emf", kInf, kInf, -0.25);
  // A third-of-one value exercises the 17-significant-digit round trip.
  TrialRecord c = make_record(2, 206.0, "lf", 1.0 / 3.0, 2.0 / 3.0, 1e-9);
  const std::vector<TrialRecord> recs = {a, b, c};
  const std::string text = records_to_csv(recs);
  const std::vector<TrialRecord> back = parse_csv_text(text);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].trial == recs[i].trial);
    CHECK(back[i].budget == recs[i].budget);
    CHECK(back[i].estimator == recs[i].estimator);
    CHECK(back[i].se_frobenius == recs[i].se_frobenius);
    CHECK(back[i].se_intrinsic == recs[i].se_intrinsic);
    CHECK(back[i].min_eig == recs[i].min_eig);
    CHECK(back[i].mahalanobis.has_value() == recs[i].mahalanobis.has_value());
    if (back[i].mahalanobis.has_value()) {
      CHECK(*back[i].mahalanobis == *recs[i].mahalanobis);
    }
    CHECK(back[i].wall_ms == recs[i].wall_ms);
  }
  // And the re-serialization is byte-identical.
  CHECK(records_to_csv(back) == text);
}

TEST_CASE("parse_csv_text rejects foreign and truncated input") {
  CHECK_THROWS_AS(parse_csv_text(""), RunError);
  CHECK_THROWS_AS(parse_csv_text("a,b,c\n1,2,3\n"), RunError);
  const std::string header(kCsvHeader);
  CHECK_THROWS_AS(parse_csv_text(header + "\n"), RunError);  // no rows
  CHECK_THROWS_AS(parse_csv_text(header + "\n1,6,mrmf,0.1\n"), RunError);
  CHECK_THROWS_AS(
      parse_csv_text(header + "\n1,6,mrmf,x,0.2,0.3,,0.000\n"), RunError);
}

TEST_CASE("summarize_records: frozen group statistics") {
  std::vector<TrialRecord> recs;
  // Group (6, mrmf): se_f {1, 3}, se_i {2, 4}, all PD, one mahalanobis.
  recs.push_back(make_record(0, 6.0, "mrmf", 1.0, 2.0, 0.5));
  recs.back().mahalanobis = 5.5;
  recs.push_back(make_record(1, 6.0, "mrmf", 3.0, 4.0, 0.25));
  // Group (6, emf): even count with one infinite upper half.
  recs.push_back(make_record(0, 6.0, "emf", 1.0, kInf, -0.1));
  recs.push_back(make_record(1, 6.0, "emf", 2.0, 6.0, 0.3));
  // Later budget appears after: order of first appearance is preserved.
  recs.push_back(make_record(0, 56.0, "mrmf", 7.0, 8.0, 0.9));

  const std::vector<GroupSummary> s = summarize_records(recs);
  REQUIRE(s.size() == 3);
  CHECK(s[0].budget == 6.0);
  CHECK(s[0].estimator == "mrmf");
  CHECK(s[0].trials == 2);
  CHECK(s[0].median_se_frobenius == doctest::Approx(2.0));
  CHECK(s[0].mean_se_frobenius == doctest::Approx(2.0));
  CHECK(s[0].median_se_intrinsic == doctest::Approx(3.0));
  CHECK(s[0].indefinite_fraction == doctest::Approx(0.0));
  CHECK(s[0].mahalanobis_count == 1);
  CHECK(s[0].mean_mahalanobis == doctest::Approx(5.5));

  CHECK(s[1].estimator == "emf");
  CHECK(s[1].median_se_frobenius == doctest::Approx(1.5));
  CHECK(std::isinf(s[1].median_se_intrinsic));
  CHECK(std::isinf(s[1].mean_se_intrinsic));
  CHECK(s[1].indefinite_fraction == doctest::Approx(0.5));
  CHECK(s[1].mahalanobis_count == 0);

  CHECK(s[2].budget == 56.0);
  CHECK(s[2].trials == 1);
  CHECK(s[2].median_se_frobenius == doctest::Approx(7.0));
}

TEST_CASE("summaries_to_json renders infinities and missing means") {
  std::vector<TrialRecord> recs;
  recs.push_back(make_record(0, 6.0, "emf", 1.0, kInf, -0.1));
  recs.push_back(make_record(1, 6.0, "emf", 2.0, 6.0, 0.3));
  const std::string json = summaries_to_json(summarize_records(recs));
  CHECK(json.find("\"summaries\"") != std::string::npos);
  CHECK(json.find("\"median_se_intrinsic\": \"inf\"") != std::string::npos);
  CHECK(json.find("\"mean_mahalanobis\": null") != std::string::npos);
  CHECK(json.find("\"indefinite_fraction\": 0.5") != std::string::npos);
}

TEST_CASE("bin_counts places edges, strays, and non-finite values") {
  const std::vector<double> values = {0.0, 0.49, 0.5, 1.0, 2.5,
                                      -1.0, std::nan("")};
  const BinnedCounts b = bin_counts(values, 2, 0.0, 1.0);
  REQUIRE(b.counts.size() == 2);
  CHECK(b.counts[0] == 2);  // 0.0 and 0.49
  CHECK(b.counts[1] == 2);  // 0.5 and the upper edge 1.0
  CHECK(b.underflow == 1);
  CHECK(b.overflow == 2);  // 2.5 and NaN
  CHECK(b.lo == 0.0);
  CHECK(b.hi == 1.0);
  CHECK_THROWS_AS(bin_counts(values, 0, 0.0, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(bin_counts(values, 3, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("tiny coupled-Gaussian run: shape, determinism, row invariants") {
  const ExperimentConfig cfg = parse_config_text(tiny_simple_config());
  std::ostringstream log;
  const SimpleGaussianRun run = run_simple_gaussian_logged(cfg, log);

  // 2 budgets x 4 trials x 5 estimators.
  CHECK(run.records.size() == 40);
  REQUIRE(run.phases.size() == 2);
  CHECK(run.phases[0].alloc.pairs == 5);
  CHECK(run.phases[0].alloc.extra_low == 90);
  CHECK(run.phases[0].tuned);
  CHECK((run.phases[0].lambda == 0.1 || run.phases[0].lambda == 1.0));

  for (const TrialRecord& r : run.records) {
    // The intrinsic error is finite exactly when the estimate is PD.
    CHECK(std::isfinite(r.se_intrinsic) == (r.min_eig > 0.0));
    if (r.estimator == "mrmf" && std::isfinite(r.se_frobenius)) {
      CHECK(r.mahalanobis.has_value());
      CHECK(r.min_eig > 0.0);  // penalized solve stays on the cone
    } else if (r.estimator != "mrmf") {
      CHECK(!r.mahalanobis.has_value());
    }
    CHECK(r.wall_ms == 0.0);  // record_wall_time defaults to off
  }

  // Bitwise reproducibility of the full record set.
  const SimpleGaussianRun again = run_simple_gaussian(cfg);
  CHECK(records_to_csv(again.records) == records_to_csv(run.records));

  // Summaries agree with a direct recomputation on one group.
  const std::vector<GroupSummary> sums = summarize_records(run.records);
  std::vector<double> sef;
  for (const TrialRecord& r : run.records) {
    if (r.budget == 6.0 && r.estimator == "mrmf") sef.push_back(r.se_frobenius);
  }
  std::sort(sef.begin(), sef.end());
  const double med = 0.5 * (sef[1] + sef[2]);
  bool found = false;
  for (const GroupSummary& g : sums) {
    if (g.budget == 6.0 && g.estimator == "mrmf") {
      CHECK(g.median_se_frobenius == doctest::Approx(med).epsilon(1e-12));
      CHECK(g.trials == 4);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("run_experiment writes the full artifact set and is rerunnable") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path("bench_test_out") / "simple";
  fs::remove_all(dir.parent_path());

  ExperimentConfig cfg = parse_config_text(tiny_simple_config());
  cfg.out_dir = dir.string();
  std::ostringstream log;
  REQUIRE(run_experiment(cfg, log) == 0);

  CHECK(fs::exists(dir / "trials.csv"));
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::exists(dir / "gamma_budget0.tanop"));
  CHECK(fs::exists(dir / "gamma_budget1.tanop"));

  std::ifstream in(dir / "trials.csv");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string first = ss.str();
  const std::vector<TrialRecord> recs = parse_csv_text(first);
  CHECK(recs.size() == 40);

  // The stored operator re-loads and matches the in-memory phase product.
  const LoadedOperator g = load_operator(dir / "gamma_budget0.tanop");
  const SimpleGaussianRun run = run_simple_gaussian(cfg);
  CHECK((g.op.mat - run.phases[0].gamma_hat.mat).norm() == 0.0);
  CHECK(g.slot_fidelities == std::vector<int>{0, 1});

  // Second run over the same config byte-stable on the CSV.
  std::ostringstream log2;
  REQUIRE(run_experiment(cfg, log2) == 0);
  std::ifstream in2(dir / "trials.csv");
  std::stringstream ss2;
  ss2 << in2.rdbuf();
  CHECK(ss2.str() == first);

  // summarize_file reproduces the embedded summary JSON for the same rows.
  std::ostringstream sumout, sumlog;
  REQUIRE(summarize_file((dir / "trials.csv").string(), sumout, sumlog) == 0);
  const std::string expected = summaries_to_json(summarize_records(recs));
  CHECK(sumout.str().find(expected.substr(0, expected.size() - 1)) !=
        std::string::npos);

  // Missing file exits 2 without throwing.
  std::ostringstream mout, mlog;
  CHECK(summarize_file((dir / "no_such.csv").string(), mout, mlog) == 2);

  fs::remove_all(dir.parent_path());
}

TEST_CASE("run_experiment dispatches the property suite") {
  ExperimentConfig cfg;
  cfg.kind = "property-suite";
  std::ostringstream log;
  CHECK(run_experiment(cfg, log) == 0);
  CHECK(log.str().find("[ok]") != std::string::npos);
}

TEST_CASE("tiny metric-learning run: shape and failure-row conventions") {
  const ExperimentConfig cfg = parse_config_text(
      "{\"kind\":\"metric-learning\",\"seed\":11,\"metric_learning\":{"
      "\"dim\":4,\"mean_gap\":2.0,\"noise_var\":0.05,\"budget\":30,"
      "\"pilots\":30,\"reference_pilots\":2000,\"test_points\":200,"
      "\"trials\":3,\"tune_trials\":2,\"lambda_grid\":[0.1,1.0],"
      "\"estimators\":[\"mrmf\",\"emf\",\"lemf\",\"hf\"]}}");
  std::ostringstream log;
  const MetricLearningRun run = run_metric_learning_logged(cfg, log);
  CHECK(run.records.size() == 12);  // 3 trials x 4 estimators
  REQUIRE(run.phases.size() == 2);
  CHECK(run.reference.provenance == "reference");
  CHECK(run.reference.a.dim() == 4);
  for (const TrialRecord& r : run.records) {
    CHECK(r.budget == 30.0);
    if (!std::isfinite(r.se_frobenius)) {
      // Failure rows: both errors infinite; the estimator name survives.
      CHECK(std::isinf(r.se_intrinsic));
      CHECK((r.estimator == "emf" || r.min_eig <= 0.0));
    }
  }
  // Determinism here too.
  const MetricLearningRun again = run_metric_learning(cfg);
  CHECK(records_to_csv(again.records) == records_to_csv(run.records));
}
