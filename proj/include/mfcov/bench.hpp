#ifndef MFCOV_BENCH_HPP
#define MFCOV_BENCH_HPP

/// Experiment harness: configuration ingestion, seeded pilot/tune/evaluation
/// phases for the coupled-Gaussian and metric-learning experiments, CSV and
/// JSON reporting, and the module self-test suite.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mfcov/estimators.hpp"
#include "mfcov/metric.hpp"
#include "mfcov/models.hpp"
#include "mfcov/spd.hpp"
#include "mfcov/tangent.hpp"

namespace mfcov {

/// Invalid or unreadable configuration. The CLI maps this to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Estimation failure mid-run that cannot be recorded per trial.
/// The CLI maps this to exit code 2.
class RunError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimpleGaussianConfig {
  int dim = 4;
  double noise_var = 0.7;
  double cost_hi = 1.0;
  double cost_lo = 0.01;
  std::vector<double> budgets = {6.0, 56.0, 106.0, 206.0};
  double coupled_fraction = 0.85;
  /// Optional explicit (pairs, extra_low) per budget; empty means derive the
  /// counts from coupled_fraction.
  std::vector<std::pair<int, int>> explicit_counts;
  int pilots = 1000;
  int trials = 500;
  std::vector<double> lambda_grid;  // default: 18 log-spaced in [1e-3, 1e2]
  int tune_trials = 32;
  std::vector<std::string> estimators = {"mrmf", "emf", "lemf", "hf", "lf"};
  double gamma_eps = 1e-8;
  SolverSettings solver;
};

struct MetricLearningConfig {
  int dim = 6;
  double mean_gap = 2.0;
  double noise_var = 0.05;
  double budget = 60.0;
  double cost_hi = 1.0;
  double cost_lo = 0.01;
  double coupled_fraction = 0.85;
  int pilots = 400;
  int reference_pilots = 12000;
  int test_points = 5000;
  int trials = 50;
  double geodesic_t = 0.1;
  std::vector<double> lambda_grid;  // default: {3.0} (coarse direct search)
  int tune_trials = 16;
  std::vector<std::string> estimators = {"mrmf", "emf", "lemf", "hf"};
  double gamma_eps = 1e-8;
  SolverSettings solver;
};

struct ExperimentConfig {
  std::string kind = "simple-gaussian";  // | "metric-learning" | "property-suite"
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  bool record_wall_time = false;  // false writes 0.000, keeping CSVs bit-stable
  int threads = 1;                // accepted for interface compatibility
  SimpleGaussianConfig simple;
  MetricLearningConfig metric;
  std::string raw_text;  // original config text, hashed into the manifest
};

/// Parses a JSON config document. Unknown keys are rejected.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);
/// MFCOV_OUT_DIR overrides out_dir; MFCOV_THREADS overrides threads.
void apply_env_overrides(ExperimentConfig& config);

/// One evaluated estimator on one trial.
struct TrialRecord {
  int trial = 0;
  double budget = 0.0;
  std::string estimator;
  double se_frobenius = 0.0;
  double se_intrinsic = 0.0;  // +inf when the estimate is not SPD
  double min_eig = 0.0;
  std::optional<double> mahalanobis;  // attained value; mrmf rows only
  double wall_ms = 0.0;
};

extern const char* const kCsvHeader;  // column names, exact order
std::string format_csv_row(const TrialRecord& rec);
std::string records_to_csv(const std::vector<TrialRecord>& records);
std::vector<TrialRecord> parse_csv_text(const std::string& text);

/// Per-(budget, estimator) aggregate over trials.
struct GroupSummary {
  double budget = 0.0;
  std::string estimator;
  int trials = 0;
  double median_se_frobenius = 0.0;
  double mean_se_frobenius = 0.0;
  double median_se_intrinsic = 0.0;  // +inf admissible
  double mean_se_intrinsic = 0.0;    // +inf admissible
  double indefinite_fraction = 0.0;  // fraction of trials with min_eig <= 0
  int mahalanobis_count = 0;
  double mean_mahalanobis = 0.0;  // over rows carrying a value
};

/// Groups records by (budget, estimator) in first-appearance order.
std::vector<GroupSummary> summarize_records(
    const std::vector<TrialRecord>& records);
/// {"summaries": [...]} with infinities rendered as the string "inf".
std::string summaries_to_json(const std::vector<GroupSummary>& summaries);

/// Pilot/tune products for one budget of the coupled-Gaussian experiment.
struct BudgetPhase {
  BudgetAllocation alloc;
  std::map<int, SpdMatrix> pilot_means;  // Karcher mean per fidelity
  TangentOperator gamma_hat;
  TangentOperator gamma_inv;
  double alpha_euclidean = 0.0;
  double alpha_log = 0.0;
  bool tuned = false;
  double lambda = 0.0;
  LambdaTuneResult tune_result;
};

struct SimpleGaussianRun {
  SpdMatrix sigma_hi;  // ground truth
  std::vector<BudgetPhase> phases;
  std::vector<TrialRecord> records;
};

/// Executes truth/pilot/tune/evaluation for the coupled-Gaussian experiment.
/// Pure compute: writes nothing. The logged variant routes per-trial failure
/// notes to the given stream; the plain overload uses stderr.
SimpleGaussianRun run_simple_gaussian(const ExperimentConfig& config);
SimpleGaussianRun run_simple_gaussian_logged(const ExperimentConfig& config,
                                             std::ostream& log);

/// Pilot/tune products for one class of the metric-learning experiment.
struct MetricClassPhase {
  BudgetAllocation alloc;
  TangentOperator gamma_hat;
  TangentOperator gamma_inv;
  Eigen::VectorXd mean_gains;  // coordinatewise control-variate gains
  double alpha_euclidean = 0.0;
  double alpha_log = 0.0;
  bool tuned = false;
  double lambda = 0.0;
};

struct MetricLearningRun {
  MetricMatrix reference;
  std::vector<MetricClassPhase> phases;  // one per class
  std::vector<TrialRecord> records;
};

/// Executes reference/pilot/tune/evaluation for the metric-learning
/// experiment. Pure compute: writes nothing. The logged variant routes
/// per-trial failure notes to the given stream; the plain overload uses
/// stderr.
MetricLearningRun run_metric_learning(const ExperimentConfig& config);
MetricLearningRun run_metric_learning_logged(const ExperimentConfig& config,
                                             std::ostream& log);

/// Full `run` entry point: dispatches on config.kind, writes trials.csv,
/// summary.json, manifest.json, and the estimated covariance-operator files
/// under the output directory. Returns a process exit code (0 success,
/// 2 runtime failure; property-suite kind returns 2 when any check fails).
int run_experiment(const ExperimentConfig& config, std::ostream& log);

/// Pilot + tune phases only; prints the tuned lambda report as JSON.
int run_tune(const ExperimentConfig& config, std::ostream& out,
             std::ostream& log);

/// Reads a per-trial CSV and prints recomputed summaries as JSON.
int summarize_file(const std::string& csv_path, std::ostream& out,
                   std::ostream& log);

/// Fast deterministic invariant checks across all modules; logs one line per
/// check. Returns true when every check passes.
bool run_property_suite(std::ostream& log);

/// Equal-width binned counts over [lo, hi] for external plotting. Values
/// outside the range (including non-finite ones) land in `underflow` /
/// `overflow`; hi itself falls in the last bin.
struct BinnedCounts {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<int> counts;
  int underflow = 0;
  int overflow = 0;
};

BinnedCounts bin_counts(const std::vector<double>& values, int bins, double lo,
                        double hi);

}  // namespace mfcov

#endif  // MFCOV_BENCH_HPP
