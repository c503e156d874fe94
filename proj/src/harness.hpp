#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "config.hpp"
#include "enkf/benchmark.hpp"
#include "enkf/stability.hpp"

namespace enkf::experiment {

/// Climatology plus the benchmark and the thresholds actually in force.
struct Thresholds {
  double m1 = 0;
  double m2 = 0;
  Climatology<double> climatology;
  std::optional<BenchmarkResult<double>> benchmark;
  double forcing = 0;
  int members = 0;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const Thresholds& t);
Thresholds thresholds_from_json(const nlohmann::json& j);
Thresholds load_thresholds(const std::string& path);

/// Runs the climatology and benchmark for the configuration.
Thresholds derive_thresholds(const ExperimentConfig& config);

/// Everything shared by the trials of one experiment.
struct ExperimentContext {
  ExperimentConfig config;
  ModelSpec<double> model;
  ObservationOperator<double> op;
  Thresholds thresholds;
  EnergyParams energy;
};

/// Resolves thresholds: explicit M1/M2 in the config win, then a thresholds
/// file, then derivation. With derivation disabled and no other source a
/// ConfigError is raised. `reuse` skips recomputing the climatology.
ExperimentContext make_context(const ExperimentConfig& config, const std::optional<Thresholds>& reuse = std::nullopt);

/// Truth, observations and initial ensemble of one trial; shared by every
/// filter variant of the trial.
struct TrialInputs {
  std::vector<Vec> truth;  // cycles + 1 states, truth[0] initial
  std::vector<Observation<double>> observations;  // observations[n-1] at cycle n
  Mat initial_ensemble;
  std::optional<long> truth_diverged_at;
};

TrialInputs make_trial_inputs(const ExperimentContext& ctx, int trial);

struct TrialRecord {
  std::string variant;
  int trial = 0;
  /// Per-cycle series indexed by n - 1, truncated at divergence.
  std::vector<double> error;
  std::vector<double> theta;
  std::vector<double> xi;
  std::vector<double> lambda;
  std::vector<std::uint8_t> triggered;
  std::vector<double> cosine;
  std::vector<double> energy;
  DivergenceVerdict verdict;
  long trigger_count = 0;
  std::optional<long> first_trigger;
  long innovation_checks = 0;
  long innovation_violations = 0;
  double max_innovation_ratio = 0;
  double rmse = 0;
  double correlation = 0;
  long skipped_correlation_steps = 0;
  double seconds = 0;
  long evaluations = 0;
};

TrialRecord run_trial(const ExperimentContext& ctx, const VariantSpec& variant, const TrialInputs& inputs, int trial);

/// Root mean square of |mean - truth| over cycles T/(2h)..T/h. The literal
/// form sqrt((2/T) sum) is used when `literal` is set. NaN on divergence.
double rmse(const TrialRecord& record, double h, double total_time, bool literal = false);

/// Mean cosine of (mean - climatological mean, truth - climatological mean)
/// over the same window; zero-norm cycles are skipped. NaN on divergence.
double pattern_correlation(const TrialRecord& record, double h, double total_time);

struct BatchSummary {
  std::string variant;
  std::string integrator;
  int trials = 0;
  int diverged = 0;
  double divergence_fraction = 0;
  /// NaN when any trial diverged.
  double rmse = 0;
  double correlation = 0;
  /// Over non-diverged trials only.
  double rmse_finite = 0;
  double correlation_finite = 0;
  int triggered_trials = 0;
  double triggered_fraction = 0;
  double triggers_per_triggered_trial = 0;
  double triggers_per_trial = 0;
  /// Theta/Xi statistics pooled over every analysis cycle of every trial.
  double theta_mean = 0;
  double xi_mean = 0;
  double p_theta = 0;
  double p_xi = 0;
  long statistic_samples = 0;
  /// Exceedance over the recorded window T/(2h)..T/h only.
  double p_theta_window = 0;
  double p_xi_window = 0;
  long innovation_checks = 0;
  long innovation_violations = 0;
  double max_innovation_ratio = 0;
  double seconds_per_trial = 0;
  /// Slope of log of the trial-averaged energy over the window, per cycle.
  double energy_log_slope = 0;
  long solver_failures = 0;
};

BatchSummary summarize(const std::vector<TrialRecord>& records, const ExperimentContext& ctx,
                       const VariantSpec& variant);

struct BatchResult {
  std::vector<VariantSpec> variants;
  /// records[v][trial]
  std::vector<std::vector<TrialRecord>> records;
  std::vector<BatchSummary> summaries;
  double seconds = 0;
};

struct BatchOptions {
  int jobs = 0;  // 0: hardware concurrency
  bool keep_records = true;
  std::function<void(int done, int total)> progress;
};

/// Runs every variant on every trial. Trials run in parallel; results are
/// folded in trial order, so outputs do not depend on scheduling.
BatchResult run_batch(const ExperimentContext& ctx, const BatchOptions& options = {});

struct Histogram {
  std::vector<double> edges;
  std::vector<long> counts;
  double threshold = 0;
  double exceedance = 0;
  double mean = 0;
  long samples = 0;
};

struct StatisticsHistograms {
  Histogram theta;
  Histogram xi;
};

/// Pools Theta and Xi over cycles first_cycle.. of every trial.
StatisticsHistograms statistics_histograms(const std::vector<TrialRecord>& records, double m1, double m2,
                                           int bins = 40, long first_cycle = 1);

enum class SweepAxis { Rho, H, Integrator };
SweepAxis parse_axis(std::string_view s);
std::string_view to_string(SweepAxis a);

struct SweepPoint {
  std::string label;
  double value = 0;
  std::vector<BatchSummary> summaries;
};

/// One batch per grid value; per-trial seeds are shared across the grid and
/// the climatology is computed once (or taken from `reuse`).
std::vector<SweepPoint> sweep(const ExperimentConfig& config, SweepAxis axis, const BatchOptions& options = {},
                              const std::optional<Thresholds>& reuse = std::nullopt);

/// Distances between two filter runs from independent initial ensembles that
/// share truth, observations and noise.
std::vector<double> ergodicity_distances(const ExperimentContext& ctx, const VariantSpec& variant,
                                         const TrialInputs& inputs, int trial);

}  // namespace enkf::experiment
