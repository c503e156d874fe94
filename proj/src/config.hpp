#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "enkf/benchmark.hpp"
#include "enkf/filter.hpp"

namespace enkf::experiment {

/// Malformed or inconsistent configuration; the CLI maps it to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

struct VariantSpec {
  FilterKind kind = FilterKind::EnKF;
  bool constant = false;
  bool adaptive = false;
  /// Overrides the experiment integrator for this filter only.
  std::optional<IntegratorSpec> integrator;

  std::string name() const;
};

/// "enkf", "etkf-ai", "eakf-ci", "enkf-cai", ... (case-insensitive).
VariantSpec parse_variant(std::string_view token);
std::vector<VariantSpec> parse_variants(std::string_view comma_separated);

/// "rk4", "rk4:0.0025", "implicit-euler:1e-2"; bare names take the default step.
IntegratorSpec parse_integrator(std::string_view text);
std::string integrator_label(const IntegratorSpec& spec);

enum class ModelKind { Lorenz96, Linear };

struct ExperimentConfig {
  ModelKind model_kind = ModelKind::Lorenz96;
  double forcing = 4.0;
  int dimension = 5;
  /// Linear model x' = A x with noise covariance R added once per interval.
  Mat linear_drift;
  Mat linear_noise;
  int members = 6;
  Mat h_raw;
  Mat gamma;

  std::vector<VariantSpec> variants;
  double rho = 0.1;
  ConstantInflation constant_kind = ConstantInflation::Additive;
  double c_phi = 1.0;
  /// Derive (M1, M2) from the climatological benchmark unless both are given.
  bool derive_thresholds = true;
  std::optional<double> m1;
  std::optional<double> m2;
  std::string thresholds_file;
  NoiseDimension noise_dimension = NoiseDimension::Observed;
  bool literal_esrf_theta = false;

  IntegratorSpec integrator = IntegratorSpec::explicit_euler();
  IntegratorSpec truth_integrator = IntegratorSpec::explicit_euler();
  IntegratorSpec climatology_integrator = IntegratorSpec::rk4();
  ClimatologyOptions climatology;

  double h = 0.05;
  double total_time = 100.0;
  int trials = 100;
  std::uint64_t seed = 1;
  int jobs = 0;
  bool literal_rmse = false;

  std::vector<double> sweep_rho;
  std::vector<double> sweep_h;
  std::vector<IntegratorSpec> sweep_integrators;

  /// Number of assimilation cycles ceil(T / h).
  long cycles() const;
  /// First recorded cycle T / (2h); the window runs to cycles() inclusive.
  long window_start() const;
  bool any_adaptive() const;
  ModelSpec<double> model() const;
  FilterConfig filter_config(const VariantSpec& v, double m1_value, double m2_value) const;
  IntegratorSpec integrator_for(const VariantSpec& v) const;
  void validate() const;
};

/// Protocol defaults: d = 5, K = 6, H = e_1^T, noise variance 0.01, h = 0.05,
/// T = 100, N = 100, rho = 0.1, explicit Euler with step 1e-4, all four EnKF
/// variants.
ExperimentConfig default_config();

/// "F4", "F8", "F16" (or a bare number) sets the forcing.
double parse_regime(std::string_view regime);

void apply_json(ExperimentConfig& config, const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);

/// Parses a JSON configuration file on top of default_config(). Syntax errors
/// are reported as "path:line:column: message".
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");

/// FNV-1a of the canonical JSON form, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

}  // namespace enkf::experiment
