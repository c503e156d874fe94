#include "harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace enkf::experiment {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Salt separating the climatology run from the per-trial streams.
constexpr std::uint64_t kClimatologySalt = 0xC11A7010ULL;

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

json vector_to_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec vector_from_json(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json matrix_rows(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vector_to_json(m.row(r).transpose()));
  return rows;
}

Mat matrix_from_rows(const json& j) {
  const auto n = static_cast<Eigen::Index>(j.size());
  Mat m(n, n);
  for (Eigen::Index r = 0; r < n; ++r) m.row(r) = vector_from_json(j[static_cast<std::size_t>(r)]).transpose();
  return m;
}

// Gaussian draws from the climatology; tolerant of semi-definite estimates.
class ClimatologySampler {
 public:
  explicit ClimatologySampler(const Climatology<double>& c) : mean_(c.mean), noise_(c.covariance) {}
  Vec draw(RngStream& rng) {
    Vec v = mean_;
    noise_.add_to(v, rng);
    return v;
  }

 private:
  Vec mean_;
  SystemNoise<double> noise_;
};

}  // namespace

json to_json(const Thresholds& t) {
  json j{
      {"M1", t.m1},
      {"M2", t.m2},
      {"forcing", t.forcing},
      {"members", t.members},
      {"seed", t.seed},
      {"climatology",
       {{"mean", vector_to_json(t.climatology.mean)},
        {"covariance", matrix_rows(t.climatology.covariance)},
        {"samples", t.climatology.samples},
        {"burn_in", t.climatology.burn_in},
        {"run_length", t.climatology.run_length},
        {"interval", t.climatology.interval}}},
  };
  if (t.benchmark) {
    j["benchmark"] = {{"error_a", t.benchmark->error_a},
                      {"benchmark_rmse", t.benchmark->benchmark_rmse()},
                      {"sigma_theta", t.benchmark->sigma_theta},
                      {"m_xi", t.benchmark->m_xi},
                      {"noise_term", t.benchmark->noise_term},
                      {"posterior_cov", matrix_rows(t.benchmark->posterior_cov)}};
  }
  return j;
}

Thresholds thresholds_from_json(const json& j) {
  try {
    Thresholds t;
    t.m1 = j.at("M1").get<double>();
    t.m2 = j.at("M2").get<double>();
    t.forcing = j.value("forcing", 0.0);
    t.members = j.value("members", 0);
    t.seed = j.value("seed", std::uint64_t{0});
    const json& c = j.at("climatology");
    t.climatology.mean = vector_from_json(c.at("mean"));
    t.climatology.covariance = matrix_from_rows(c.at("covariance"));
    t.climatology.samples = c.value("samples", 0L);
    t.climatology.burn_in = c.value("burn_in", 0.0);
    t.climatology.run_length = c.value("run_length", 0.0);
    t.climatology.interval = c.value("interval", 0.0);
    if (j.contains("benchmark")) {
      const json& b = j["benchmark"];
      BenchmarkResult<double> r;
      r.error_a = b.at("error_a").get<double>();
      r.sigma_theta = b.at("sigma_theta").get<double>();
      r.m_xi = b.at("m_xi").get<double>();
      r.noise_term = b.value("noise_term", 0.0);
      if (b.contains("posterior_cov")) r.posterior_cov = matrix_from_rows(b["posterior_cov"]);
      t.benchmark = r;
    }
    return t;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed thresholds file: ") + e.what());
  }
}

Thresholds load_thresholds(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open thresholds file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return thresholds_from_json(j);
}

Thresholds derive_thresholds(const ExperimentConfig& config) {
  const auto model = config.model();
  const auto op = build_operator(config.h_raw, config.gamma);
  Thresholds t;
  t.forcing = config.forcing;
  t.members = config.members;
  t.seed = config.seed;
  t.climatology = estimate_climatology(model, config.climatology_integrator, config.h, config.climatology,
                                       mix64(config.seed ^ kClimatologySalt));
  t.benchmark = benchmark_error(t.climatology, op, config.members, config.noise_dimension);
  t.m1 = t.benchmark->sigma_theta;
  t.m2 = t.benchmark->m_xi;
  return t;
}

ExperimentContext make_context(const ExperimentConfig& config, const std::optional<Thresholds>& reuse) {
  config.validate();
  ExperimentContext ctx{config, config.model(),
                        build_operator(config.h_raw, config.gamma), {}, lorenz96_energy_params(config.forcing, config.h)};
  if (reuse) {
    ctx.thresholds = *reuse;
  } else if (!config.thresholds_file.empty()) {
    ctx.thresholds = load_thresholds(config.thresholds_file);
  } else if (config.derive_thresholds) {
    ctx.thresholds = derive_thresholds(config);
  } else {
    throw ConfigError(
        "threshold derivation is disabled and no thresholds file was given; the climatology is required for "
        "initial ensembles and pattern correlation");
  }
  if (ctx.thresholds.climatology.mean.size() != config.dimension)
    throw ConfigError("thresholds file climatology has dimension " +
                      std::to_string(ctx.thresholds.climatology.mean.size()) + ", expected " +
                      std::to_string(config.dimension));
  if (config.m1) ctx.thresholds.m1 = *config.m1;
  if (config.m2) ctx.thresholds.m2 = *config.m2;
  return ctx;
}

TrialInputs make_trial_inputs(const ExperimentContext& ctx, int trial) {
  const ExperimentConfig& cfg = ctx.config;
  const auto t = static_cast<std::uint64_t>(trial);
  RngStream truth_init(cfg.seed, t, StreamRole::TruthInit);
  RngStream ens_init(cfg.seed, t, StreamRole::EnsembleInit);
  RngStream obs_noise(cfg.seed, t, StreamRole::ObservationNoise);
  RngStream truth_noise(cfg.seed, t, StreamRole::SystemNoiseTruth);

  ClimatologySampler sampler(ctx.thresholds.climatology);
  TrialInputs in;
  const long n_cycles = cfg.cycles();
  in.truth.reserve(static_cast<std::size_t>(n_cycles + 1));
  in.observations.reserve(static_cast<std::size_t>(n_cycles));
  in.truth.push_back(sampler.draw(truth_init));
  in.initial_ensemble.resize(cfg.dimension, cfg.members);
  for (int k = 0; k < cfg.members; ++k) in.initial_ensemble.col(k) = sampler.draw(ens_init);

  FlowMap<double> flow(ctx.model, cfg.truth_integrator, cfg.h);
  SystemNoise<double> noise(ctx.model.system_noise);
  Vec u = in.truth.front();
  for (long n = 1; n <= n_cycles; ++n) {
    try {
      flow.apply(u);
    } catch (const IntegrationFailed&) {
      in.truth_diverged_at = n;
      break;
    }
    noise.add_to(u, truth_noise);
    if (!all_finite(u)) {
      in.truth_diverged_at = n;
      break;
    }
    in.truth.push_back(u);
    in.observations.push_back(observe(ctx.op, u, obs_noise, n));
  }
  return in;
}

TrialRecord run_trial(const ExperimentContext& ctx, const VariantSpec& variant, const TrialInputs& inputs, int trial) {
  const ExperimentConfig& cfg = ctx.config;
  const auto t = static_cast<std::uint64_t>(trial);
  const FilterConfig fc = cfg.filter_config(variant, ctx.thresholds.m1, ctx.thresholds.m2);
  EnsembleFilter<double> filter(fc, ctx.op, ctx.model, cfg.integrator_for(variant), cfg.h);
  FilterState<double> state{Ensemble<double>(inputs.initial_ensemble), RngStream(cfg.seed, t, StreamRole::Perturbation),
                            RngStream(cfg.seed, t, StreamRole::SystemNoiseEnsemble)};
  const Vec& clim_mean = ctx.thresholds.climatology.mean;

  TrialRecord rec;
  rec.variant = variant.name();
  rec.trial = trial;
  const long n_cycles = cfg.cycles();
  for (auto* v : {&rec.error, &rec.theta, &rec.xi, &rec.lambda, &rec.cosine, &rec.energy})
    v->reserve(static_cast<std::size_t>(n_cycles));
  rec.triggered.reserve(static_cast<std::size_t>(n_cycles));

  DivergenceMonitor monitor;
  const auto start = std::chrono::steady_clock::now();
  for (long n = 1; n <= n_cycles; ++n) {
    if (static_cast<std::size_t>(n) > inputs.observations.size()) {
      monitor.observe_truth(n, Vec::Constant(1, kNaN));
      break;
    }
    AnalysisOutput<double> out;
    try {
      out = filter.assimilate(state, inputs.observations[static_cast<std::size_t>(n - 1)]);
    } catch (const IntegrationFailed&) {
      monitor.solver_failure(n);
      break;
    } catch (const NonFiniteStatistics&) {
      monitor.observe(n, Vec::Constant(1, kNaN));
      break;
    }
    if (monitor.observe(n, state.ensemble.members())) break;

    const Vec mean = state.ensemble.mean();
    const Vec& u = inputs.truth[static_cast<std::size_t>(n)];
    rec.error.push_back((mean - u).norm());
    rec.theta.push_back(out.diagnostics.theta);
    rec.xi.push_back(out.diagnostics.xi);
    rec.lambda.push_back(out.diagnostics.lambda);
    rec.triggered.push_back(out.diagnostics.triggered ? 1 : 0);
    if (out.diagnostics.triggered) {
      ++rec.trigger_count;
      if (!rec.first_trigger) rec.first_trigger = n;
    }
    if (fc.policy.adaptive) {
      const InnovationCheck check = assert_innovation_bound(out, fc.policy, ctx.op, cfg.members);
      ++rec.innovation_checks;
      if (!check.ok) ++rec.innovation_violations;
      rec.max_innovation_ratio = std::max(rec.max_innovation_ratio, check.max_ratio);
    }
    const Vec dv = mean - clim_mean, du = u - clim_mean;
    const double nv = dv.norm(), nu = du.norm();
    rec.cosine.push_back(nv > 0 && nu > 0 ? dv.dot(du) / (nv * nu) : kNaN);
    rec.energy.push_back(track_energy(u, state.ensemble, ctx.energy, ctx.op).value);
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  rec.evaluations = filter.evaluations();
  rec.verdict = monitor.verdict();
  rec.rmse = rmse(rec, cfg.h, cfg.total_time, cfg.literal_rmse);
  rec.correlation = pattern_correlation(rec, cfg.h, cfg.total_time);
  const long start_n = std::max(1L, std::lround(cfg.total_time / (2 * cfg.h)));
  for (std::size_t i = static_cast<std::size_t>(start_n - 1); i < rec.cosine.size(); ++i)
    if (std::isnan(rec.cosine[i])) ++rec.skipped_correlation_steps;
  return rec;
}

double rmse(const TrialRecord& record, double h, double total_time, bool literal) {
  if (record.verdict.diverged) return kNaN;
  const long first = std::max(1L, std::lround(total_time / (2 * h)));
  const auto last = static_cast<long>(record.error.size());
  if (last < first) return kNaN;
  double sum = 0;
  for (long n = first; n <= last; ++n) sum += record.error[static_cast<std::size_t>(n - 1)] * record.error[static_cast<std::size_t>(n - 1)];
  if (literal) return std::sqrt(2.0 / total_time * sum);
  return std::sqrt(sum / static_cast<double>(last - first + 1));
}

double pattern_correlation(const TrialRecord& record, double h, double total_time) {
  if (record.verdict.diverged) return kNaN;
  const long first = std::max(1L, std::lround(total_time / (2 * h)));
  const auto last = static_cast<long>(record.cosine.size());
  double sum = 0;
  long count = 0;
  for (long n = first; n <= last; ++n) {
    const double c = record.cosine[static_cast<std::size_t>(n - 1)];
    if (std::isnan(c)) continue;
    sum += c;
    ++count;
  }
  return count ? sum / static_cast<double>(count) : kNaN;
}

BatchSummary summarize(const std::vector<TrialRecord>& records, const ExperimentContext& ctx,
                       const VariantSpec& variant) {
  const ExperimentConfig& cfg = ctx.config;
  BatchSummary s;
  s.variant = variant.name();
  s.integrator = integrator_label(cfg.integrator_for(variant));
  s.trials = static_cast<int>(records.size());
  std::vector<double> rmses, cors, seconds;
  long triggers = 0;
  double theta_sum = 0, xi_sum = 0;
  long theta_over = 0, xi_over = 0;
  long theta_over_window = 0, xi_over_window = 0, samples_window = 0;
  const long first = cfg.window_start();
  const long last = cfg.cycles();
  std::vector<double> energy_sum(static_cast<std::size_t>(std::max(0L, last - first + 1)), 0.0);
  int energy_trials = 0;
  for (const auto& r : records) {
    seconds.push_back(r.seconds);
    if (r.verdict.diverged) {
      ++s.diverged;
      if (r.verdict.cause == DivergenceCause::SolverFailure) ++s.solver_failures;
    } else {
      rmses.push_back(r.rmse);
      cors.push_back(r.correlation);
      if (static_cast<long>(r.energy.size()) >= last) {
        for (long n = first; n <= last; ++n)
          energy_sum[static_cast<std::size_t>(n - first)] += r.energy[static_cast<std::size_t>(n - 1)];
        ++energy_trials;
      }
    }
    if (r.trigger_count > 0) ++s.triggered_trials;
    triggers += r.trigger_count;
    for (std::size_t i = 0; i < r.theta.size(); ++i) {
      const bool theta_hit = r.theta[i] > ctx.thresholds.m1, xi_hit = r.xi[i] > ctx.thresholds.m2;
      theta_sum += r.theta[i];
      xi_sum += r.xi[i];
      theta_over += theta_hit;
      xi_over += xi_hit;
      ++s.statistic_samples;
      if (static_cast<long>(i) + 1 < first) continue;
      theta_over_window += theta_hit;
      xi_over_window += xi_hit;
      ++samples_window;
    }
    s.innovation_checks += r.innovation_checks;
    s.innovation_violations += r.innovation_violations;
    s.max_innovation_ratio = std::max(s.max_innovation_ratio, r.max_innovation_ratio);
  }
  s.divergence_fraction = s.trials ? static_cast<double>(s.diverged) / s.trials : kNaN;
  s.rmse_finite = mean_of(rmses);
  s.correlation_finite = mean_of(cors);
  s.rmse = s.diverged ? kNaN : s.rmse_finite;
  s.correlation = s.diverged ? kNaN : s.correlation_finite;
  s.triggered_fraction = s.trials ? static_cast<double>(s.triggered_trials) / s.trials : kNaN;
  s.triggers_per_triggered_trial = s.triggered_trials ? static_cast<double>(triggers) / s.triggered_trials : 0.0;
  s.triggers_per_trial = s.trials ? static_cast<double>(triggers) / s.trials : kNaN;
  if (s.statistic_samples) {
    const auto n = static_cast<double>(s.statistic_samples);
    s.theta_mean = theta_sum / n;
    s.xi_mean = xi_sum / n;
    s.p_theta = static_cast<double>(theta_over) / n;
    s.p_xi = static_cast<double>(xi_over) / n;
  } else {
    s.theta_mean = s.xi_mean = s.p_theta = s.p_xi = kNaN;
  }
  s.p_theta_window = samples_window ? static_cast<double>(theta_over_window) / static_cast<double>(samples_window) : kNaN;
  s.p_xi_window = samples_window ? static_cast<double>(xi_over_window) / static_cast<double>(samples_window) : kNaN;
  s.seconds_per_trial = mean_of(seconds);
  if (energy_trials > 0) {
    for (double& e : energy_sum) e /= energy_trials;
    s.energy_log_slope = log_slope(energy_sum);
  } else {
    s.energy_log_slope = kNaN;
  }
  return s;
}

BatchResult run_batch(const ExperimentContext& ctx, const BatchOptions& options) {
  const ExperimentConfig& cfg = ctx.config;
  BatchResult result;
  result.variants = cfg.variants;
  const std::size_t nv = cfg.variants.size();
  result.records.assign(nv, std::vector<TrialRecord>(static_cast<std::size_t>(cfg.trials)));

  int jobs = options.jobs > 0 ? options.jobs : (cfg.jobs > 0 ? cfg.jobs : static_cast<int>(std::thread::hardware_concurrency()));
  jobs = std::clamp(jobs, 1, cfg.trials);

  const auto start = std::chrono::steady_clock::now();
  std::atomic<int> next{0};
  std::atomic<int> done{0};
  std::mutex progress_mutex;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const int trial = next.fetch_add(1);
      if (trial >= cfg.trials) return;
      try {
        const TrialInputs inputs = make_trial_inputs(ctx, trial);
        for (std::size_t v = 0; v < nv; ++v)
          result.records[v][static_cast<std::size_t>(trial)] = run_trial(ctx, cfg.variants[v], inputs, trial);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(cfg.trials);
        return;
      }
      const int finished = ++done;
      if (options.progress) {
        std::lock_guard lock(progress_mutex);
        options.progress(finished, cfg.trials);
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(jobs));
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  for (std::size_t v = 0; v < nv; ++v) result.summaries.push_back(summarize(result.records[v], ctx, cfg.variants[v]));
  if (!options.keep_records) result.records.clear();
  return result;
}

StatisticsHistograms statistics_histograms(const std::vector<TrialRecord>& records, double m1, double m2, int bins,
                                           long first_cycle) {
  const auto skip = static_cast<std::size_t>(std::max(0L, first_cycle - 1));
  auto build = [&](auto member, double threshold) {
    Histogram hist;
    hist.threshold = threshold;
    double top = std::isfinite(threshold) ? threshold : 0.0;
    double sum = 0;
    long over = 0;
    for (const auto& r : records)
      for (std::size_t i = skip; i < (r.*member).size(); ++i) {
        const double x = (r.*member)[i];
        top = std::max(top, x);
        sum += x;
        if (x > threshold) ++over;
        ++hist.samples;
      }
    if (!(top > 0)) top = 1.0;
    top *= 1.0 + 1e-9;
    hist.edges.resize(static_cast<std::size_t>(bins + 1));
    for (int b = 0; b <= bins; ++b) hist.edges[static_cast<std::size_t>(b)] = top * b / bins;
    hist.counts.assign(static_cast<std::size_t>(bins), 0);
    for (const auto& r : records)
      for (std::size_t i = skip; i < (r.*member).size(); ++i) {
        const double x = (r.*member)[i];
        const auto b = std::clamp(static_cast<int>(x / top * bins), 0, bins - 1);
        ++hist.counts[static_cast<std::size_t>(b)];
      }
    hist.mean = hist.samples ? sum / static_cast<double>(hist.samples) : kNaN;
    hist.exceedance = hist.samples ? static_cast<double>(over) / static_cast<double>(hist.samples) : kNaN;
    return hist;
  };
  return {build(&TrialRecord::theta, m1), build(&TrialRecord::xi, m2)};
}

SweepAxis parse_axis(std::string_view s) {
  if (s == "rho") return SweepAxis::Rho;
  if (s == "h") return SweepAxis::H;
  if (s == "integrator") return SweepAxis::Integrator;
  throw ConfigError("unknown sweep axis '" + std::string(s) + "' (expected rho, h or integrator)");
}

std::string_view to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::Rho: return "rho";
    case SweepAxis::H: return "h";
    case SweepAxis::Integrator: return "integrator";
  }
  return "?";
}

std::vector<SweepPoint> sweep(const ExperimentConfig& config, SweepAxis axis, const BatchOptions& options,
                              const std::optional<Thresholds>& reuse) {
  const ExperimentContext base = make_context(config, reuse);
  std::vector<SweepPoint> points;
  auto run_point = [&](ExperimentConfig cfg, std::string label, double value) {
    const ExperimentContext ctx = make_context(cfg, base.thresholds);
    BatchOptions opts = options;
    opts.keep_records = false;
    SweepPoint p;
    p.label = std::move(label);
    p.value = value;
    p.summaries = run_batch(ctx, opts).summaries;
    points.push_back(std::move(p));
  };
  auto format = [](double v) {
    std::ostringstream os;
    os << v;
    return os.str();
  };
  switch (axis) {
    case SweepAxis::Rho:
      for (double rho : config.sweep_rho) {
        ExperimentConfig cfg = config;
        cfg.rho = rho;
        run_point(cfg, format(rho), rho);
      }
      break;
    case SweepAxis::H:
      for (double h : config.sweep_h) {
        ExperimentConfig cfg = config;
        cfg.h = h;
        run_point(cfg, format(h), h);
      }
      break;
    case SweepAxis::Integrator:
      for (std::size_t i = 0; i < config.sweep_integrators.size(); ++i) {
        ExperimentConfig cfg = config;
        cfg.integrator = config.sweep_integrators[i];
        for (auto& v : cfg.variants) v.integrator.reset();
        run_point(cfg, integrator_label(cfg.integrator), static_cast<double>(i));
      }
      break;
  }
  return points;
}

std::vector<double> ergodicity_distances(const ExperimentContext& ctx, const VariantSpec& variant,
                                         const TrialInputs& inputs, int trial) {
  const ExperimentConfig& cfg = ctx.config;
  const auto t = static_cast<std::uint64_t>(trial);
  const FilterConfig fc = cfg.filter_config(variant, ctx.thresholds.m1, ctx.thresholds.m2);
  EnsembleFilter<double> fa(fc, ctx.op, ctx.model, cfg.integrator_for(variant), cfg.h);
  EnsembleFilter<double> fb(fc, ctx.op, ctx.model, cfg.integrator_for(variant), cfg.h);

  ClimatologySampler sampler(ctx.thresholds.climatology);
  RngStream alt(cfg.seed, t, StreamRole::Auxiliary);
  Mat other(cfg.dimension, cfg.members);
  for (int k = 0; k < cfg.members; ++k) other.col(k) = sampler.draw(alt);

  auto state = [&](const Mat& m) {
    return FilterState<double>{Ensemble<double>(m), RngStream(cfg.seed, t, StreamRole::Perturbation),
                               RngStream(cfg.seed, t, StreamRole::SystemNoiseEnsemble)};
  };
  return ergodicity_probe<double>(fa, fb, state(inputs.initial_ensemble), state(other), inputs.observations);
}

}  // namespace enkf::experiment
