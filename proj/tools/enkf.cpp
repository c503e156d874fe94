// enkf: thresholds, twin-experiment batches, sweeps and reports.
//
// Settings are applied in order: built-in defaults, --config file, --regime,
// then the remaining flags.
//
// Exit codes: 0 success, 1 runtime error, 2 configuration error,
// 3 an adaptive variant diverged or violated the innovation bound.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "output.hpp"

using namespace enkf;
using namespace enkf::experiment;

namespace {

struct Overrides {
  std::string config;
  std::string regime;
  std::string variants;
  std::string integrator;
  std::optional<int> trials;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<double> rho;
  std::optional<double> h;
  std::optional<double> total_time;
  std::optional<double> m1;
  std::optional<double> m2;
  std::string thresholds;
  bool no_derive = false;
  bool quiet = false;
};

void add_common(CLI::App* app, Overrides& o) {
  app->set_help_flag("--help", "Print this help message and exit");
  app->add_option("-c,--config", o.config, "JSON configuration file");
  app->add_option("--regime", o.regime, "Lorenz-96 forcing: F4, F8, F16 or a number");
  app->add_option("--variants,--variant", o.variants, "comma-separated filters, e.g. enkf,enkf-ai,etkf-cai@rk4");
  app->add_option("--integrator", o.integrator, "explicit-euler, rk4, implicit-euler or rk45, optionally :step");
  app->add_option("--trials", o.trials, "number of trials");
  app->add_option("--seed", o.seed, "base seed");
  app->add_option("-j,--jobs", o.jobs, "worker threads (default: available cores)");
  app->add_option("--rho", o.rho, "constant inflation strength");
  app->add_option("--h", o.h, "observation interval");
  app->add_option("--T", o.total_time, "total time");
  app->add_option("--M1", o.m1, "innovation threshold");
  app->add_option("--M2", o.m2, "cross-covariance threshold");
  app->add_option("--thresholds", o.thresholds, "thresholds JSON written by 'enkf thresholds'");
  app->add_flag("--no-derive", o.no_derive, "never derive thresholds from a climatology run");
  app->add_flag("-q,--quiet", o.quiet, "no progress output");
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c = o.config.empty() ? default_config() : load_config(o.config);
  if (!o.regime.empty()) c.forcing = parse_regime(o.regime);
  if (!o.variants.empty()) c.variants = parse_variants(o.variants);
  if (!o.integrator.empty()) {
    c.integrator = parse_integrator(o.integrator);
    for (auto& v : c.variants) v.integrator.reset();
  }
  if (o.trials) c.trials = *o.trials;
  if (o.seed) c.seed = *o.seed;
  if (o.jobs) c.jobs = *o.jobs;
  if (o.rho) c.rho = *o.rho;
  if (o.h) c.h = *o.h;
  if (o.total_time) c.total_time = *o.total_time;
  if (o.m1) c.m1 = *o.m1;
  if (o.m2) c.m2 = *o.m2;
  if (!o.thresholds.empty()) c.thresholds_file = o.thresholds;
  if (o.no_derive) c.derive_thresholds = false;
  c.validate();
  return c;
}

BatchOptions batch_options(const Overrides& o, const ExperimentConfig& c) {
  BatchOptions b;
  b.jobs = c.jobs;
  if (!o.quiet)
    b.progress = [](int done, int total) {
      std::fprintf(stderr, "\r  trial %d/%d", done, total);
      if (done == total) std::fputc('\n', stderr);
    };
  return b;
}

bool adaptive_failure(const std::vector<BatchSummary>& summaries, const std::vector<VariantSpec>& variants) {
  bool bad = false;
  for (std::size_t i = 0; i < summaries.size() && i < variants.size(); ++i) {
    if (!variants[i].adaptive) continue;
    const auto& s = summaries[i];
    if (s.diverged > 0) {
      std::fprintf(stderr, "error: adaptive variant %s diverged in %d trials\n", s.variant.c_str(), s.diverged);
      bad = true;
    }
    if (s.innovation_violations > 0) {
      std::fprintf(stderr, "error: adaptive variant %s violated the innovation bound %ld times\n", s.variant.c_str(),
                   s.innovation_violations);
      bad = true;
    }
  }
  return bad;
}

void print_summaries(const std::vector<BatchSummary>& summaries) {
  std::printf("%-22s %-24s %9s %10s %8s %9s %9s\n", "Filter", "Integrator", "Cata.Div", "RMSE", "Cor", "Avg.Time",
              "Triggered");
  for (const auto& s : summaries)
    std::printf("%-22s %-24s %8.1f%% %10.4f %8.4f %9.3f %9d\n", s.variant.c_str(), s.integrator.c_str(),
                100 * s.divergence_fraction, s.rmse, s.correlation, s.seconds_per_trial, s.triggered_trials);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Ensemble Kalman filters with adaptive covariance inflation: twin-experiment driver"};
  app.require_subcommand(1);

  Overrides o;
  std::string out = "out";
  std::string axis = "rho";
  std::string report_dir;
  int records = 10;

  auto* thr = app.add_subcommand("thresholds", "run the climatology and write M1, M2 and the benchmark");
  add_common(thr, o);
  std::string thr_out = "thresholds.json";
  thr->add_option("-o,--out", thr_out, "output JSON file");

  auto* run = app.add_subcommand("run", "run a batch of twin experiments");
  add_common(run, o);
  run->add_option("-o,--out", out, "output directory");
  run->add_option("--records", records, "trials with per-step JSONL records (-1: all)");

  auto* swp = app.add_subcommand("sweep", "re-run the batch over a grid of rho, h or integrators");
  add_common(swp, o);
  swp->add_option("-o,--out", out, "output directory");
  swp->add_option("--axis", axis, "rho, h or integrator")->check(CLI::IsMember({"rho", "h", "integrator"}));

  auto* rep = app.add_subcommand("report", "regenerate report.md and SVG figures from an output directory");
  rep->add_option("dir", report_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*rep) {
      std::cout << write_report(report_dir).string() << '\n';
      return 0;
    }
    const ExperimentConfig config = resolve(o);
    if (*thr) {
      if (!config.derive_thresholds && config.thresholds_file.empty())
        throw ConfigError("--no-derive given and no climatology available: 'thresholds' needs a climatology run");
      const Thresholds t = config.derive_thresholds ? derive_thresholds(config) : load_thresholds(config.thresholds_file);
      write_thresholds(thr_out, t);
      std::printf("M1 = %.6g\nM2 = %.6g\n", t.m1, t.m2);
      if (t.benchmark) std::printf("benchmark RMSE = %.6g\n", t.benchmark->benchmark_rmse());
      return 0;
    }
    const ExperimentContext ctx = make_context(config);
    if (!o.quiet)
      std::fprintf(stderr, "F=%g  M1=%.4g  M2=%.4g  benchmark RMSE=%.4g\n", config.forcing, ctx.thresholds.m1,
                   ctx.thresholds.m2, ctx.thresholds.benchmark ? ctx.thresholds.benchmark->benchmark_rmse() : 0.0);
    if (*run) {
      BatchOptions b = batch_options(o, config);
      b.keep_records = true;
      const BatchResult result = run_batch(ctx, b);
      write_run(out, ctx, result, {records});
      print_summaries(result.summaries);
      return adaptive_failure(result.summaries, result.variants) ? 3 : 0;
    }
    const SweepAxis ax = parse_axis(axis);
    const auto start = std::chrono::steady_clock::now();
    const std::vector<SweepPoint> points = sweep(config, ax, batch_options(o, config), ctx.thresholds);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_sweep(out, ctx, ax, points, seconds);
    bool bad = false;
    for (const auto& p : points) {
      std::printf("%s = %s\n", std::string(to_string(ax)).c_str(), p.label.c_str());
      print_summaries(p.summaries);
      bad = adaptive_failure(p.summaries, config.variants) || bad;
    }
    return bad ? 3 : 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
