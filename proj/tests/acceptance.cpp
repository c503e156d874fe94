// Acceptance runner: one PASS/FAIL line per criterion.
//
// Usage: acceptance [--expect-fail 5,11]
// Criteria listed after --expect-fail still print FAIL when they fail but do not
// change the exit status; any other failure exits 1.
//
// Environment: ENKF_ACCEPT_TRIALS (default 100), ENKF_ACCEPT_JOBS (default all
// cores), ENKF_ACCEPT_SEED (default 1), ENKF_ACCEPT_OUT (optional directory for
// the batch artifacts), ENKF_ACCEPT_RESULTS (file receiving the criterion lines).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "output.hpp"

using namespace enkf;
using namespace enkf::experiment;

namespace {

long env_long(const char* name, long fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::strtol(v, nullptr, 10) : fallback;
}

struct Batch {
  double forcing = 0;
  std::string integrator;
  ExperimentContext ctx;
  std::vector<BatchSummary> summaries;
  std::vector<TrialRecord> enkf_ai_records;

  const BatchSummary* find(const std::string& variant) const {
    for (const auto& s : summaries)
      if (s.variant == variant) return &s;
    return nullptr;
  }
};

struct Outcome {
  std::set<int> expected;
  int failures = 0;
  int unexpected = 0;
  std::vector<std::string> lines;
  void report(int id, bool ok, const std::string& what, const std::string& detail) {
    const bool known = expected.count(id) > 0;
    std::string line = std::string(ok ? "PASS" : "FAIL") + " criterion " + std::to_string(id) + ": " + what + " [" +
                       detail + "]";
    if (!ok && known) line += " (known failure)";
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    lines.push_back(line);
    failures += !ok;
    unexpected += !ok && !known;
  }
};

std::set<int> parse_expected(int argc, char** argv) {
  std::set<int> ids;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) != "--expect-fail") continue;
    std::stringstream ss(argv[i + 1]);
    for (std::string tok; std::getline(ss, tok, ',');)
      if (!tok.empty()) ids.insert(std::stoi(tok));
  }
  return ids;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string pct(double fraction) { return fmt("%.2f%%", 100 * fraction); }

bool is_adaptive(const std::string& name) { return name.find("-AI") != std::string::npos || name.find("-CAI") != std::string::npos; }

}  // namespace

int main(int argc, char** argv) {
  const int trials = static_cast<int>(env_long("ENKF_ACCEPT_TRIALS", 100));
  const int jobs = static_cast<int>(env_long("ENKF_ACCEPT_JOBS", 0));
  const auto seed = static_cast<std::uint64_t>(env_long("ENKF_ACCEPT_SEED", 1));
  const char* out_env = std::getenv("ENKF_ACCEPT_OUT");
  const std::string out_dir = out_env ? out_env : "";
  std::printf("acceptance: %d trials per batch, seed %llu\n", trials, static_cast<unsigned long long>(seed));

  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<double> regimes{4.0, 8.0, 16.0};
  const std::vector<IntegratorSpec> integrators{IntegratorSpec::explicit_euler(), IntegratorSpec::rk4(),
                                                IntegratorSpec::implicit_euler(), IntegratorSpec::rk45()};
  const std::string adaptive = "enkf-ai,enkf-cai,etkf-ai,etkf-cai,eakf-ai,eakf-cai";

  std::vector<Batch> batches;
  std::map<double, Thresholds> thresholds;
  std::map<double, std::vector<double>> ergodic;
  for (double f : regimes) {
    ExperimentConfig base = default_config();
    base.forcing = f;
    base.trials = trials;
    base.seed = seed;
    base.jobs = jobs;
    thresholds[f] = derive_thresholds(base);
    for (const auto& integ : integrators) {
      ExperimentConfig c = base;
      c.integrator = integ;
      std::string variants = adaptive;
      if (integ.scheme == Scheme::ExplicitEuler) variants = "enkf,enkf-ci," + adaptive;
      else if (f == 16.0) variants = "enkf," + adaptive;
      c.variants = parse_variants(variants);
      Batch b;
      b.forcing = f;
      b.integrator = integrator_label(integ);
      b.ctx = make_context(c, thresholds[f]);
      const auto start = std::chrono::steady_clock::now();
      BatchOptions opts;
      opts.jobs = jobs;
      opts.keep_records = true;
      const BatchResult r = run_batch(b.ctx, opts);
      b.summaries = r.summaries;
      for (std::size_t v = 0; v < r.variants.size(); ++v)
        if (r.summaries[v].variant == "EnKF-AI") b.enkf_ai_records = r.records[v];
      if (!out_dir.empty())
        write_run(fs::path(out_dir) / ("F" + fmt("%g", f) + "_" + b.integrator), b.ctx, r, {0});
      std::printf("  batch F=%g %s: %.1f s\n", f, b.integrator.c_str(),
                  std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      for (const auto& s : b.summaries)
        std::printf("    %-10s div %-7s rmse %-10s cor %-8s P(theta>M1) %-8s P(xi>M2) %-8s viol %ld  slope %.2e  t %.4f\n",
                    s.variant.c_str(), pct(s.divergence_fraction).c_str(), fmt("%.4f", s.rmse).c_str(),
                    fmt("%.4f", s.correlation).c_str(), pct(s.p_theta).c_str(), pct(s.p_xi).c_str(),
                    s.innovation_violations, s.energy_log_slope, s.seconds_per_trial);
      std::fflush(stdout);
      batches.push_back(std::move(b));
    }
  }

  // Ergodicity probe: F = 4 EnKF-AI, two independent initial ensembles.
  {
    ExperimentConfig c = default_config();
    c.forcing = 4.0;
    c.trials = trials;
    c.seed = seed;
    c.variants = parse_variants("enkf-ai");
    const ExperimentContext ctx = make_context(c, thresholds[4.0]);
    for (int t = 0; t < trials; ++t) {
      const auto inputs = make_trial_inputs(ctx, t);
      ergodic[4.0].push_back(second_half_smaller(ergodicity_distances(ctx, c.variants.front(), inputs, t)) ? 1 : 0);
    }
  }

  auto batch = [&](double f, Scheme s) -> const Batch& {
    for (const auto& b : batches)
      if (b.forcing == f && b.ctx.config.integrator.scheme == s) return b;
    throw Error("missing batch");
  };

  Outcome out;
  out.expected = parse_expected(argc, argv);

  {  // 1
    int diverged = 0, runs = 0;
    std::string where;
    for (const auto& b : batches)
      for (const auto& s : b.summaries)
        if (is_adaptive(s.variant)) {
          ++runs;
          if (s.diverged) {
            diverged += s.diverged;
            where += " F" + fmt("%g", b.forcing) + "/" + b.integrator + "/" + s.variant;
          }
        }
    out.report(1, diverged == 0, "adaptive variants never diverge",
               std::to_string(runs) + " adaptive batches, " + std::to_string(diverged) + " diverged trials" + where);
  }
  {  // 2
    long checks = 0, violations = 0;
    double worst = 0;
    for (const auto& b : batches)
      for (const auto& s : b.summaries)
        if (s.variant == "EnKF-AI" || s.variant == "EnKF-CAI") {
          checks += s.statistic_samples ? s.innovation_checks : 0;
          violations += s.innovation_violations;
          worst = std::max(worst, s.max_innovation_ratio);
        }
    out.report(2, violations == 0 && checks > 0, "innovation bound holds for every member and step",
               std::to_string(violations) + " violations in " + std::to_string(checks) + " checked cycles, max ratio " +
                   fmt("%.4f", worst));
  }
  {  // 3
    const auto& e16 = batch(16, Scheme::ExplicitEuler);
    const auto& e8 = batch(8, Scheme::ExplicitEuler);
    const double a = e16.find("EnKF")->divergence_fraction;
    const double b = e8.find("EnKF")->divergence_fraction;
    const double c = e16.find("EnKF-CI")->divergence_fraction;
    const bool ok = a >= 0.95 && b >= 0.02 && b <= 0.30 && c >= 0.05 && c <= 0.40;
    out.report(3, ok, "divergence prevalence of the uninflated and constant-inflation filters",
               "F16 EnKF " + pct(a) + ", F8 EnKF " + pct(b) + ", F16 EnKF-CI " + pct(c));
  }
  {  // 4
    const auto& e4 = batch(4, Scheme::ExplicitEuler);
    const auto& e8 = batch(8, Scheme::ExplicitEuler);
    const auto& e16 = batch(16, Scheme::ExplicitEuler);
    bool ok = true;
    std::ostringstream d;
    for (const char* v : {"EnKF-CI", "EnKF-CAI"}) {
      const auto* s4 = e4.find(v);
      const auto* s8 = e8.find(v);
      ok &= s4->rmse <= 0.45 && s4->correlation >= 0.9 && s8->rmse <= 5.5 && s8->correlation >= 0.75;
      d << "F4 " << v << " " << fmt("%.3f", s4->rmse) << "/" << fmt("%.3f", s4->correlation) << ", F8 " << v << " "
        << fmt("%.3f", s8->rmse) << "/" << fmt("%.3f", s8->correlation) << ", ";
    }
    const auto* s16 = e16.find("EnKF-CAI");
    const double bench = e16.ctx.thresholds.benchmark->benchmark_rmse();
    ok &= s16->rmse < bench && s16->correlation >= 0.5;
    d << "F16 EnKF-CAI " << fmt("%.3f", s16->rmse) << "/" << fmt("%.3f", s16->correlation) << " vs benchmark "
      << fmt("%.3f", bench);
    out.report(4, ok, "accuracy bands (RMSE/pattern correlation)", d.str());
  }
  {  // 5
    struct Ref { double f, m1, m2, tol; };
    bool ok = true;
    std::ostringstream d;
    for (const Ref& r : {Ref{4, 32.5, 6.2, 0.10}, Ref{8, 69.6, 28.8, 0.10}, Ref{16, 127.6, 81.4, 0.15}}) {
      const auto& t = thresholds[r.f];
      const double e1 = std::abs(t.m1 / r.m1 - 1), e2 = std::abs(t.m2 / r.m2 - 1);
      ok &= e1 <= r.tol && e2 <= r.tol;
      d << "F" << r.f << " M1 " << fmt("%.2f", t.m1) << " (" << fmt("%+.1f%%", 100 * (t.m1 / r.m1 - 1)) << ") M2 "
        << fmt("%.2f", t.m2) << " (" << fmt("%+.1f%%", 100 * (t.m2 / r.m2 - 1)) << "); ";
    }
    out.report(5, ok, "derived thresholds from a T=1e4 climatology", d.str());
  }
  {  // 6
    const auto id = oracles::posterior_identity(1000);
    const double spread = oracles::spread_constructions(1000);
    const double gain = oracles::gain_forms(1000);
    const double white = oracles::whitening_round_trip(1000);
    const bool ok = id.etkf_failures == 0 && id.eakf_failures == 0 && spread < 1e-8 && gain < 1e-10 && white < 1e-12;
    out.report(6, ok, "matrix identities",
               "posterior covariance worst " + fmt("%.1e", id.worst_relative) + " over 1000 instances, spread " +
                   fmt("%.1e", spread) + ", gain forms " + fmt("%.1e", gain) + ", whitening " + fmt("%.1e", white));
  }
  {  // 7
    const auto k = oracles::kalman_oracle();
    const double z = oracles::benchmark_simulation_z();
    // 3-sigma bands: allow the binomial share of exceedances expected by chance.
    const bool ok = k.outside <= k.checks / 50 && k.worst_z < 5 && z < 3;
    out.report(7, ok, "EnKF (K=1000) versus the Kalman filter; benchmark versus simulation",
               std::to_string(k.outside) + "/" + std::to_string(k.checks) + " checks beyond 3 SE (worst " +
                   fmt("%.2f", k.worst_z) + "), benchmark " + fmt("%.2f", z) + " SE");
  }
  {  // 8
    const auto r = oracles::reductions();
    const bool ok = r.never_triggered_equals_plain && r.zero_rho_equals_adaptive && r.untriggered_prefix_equals_plain &&
                    r.triggered_at_least_once;
    out.report(8, ok, "bit-exact reductions",
               std::string("infinite thresholds ") + (r.never_triggered_equals_plain ? "equal" : "differ") +
                   ", rho=0 " + (r.zero_rho_equals_adaptive ? "equal" : "differ") + ", untriggered prefix " +
                   (r.untriggered_prefix_equals_plain ? "equal" : "differs"));
  }
  {  // 9
    const auto& e4 = batch(4, Scheme::ExplicitEuler);
    const auto& e16 = batch(16, Scheme::ExplicitEuler);
    const double p4 = e4.find("EnKF-AI")->p_theta;
    const double p16 = e16.find("EnKF-AI")->p_theta;
    std::string xi_detail;
    double xi_max = 0;
    for (double f : regimes) {
      const auto* s = batch(f, Scheme::ExplicitEuler).find("EnKF-AI");
      xi_max = std::max(xi_max, s->p_xi);
      xi_detail += " F" + fmt("%g", f) + " " + fmt("%.4f%%", 100 * s->p_xi) + " (window " +
                   fmt("%.4f%%", 100 * s->p_xi_window) + ")";
    }
    const bool ok = p4 < 0.005 && xi_max == 0 && p16 >= 0.03 && p16 <= 0.20;
    out.report(9, ok, "statistics distributions of EnKF-AI over all analysis steps",
               "F4 P(theta>M1) " + fmt("%.4f%%", 100 * p4) + ", P(xi>M2)" + xi_detail + ", F16 P(theta>M1) " + pct(p16));
  }
  {  // 10
    double worst = 0;
    std::string where;
    for (const auto& b : batches)
      for (const auto& s : b.summaries)
        if (is_adaptive(s.variant) && std::abs(s.energy_log_slope) > worst) {
          worst = std::abs(s.energy_log_slope);
          where = "F" + fmt("%g", b.forcing) + "/" + b.integrator + "/" + s.variant;
        }
    int decreasing = 0;
    for (double v : ergodic[4.0]) decreasing += static_cast<int>(v);
    const bool ok = worst < 1e-3 && decreasing >= (9 * trials + 9) / 10;
    out.report(10, ok, "energy shows no growth; ergodicity probe contracts",
               "max |log-energy slope| " + fmt("%.2e", worst) + " (" + where + "), probe decreasing in " +
                   std::to_string(decreasing) + "/" + std::to_string(trials) + " trials");
  }
  {  // 11
    const auto& ex = batch(16, Scheme::ExplicitEuler);
    const auto& im = batch(16, Scheme::ImplicitEuler);
    const auto& rk = batch(16, Scheme::AdaptiveRK45);
    const double bench = ex.ctx.thresholds.benchmark->benchmark_rmse();
    const auto* cai = ex.find("EnKF-CAI");
    const auto* ie = im.find("EnKF");
    const auto* r45 = rk.find("EnKF");
    const bool stable = ie->diverged == 0 && r45->diverged == 0;
    const bool low_skill = ie->rmse > bench && r45->rmse > bench;
    const bool more_accurate = cai->rmse < ie->rmse && cai->rmse < r45->rmse;
    const bool faster = cai->seconds_per_trial < ie->seconds_per_trial && cai->seconds_per_trial < r45->seconds_per_trial;
    std::ostringstream d;
    d << "EnKF implicit " << pct(ie->divergence_fraction) << " rmse " << fmt("%.2f", ie->rmse) << " "
      << fmt("%.3f", ie->seconds_per_trial) << " s, EnKF rk45 " << pct(r45->divergence_fraction) << " rmse "
      << fmt("%.2f", r45->rmse) << " " << fmt("%.3f", r45->seconds_per_trial) << " s, EnKF-CAI explicit rmse "
      << fmt("%.2f", cai->rmse) << " " << fmt("%.3f", cai->seconds_per_trial) << " s, benchmark " << fmt("%.2f", bench)
      << "; stable " << (stable ? "yes" : "no") << ", above benchmark " << (low_skill ? "yes" : "no")
      << ", CAI more accurate " << (more_accurate ? "yes" : "no") << ", CAI faster " << (faster ? "yes" : "no");
    out.report(11, stable && low_skill && more_accurate && faster, "integrator comparison ordering", d.str());
  }

  char tail[160];
  std::snprintf(tail, sizeof tail, "acceptance: %d of 11 criteria failed (%d unexpected), %d trials, %.0f s",
                out.failures, out.unexpected, trials,
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::printf("%s\n", tail);
  if (const char* path = std::getenv("ENKF_ACCEPT_RESULTS"); path && *path) {
    std::ofstream f(path);
    for (const auto& l : out.lines) f << l << '\n';
    f << tail << '\n';
  }
  return out.unexpected == 0 ? 0 : 1;
}
