#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "enkf/stability.hpp"

using namespace enkf;

TEST_CASE("innovation bound value") {
  CHECK(innovation_bound({1.0, 32.5, 6.2}, 100.0, 6) == doctest::Approx(std::sqrt(6.0) * 32.5));
  CHECK(innovation_bound({1.0, 1e-3, 1.0}, 100.0, 4) == doctest::Approx(2.0 * 0.01));
}

TEST_CASE("innovation check flags the worst member") {
  const auto op = ObservationOperator<double>::canonical(Vec::Constant(1, 10.0), 5);
  AnalysisOutput<double> out;
  out.innovation_norms = Vec(3);
  out.innovation_norms << 1.0, 90.0, 5.0;
  const auto policy = InflationPolicy::adaptive_only({1.0, 32.5, 6.2});
  const auto check = assert_innovation_bound(out, policy, op, 6);
  CHECK(!check.ok);
  CHECK(check.worst_member == 1);
  CHECK(check.max_ratio == doctest::Approx(90.0 / (std::sqrt(6.0) * 32.5)));
  CHECK_THROWS_AS(enforce_innovation_bound(out, policy, op, 6), BoundViolated);
  out.innovation_norms[1] = 10.0;
  CHECK(enforce_innovation_bound(out, policy, op, 6).ok);
  CHECK_THROWS_AS(assert_innovation_bound(out, InflationPolicy::none(), op, 6), InvalidArgument);
}

TEST_CASE("adaptive EnKF respects the innovation bound along a run") {
  const auto model = ModelSpec<double>::lorenz96(8.0);
  Mat h = Mat::Zero(1, 5);
  h(0, 0) = 1;
  const auto op = build_operator<double>(h, Mat::Constant(1, 1, 0.01));
  const auto policy = InflationPolicy::adaptive_only({1.0, 69.6, 28.8});
  EnsembleFilter<double> filter({FilterKind::EnKF, policy, {}}, op, model, IntegratorSpec::rk4(), 0.05);
  RngStream init(1);
  Mat m(5, 6);
  init.fill_normal(m);
  m = (m * 3.5).array() + 2.3;
  FilterState<double> state{Ensemble<double>(m), RngStream(2), RngStream(3)};
  Vec truth = Vec::Constant(5, 2.3);
  truth[0] += 3;
  FlowMap<double> flow(model, IntegratorSpec::rk4(), 0.05);
  RngStream obs_rng(4);
  double worst = 0;
  for (int n = 0; n < 1000; ++n) {
    flow.apply(truth);
    const auto out = filter.assimilate(state, observe(op, truth, obs_rng, n));
    const auto check = assert_innovation_bound(out, policy, op, 6);
    REQUIRE(check.ok);
    worst = std::max(worst, check.max_ratio);
  }
  CHECK(worst < 1.0);
}

TEST_CASE("energy functional") {
  const auto op = ObservationOperator<double>::canonical(Vec::Constant(1, 10.0), 5);
  Ensemble<double> zero(Mat::Zero(5, 6));
  const EnergyParams p = lorenz96_energy_params(4.0, 0.05);
  CHECK(p.beta_h == doctest::Approx(1 - std::exp(-0.05)));
  CHECK(p.k_h == doctest::Approx(10 * 16 * 0.05));
  CHECK(track_energy(Vec(Vec::Zero(5)), zero, p, op).value == 0.0);
  Ensemble<double> ones(Mat::Ones(5, 6));
  const auto e = track_energy(Vec(Vec::Ones(5)), ones, {0.5, 1.0}, op);
  CHECK(e.weight == doctest::Approx(4.0 * 6 * 100 / (100 * 0.5)));
  CHECK(e.value == doctest::Approx(e.weight * 5 + 30));
}

TEST_CASE("divergence monitor") {
  DivergenceMonitor m;
  CHECK(!m.observe(0, Mat::Ones(2, 2)));
  Mat bad = Mat::Ones(2, 2);
  bad(1, 0) = 2e300;
  CHECK(m.observe(3, bad));
  CHECK(m.observe(4, Mat::Ones(2, 2)));
  CHECK(m.verdict().first_step == 3);
  CHECK(m.verdict().cause == DivergenceCause::NonFiniteEnsemble);

  DivergenceMonitor t;
  t.observe_truth(2, Vec::Constant(3, std::numeric_limits<double>::infinity()));
  CHECK(t.verdict().cause == DivergenceCause::NonFiniteTruth);
  DivergenceMonitor s;
  s.solver_failure(7);
  s.observe(8, bad);
  CHECK(s.verdict().cause == DivergenceCause::SolverFailure);
  CHECK(s.verdict().first_step == 7);

  std::vector<Mat> traj{Mat::Zero(2, 2), Mat::Constant(2, 2, std::nan("")), Mat::Zero(2, 2)};
  const auto v = detect_divergence<double>(traj);
  CHECK(v.diverged);
  CHECK(v.first_step == 1);
}

TEST_CASE("ergodicity probe") {
  const auto model = ModelSpec<double>::lorenz96(4.0);
  Mat h = Mat::Zero(1, 5);
  h(0, 0) = 1;
  const auto op = build_operator<double>(h, Mat::Constant(1, 1, 0.01));
  const FilterConfig cfg{FilterKind::EnKF, InflationPolicy::adaptive_only({1.0, 32.5, 6.2}), {}};
  EnsembleFilter<double> fa(cfg, op, model, IntegratorSpec::rk4(), 0.05);
  EnsembleFilter<double> fb(cfg, op, model, IntegratorSpec::rk4(), 0.05);
  RngStream init(5);
  Mat a(5, 6), b(5, 6);
  init.fill_normal(a);
  init.fill_normal(b);
  a = (a * 1.8).array() + 1.2;
  b = (b * 1.8).array() + 1.2;

  std::vector<Observation<double>> obs;
  Vec truth = Vec::Constant(5, 1.2);
  truth[0] += 1;
  FlowMap<double> flow(model, IntegratorSpec::rk4(), 0.05);
  RngStream obs_rng(6);
  for (int n = 0; n < 400; ++n) {
    flow.apply(truth);
    obs.push_back(observe(op, truth, obs_rng, n));
  }

  auto state = [](const Mat& m) { return FilterState<double>{Ensemble<double>(m), RngStream(7), RngStream(8)}; };
  const auto same = ergodicity_probe<double>(fa, fb, state(a), state(a), obs);
  for (double d : same) CHECK(d == 0.0);
  const auto apart = ergodicity_probe<double>(fa, fb, state(a), state(b), obs);
  CHECK(second_half_smaller(apart));
}

TEST_CASE("log slope") {
  std::vector<double> s;
  for (int i = 0; i < 50; ++i) s.push_back(3.0 * std::exp(-0.2 * i));
  CHECK(log_slope(s) == doctest::Approx(-0.2));
  CHECK(second_half_smaller(s));
}
