#include <doctest.h>

#include <cmath>

#include "enkf/filter.hpp"
#include "enkf/observation.hpp"

using namespace enkf;

namespace {

Mat random_matrix(RngStream& rng, Eigen::Index rows, Eigen::Index cols) {
  Mat m(rows, cols);
  rng.fill_normal(m);
  return m;
}

Mat random_spd(RngStream& rng, Eigen::Index n) {
  const Mat a = random_matrix(rng, n, n);
  return a * a.transpose() + 0.5 * Mat::Identity(n, n);
}

}  // namespace

TEST_CASE("identity operator") {
  const auto op = build_operator<double>(Mat::Identity(5, 5), Mat::Identity(5, 5));
  CHECK(op.obs_dim() == 5);
  CHECK(op.h0() == Vec::Ones(5));
  CHECK(op.rotation() == Mat::Identity(5, 5));
  CHECK(op.rho0() == 1.0);
}

TEST_CASE("first coordinate observed with variance 0.01") {
  Mat h = Mat::Zero(1, 5);
  h(0, 0) = 1;
  const auto op = build_operator<double>(h, Mat::Constant(1, 1, 0.01));
  REQUIRE(op.obs_dim() == 1);
  CHECK(op.h0()[0] == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(op.rho0() == doctest::Approx(100.0).epsilon(1e-14));
  CHECK(op.norm() == doctest::Approx(10.0).epsilon(1e-14));
  CHECK(op.rotation().isIdentity(0));
}

TEST_CASE("general operator reduces to the canonical form") {
  RngStream rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    const Mat h = random_matrix(rng, 3, 5);
    const Mat gamma = random_spd(rng, 3);
    const auto op = build_operator(h, gamma);
    REQUIRE(op.obs_dim() == 3);
    CHECK((op.h0().array() > 0).all());
    CHECK((op.rotation().transpose() * op.rotation() - Mat::Identity(5, 5)).norm() < 1e-12);
    CHECK(op.rho0() == doctest::Approx(op.h0().cwiseAbs2().minCoeff()));

    const auto [h_back, g_back] = op.unwhiten();
    CHECK((h_back - h).norm() <= 1e-12 * (1 + h.norm()));
    CHECK((g_back - gamma).norm() <= 1e-12 * (1 + gamma.norm()));

    // Whitened observation of a noiseless signal equals H_white Psi^T u.
    Vec u(5);
    rng.fill_normal(u);
    const Vec z_white = op.whiten_observation(h * u);
    const Vec direct = op.apply_canonical(op.to_frame(u)).col(0);
    CHECK((z_white - direct).norm() < 1e-12 * (1 + direct.norm()));
  }
}

TEST_CASE("rank-deficient operators drop uninformative rows") {
  Mat h(3, 4);
  h << 1, 0, 0, 0,
       2, 0, 0, 0,
       0, 1, 1, 0;
  const auto op = build_operator<double>(h, Mat::Identity(3, 3));
  CHECK(op.obs_dim() == 2);
  const auto [h_back, g_back] = op.unwhiten();
  CHECK((h_back - h).norm() < 1e-12);
}

TEST_CASE("singular observation noise is rejected") {
  Mat gamma = Mat::Identity(2, 2);
  gamma(1, 1) = 1e-14;
  CHECK_THROWS_AS(build_operator<double>(Mat::Identity(2, 3), gamma), SingularGamma);
  Mat full(2, 2);
  full << 1, 1, 1, 1;
  CHECK_THROWS_AS(build_operator<double>(Mat::Identity(2, 3), full), SingularGamma);
}

TEST_CASE("whitened observation noise has identity covariance") {
  RngStream rng(23);
  const Mat h = random_matrix(rng, 3, 5);
  const Mat gamma = random_spd(rng, 3);
  const auto op = build_operator(h, gamma);
  const Mat root = Eigen::LLT<Mat>(gamma).matrixL();
  Mat acc = Mat::Zero(3, 3);
  const int n = 100000;
  Vec xi(3);
  for (int i = 0; i < n; ++i) {
    rng.fill_normal(xi);
    const Vec w = op.whiten_observation(root * xi);
    acc += w * w.transpose();
  }
  acc /= n;
  CHECK((acc - Mat::Identity(3, 3)).norm() / std::sqrt(3.0) < 0.05);
}

TEST_CASE("observation synthesis") {
  Mat h = Mat::Zero(1, 5);
  h(0, 0) = 1;
  const auto op = build_operator<double>(h, Mat::Constant(1, 1, 0.01));
  Vec truth = Vec::Zero(5);
  truth[0] = 1;

  SUBCASE("zero noise") {
    const auto obs = observe_with_noise(op, truth, Vec::Zero(1).eval());
    CHECK(obs.z[0] == doctest::Approx(10.0));
    CHECK(!obs.has_perturbations());
  }
  SUBCASE("identity operator with unit noise draw") {
    const auto id = build_operator<double>(Mat::Identity(5, 5), Mat::Identity(5, 5));
    const auto obs = observe_with_noise(id, Vec::Zero(5).eval(), Vec::Unit(5, 0).eval());
    CHECK(obs.z == Vec::Unit(5, 0));
  }
  SUBCASE("perturbed copies are distinct and centred on z") {
    RngStream rng(3);
    auto obs = observe(op, truth, 6, true, rng);
    REQUIRE(obs.perturbed.cols() == 6);
    for (int a = 0; a < 6; ++a)
      for (int b = a + 1; b < 6; ++b) CHECK(obs.perturbed(0, a) != obs.perturbed(0, b));
    const int reps = 100000;
    double sum = 0;
    Observation<double> fixed = obs;
    for (int r = 0; r < reps; ++r) {
      perturb_observation(fixed, 6, rng);
      sum += fixed.perturbed.mean();
    }
    const double se = 1.0 / std::sqrt(6.0 * reps);
    CHECK(std::abs(sum / reps - obs.z[0]) < 3 * se);
  }
}

TEST_CASE("filtering through the whitening matches filtering a pre-whitened problem") {
  RngStream setup(41);
  const Eigen::Index d = 4;
  const Mat h = random_matrix(setup, 2, d);
  const Mat gamma = random_spd(setup, 2);
  const auto op = build_operator(h, gamma);
  const Mat& psi = op.rotation();
  REQUIRE(!op.identity_rotation());

  Mat a = random_matrix(setup, d, d) * 0.3 - Mat::Identity(d, d);
  const auto raw_model = ModelSpec<double>::linear_gaussian(a, Mat::Zero(d, d));
  const auto rot_model = ModelSpec<double>::linear_gaussian(psi.transpose() * a * psi, Mat::Zero(d, d));
  const auto canon = ObservationOperator<double>::canonical(op.h0(), d);

  const double dt = 0.1;
  const auto integ = IntegratorSpec::rk4();
  Mat members(d, 6);
  setup.fill_normal(members);

  FilterConfig cfg;
  cfg.kind = FilterKind::EnKF;
  cfg.policy = InflationPolicy::constant_additive(0.1);
  EnsembleFilter<double> raw(cfg, op, raw_model, integ, dt);
  EnsembleFilter<double> whitened(cfg, canon, rot_model, integ, dt);

  FilterState<double> s_raw{Ensemble<double>(members), RngStream(5), RngStream(6)};
  FilterState<double> s_white{Ensemble<double>(psi.transpose() * members), RngStream(5), RngStream(6)};

  Vec truth = Vec::Ones(d);
  RngStream obs_rng(7);
  const Mat root = Eigen::LLT<Mat>(gamma).matrixL();
  Vec xi(2);
  for (int n = 0; n < 30; ++n) {
    truth = flow_map(raw_model, integ, truth, dt);
    obs_rng.fill_normal(xi);
    Observation<double> obs;
    obs.z = op.whiten_observation(h * truth + root * xi);
    raw.assimilate(s_raw, obs);
    whitened.assimilate(s_white, obs);
    const Mat back = psi * s_white.ensemble.members();
    CHECK((back - s_raw.ensemble.members()).norm() <= 1e-10 * (1 + back.norm()));
  }
}
