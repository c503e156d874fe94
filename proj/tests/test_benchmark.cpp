#include <doctest.h>

#include <cmath>

#include "enkf/benchmark.hpp"

using namespace enkf;

namespace {

Climatology<double> gaussian(const Vec& mean, const Mat& cov) {
  Climatology<double> c;
  c.mean = mean;
  c.covariance = cov;
  c.samples = 10000;
  return c;
}

}  // namespace

TEST_CASE("degenerate climatology gives noise-only thresholds") {
  const auto op = build_operator<double>(Mat::Identity(3, 3), Mat::Identity(3, 3));
  const auto b = benchmark_error(gaussian(Vec::Zero(3), Mat::Zero(3, 3)), op, 6);
  CHECK(b.error_a == 0.0);
  CHECK(b.sigma_theta * b.sigma_theta == doctest::Approx(6.0));
  CHECK(b.m_xi == 0.0);
  const auto literal = benchmark_error(gaussian(Vec::Zero(3), Mat::Zero(3, 3)), op, 6, NoiseDimension::State);
  CHECK(literal.noise_term == 6.0);
}

TEST_CASE("trivial benchmark") {
  const auto t = trivial_benchmark(0.5, 1.0, 1.0, 1.0, 6);
  CHECK(t.theta_sq_bound == doctest::Approx(4.0));
  CHECK(t.xi_bound == doctest::Approx(1.2));
  const auto noise_only = trivial_benchmark(0.5, 0.0, 3.0, 2.0, 6);
  CHECK(noise_only.theta_sq_bound == 4.0);
  CHECK(noise_only.xi_bound == 0.0);
  CHECK_THROWS_AS(trivial_benchmark(1.5, 1.0, 1.0, 1.0, 6), InvalidArgument);
}

TEST_CASE("closed form for a diagonal climatology") {
  // Observe the first coordinate with gain 10; the others keep their variance.
  Mat h = Mat::Zero(1, 3);
  h(0, 0) = 1;
  const auto op = build_operator<double>(h, Mat::Constant(1, 1, 0.01));
  Vec var(3);
  var << 2.0, 3.0, 5.0;
  const auto b = benchmark_error(gaussian(Vec::Zero(3), var.asDiagonal()), op, 6);
  const double observed = 2.0 / (1.0 + 100.0 * 2.0);
  CHECK(b.error_a == doctest::Approx(observed + 8.0));
  CHECK(b.sigma_theta == doctest::Approx(std::sqrt(100.0 * b.error_a + 2.0)));
  CHECK(b.m_xi == doctest::Approx(0.6 * b.error_a));
  CHECK(b.benchmark_rmse() == doctest::Approx(std::sqrt(b.error_a)));
}

TEST_CASE("benchmark error decreases with observation strength") {
  RngStream rng(3);
  Mat a(4, 4);
  rng.fill_normal(a);
  const Mat cov = a * a.transpose() + Mat::Identity(4, 4);
  double previous = 1e300;
  for (double gain : {0.1, 1.0, 10.0, 100.0}) {
    Mat h = Mat::Zero(2, 4);
    h(0, 0) = gain;
    h(1, 2) = gain;
    const auto b = benchmark_error(gaussian(Vec::Zero(4), cov), build_operator<double>(h, Mat::Identity(2, 2)), 6);
    CHECK(b.error_a < previous);
    previous = b.error_a;
    Eigen::SelfAdjointEigenSolver<Mat> eig(b.posterior_cov);
    CHECK(eig.eigenvalues().minCoeff() > -1e-12);
  }
}

TEST_CASE("benchmark error matches direct simulation of the conditional estimator") {
  RngStream rng(12);
  Mat a(3, 3);
  rng.fill_normal(a);
  const Mat cov = a * a.transpose() + 0.5 * Mat::Identity(3, 3);
  Vec mean(3);
  mean << 1, -2, 0.5;
  Mat h(2, 3);
  rng.fill_normal(h);
  Mat gamma(2, 2);
  gamma << 0.5, 0.1,
           0.1, 0.3;
  const auto op = build_operator(h, gamma);
  const auto b = benchmark_error(gaussian(mean, cov), op, 6);

  const Mat l = Eigen::LLT<Mat>(cov).matrixL();
  const Mat g = Eigen::LLT<Mat>(gamma).matrixL();
  Mat s = h * cov * h.transpose() + gamma;
  const Mat gain = cov * h.transpose() * s.inverse();
  const int n = 100000;
  double sum = 0, sum_sq = 0;
  Vec x(3), xi(2);
  for (int i = 0; i < n; ++i) {
    rng.fill_normal(x);
    rng.fill_normal(xi);
    const Vec u = mean + l * x;
    const Vec z = h * u + g * xi;
    const Vec r = mean + gain * (z - h * mean);
    const double e = (u - r).squaredNorm();
    sum += e;
    sum_sq += e * e;
  }
  const double avg = sum / n;
  const double se = std::sqrt((sum_sq / n - avg * avg) / (n - 1));
  CHECK(std::abs(avg - b.error_a) < 3 * se);
}

TEST_CASE("Ornstein-Uhlenbeck climatology matches the stationary covariance") {
  const double theta = 0.7;
  Mat q(2, 2);
  q << 1.0, 0.3,
       0.3, 0.5;
  const double h = 0.1;
  const auto model = ModelSpec<double>::ornstein_uhlenbeck(-theta * Mat::Identity(2, 2), q, h);
  ClimatologyOptions opts;
  opts.run_length = 1e4;
  opts.burn_in = 20;
  const auto clim = estimate_climatology(model, IntegratorSpec::rk4(), h, opts, 5);
  const Mat exact = q / (2 * theta);
  CHECK(clim.samples == 100000);
  CHECK((clim.covariance - exact).norm() / exact.norm() < 0.05);
  CHECK(clim.mean.norm() < 0.05);
}

TEST_CASE("Lorenz-96 climatological moments") {
  ClimatologyOptions opts;
  SUBCASE("F = 4") {
    const auto clim = estimate_climatology(ModelSpec<double>::lorenz96(4.0), IntegratorSpec::rk4(), 0.05, opts, 1);
    for (int i = 0; i < 5; ++i) {
      CHECK(clim.mean[i] == doctest::Approx(1.22).epsilon(0.1 / 1.22));
      CHECK(clim.covariance(i, i) == doctest::Approx(3.38).epsilon(0.3 / 3.38));
    }
  }
  SUBCASE("F = 8") {
    const auto clim = estimate_climatology(ModelSpec<double>::lorenz96(8.0), IntegratorSpec::rk4(), 0.05, opts, 1);
    for (int i = 0; i < 5; ++i) {
      CHECK(clim.mean[i] == doctest::Approx(2.28).epsilon(0.15 / 2.28));
      CHECK(clim.covariance(i, i) == doctest::Approx(12.6).epsilon(1.5 / 12.6));
    }
  }
}

TEST_CASE("a diverging climatology run is reported") {
  ClimatologyOptions opts;
  opts.run_length = 100;
  opts.burn_in = 0;
  CHECK_THROWS_AS(estimate_climatology(ModelSpec<double>::lorenz96(16.0), IntegratorSpec::explicit_euler(0.05), 0.05,
                                       opts, 1),
                  DivergedClimatologyRun);
}
