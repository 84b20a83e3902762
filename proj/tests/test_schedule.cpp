#include <doctest.h>

#include "diffspeech/numeric.hpp"
#include "diffspeech/rng.hpp"
#include "diffspeech/schedule.hpp"

using namespace diffspeech;

namespace {
const NoiseSchedule<double> kDefault{0.05, 20.0};
}

TEST_CASE("noise schedule endpoints are validated") {
  CHECK_THROWS_AS(NoiseSchedule<double>(0.0, 1.0), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule<double>(2.0, 1.0), ConfigError);
  CHECK_THROWS_AS(NoiseSchedule<double>(1.0, 1.0), ConfigError);
}

TEST_CASE("beta_at endpoints and midpoint") {
  CHECK(beta_at(kDefault, 0.0) == 0.05);
  CHECK(beta_at(kDefault, 1.0) == 20.0);
  // midpoint of the affine schedule, hand-computed
  CHECK(beta_at(kDefault, 0.5) == doctest::Approx(10.025).epsilon(1e-15));
  CHECK_THROWS_AS(beta_at(kDefault, -0.1), DomainError);
  CHECK_THROWS_AS(beta_at(kDefault, 1.1), DomainError);
}

TEST_CASE("beta_integral closed form") {
  CHECK(beta_integral(kDefault, 0.0) == 0.0);
  // 0.05 + 19.95 / 2
  CHECK(beta_integral(kDefault, 1.0) == doctest::Approx(10.025).epsilon(1e-15));
  CHECK(beta_integral(kDefault, 0.5) == doctest::Approx(2.51875).epsilon(1e-15));
}

TEST_CASE("beta_integral matches adaptive quadrature on random schedules") {
  Rng rng(101);
  for (int k = 0; k < 100; ++k) {
    const double b0 = rng.uniform(0.01, 1.0);
    const NoiseSchedule<double> sched(b0, b0 + rng.uniform(0.5, 30.0));
    const double t = rng.uniform(1e-4, 1.0);
    const double closed = beta_integral(sched, t);
    const double quad = adaptive_simpson([&](double s) { return beta_at(sched, s); }, 0.0, t);
    CHECK(std::abs(closed - quad) <= 1e-10 * std::max(std::abs(quad), 1e-30));
  }
}

TEST_CASE("moments at t=0 and t=1") {
  const auto m0 = moments_at(kDefault, 0.0);
  CHECK(m0.rho_coeff_mu == 0.0);
  CHECK(m0.rho_coeff_x0 == 1.0);
  CHECK(m0.sigma2 == 0.0);

  const auto m1 = moments_at(kDefault, 1.0);
  CHECK(m1.rho_coeff_x0 == doctest::Approx(std::exp(-5.0125)).epsilon(1e-14));
  CHECK(m1.rho_coeff_x0 == doctest::Approx(6.6477e-3).epsilon(1e-4));
  CHECK(m1.sigma2 == doctest::Approx(1.0 - std::exp(-10.025)).epsilon(1e-14));
  // prior approaches N(mu, I)
  CHECK(m1.sigma2 > 0.9999);
  CHECK(m1.rho_coeff_mu > 0.99);
}

TEST_CASE("moment identities hold exactly for random schedules and times") {
  Rng rng(102);
  for (int k = 0; k < 200; ++k) {
    const double b0 = rng.uniform(0.01, 1.0);
    const NoiseSchedule<double> sched(b0, b0 + rng.uniform(0.5, 30.0));
    const auto m = moments_at(sched, rng.uniform());
    CHECK(m.rho_coeff_mu + m.rho_coeff_x0 == 1.0);
    CHECK(m.sigma2 == 1.0 - m.rho_coeff_x0 * m.rho_coeff_x0);
    CHECK(m.sigma2 >= 0.0);
    CHECK(m.sigma2 < 1.0);
  }
}

TEST_CASE("sigma2 is zero iff t is zero") {
  CHECK(moments_at(kDefault, 0.0).sigma2 == 0.0);
  CHECK(moments_at(kDefault, 1e-6).sigma2 > 0.0);
}

TEST_CASE("forward_sample at t=0 returns x0 exactly") {
  Rng rng(103);
  const Matd x0 = gaussian_matrix<double>(3, 4, rng);
  const Matd mu = gaussian_matrix<double>(3, 4, rng);
  const Matd noise = Matd::Zero(3, 4);
  const Matd got = forward_sample(kDefault, 0.0, x0, mu, noise);
  CHECK((got - x0).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward_sample with x0 = mu reduces to mu + sigma * noise") {
  Rng rng(104);
  const Matd mu = gaussian_matrix<double>(2, 5, rng);
  const Matd noise = gaussian_matrix<double>(2, 5, rng);
  const double t = 0.4;
  const auto m = moments_at(kDefault, t);
  const Matd got = forward_sample(kDefault, t, mu, mu, noise);
  const Matd want = mu + m.sigma() * noise;
  CHECK(max_rel_err(got, want) < 1e-14);
}

TEST_CASE("forward_sample rejects shape mismatches") {
  const Matd a = Matd::Zero(2, 3);
  const Matd b = Matd::Zero(3, 2);
  CHECK_THROWS_AS(forward_sample(kDefault, 0.5, a, b, a), ShapeError);
  CHECK_THROWS_AS(forward_sample(kDefault, 0.5, a, a, b), ShapeError);
}

TEST_CASE("forward_sample Monte Carlo matches the conditional law") {
  Rng rng(105);
  const int N = 20000;
  const int D = 4;
  RowVecd x0(D), mu(D);
  x0 << 0.7, -1.1, 0.2, 2.0;
  mu << -0.5, 0.4, 1.5, 0.0;
  const double t = 0.5;
  const auto m = moments_at(kDefault, t);
  Matd draws(N, D);
  for (int i = 0; i < N; ++i)
    draws.row(i) = forward_sample(kDefault, t, x0, mu, gaussian_matrix<double>(1, D, rng));
  const RowVecd want_mean = m.rho_coeff_mu * mu + m.rho_coeff_x0 * x0;
  const double se_mean = m.sigma() / std::sqrt(double(N));
  const double se_var = m.sigma2 * std::sqrt(2.0 / (N - 1.0));
  for (int j = 0; j < D; ++j) {
    const double mean = draws.col(j).mean();
    CHECK(std::abs(mean - want_mean(j)) < 3.0 * se_mean);
    const double var = (draws.col(j).array() - mean).square().sum() / (N - 1.0);
    CHECK(std::abs(var - m.sigma2) < 3.0 * se_var);
  }
}

// Euler-Maruyama simulation of the forward SDE reproduces the closed-form
// conditional moments at several snapshot times.
TEST_CASE("forward SDE simulation reproduces closed-form moments") {
  Rng rng(106);
  const int N = 10000;
  const int D = 2;
  const double dt = 1e-3;
  RowVecd x0(D), mu(D);
  x0 << 1.5, -0.8;
  mu << -0.3, 0.6;

  Matd x = x0.replicate(N, 1);
  const double snapshots[] = {0.25, 0.5, 1.0};
  size_t next_snap = 0;
  const int steps = static_cast<int>(1.0 / dt);
  for (int k = 0; k < steps && next_snap < 3; ++k) {
    const double t = k * dt;
    const double beta = beta_at(kDefault, t);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < D; ++j)
        x(i, j) += 0.5 * beta * (mu(j) - x(i, j)) * dt + std::sqrt(beta * dt) * rng.gaussian();

    const double t_next = (k + 1) * dt;
    if (t_next + 1e-12 >= snapshots[next_snap]) {
      const auto m = moments_at(kDefault, snapshots[next_snap]);
      const RowVecd want_mean = m.rho_coeff_mu * mu + m.rho_coeff_x0 * x0;
      const double se_mean = m.sigma() / std::sqrt(double(N));
      const double se_var = m.sigma2 * std::sqrt(2.0 / (N - 1.0));
      for (int j = 0; j < D; ++j) {
        const double mean = x.col(j).mean();
        CHECK(std::abs(mean - want_mean(j)) < 3.0 * se_mean);
        const double var = (x.col(j).array() - mean).square().sum() / (N - 1.0);
        CHECK(std::abs(var - m.sigma2) < 3.0 * se_var);
      }
      ++next_snap;
    }
  }
  CHECK(next_snap == 3);
}

TEST_CASE("true_score_gaussian vanishes at the marginal mode") {
  const int D = 3;
  RowVecd data_mean(D), data_var(D), mu(D);
  data_mean << 0.2, -0.5, 1.0;
  data_var << 0.3, 0.5, 0.2;
  mu << 1.0, 0.0, -1.0;
  const double t = 0.6;
  const auto m = moments_at(kDefault, t);
  Matd x_t(1, D);
  x_t.row(0) = m.rho_coeff_mu * mu + m.rho_coeff_x0 * data_mean;
  const Matd score = true_score_gaussian(kDefault, t, x_t, mu, data_mean, data_var);
  CHECK(score.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("true_score_gaussian at t=0 reduces to the data score") {
  Rng rng(107);
  const int D = 3;
  RowVecd data_mean(D), data_var(D);
  data_mean << 0.2, -0.5, 1.0;
  data_var << 0.3, 0.5, 0.2;
  const Matd mu = gaussian_matrix<double>(2, D, rng);
  const Matd x = gaussian_matrix<double>(2, D, rng);
  const Matd score = true_score_gaussian(kDefault, 0.0, x, mu, data_mean, data_var);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < D; ++j)
      CHECK(score(i, j) ==
            doctest::Approx(-(x(i, j) - data_mean(j)) / data_var(j)).epsilon(1e-12));
}

TEST_CASE("true_score_gaussian rejects nonpositive variances") {
  RowVecd data_mean(2), data_var(2);
  data_mean << 0.0, 0.0;
  data_var << 1.0, 0.0;
  const Matd x = Matd::Zero(1, 2);
  CHECK_THROWS_AS(true_score_gaussian(kDefault, 0.5, x, x, data_mean, data_var), DomainError);
}

TEST_CASE("true_score_gaussian matches finite differences of the log density") {
  Rng rng(108);
  const int L = 2, D = 3;
  RowVecd data_mean(D), data_var(D);
  data_mean << 0.2, -0.5, 1.0;
  data_var << 0.3, 0.5, 0.2;
  const Matd mu = gaussian_matrix<double>(L, D, rng);
  const Matd x = gaussian_matrix<double>(L, D, rng);
  const double t = 0.35;
  const Matd score = true_score_gaussian(kDefault, t, x, mu, data_mean, data_var);
  const double h = 1e-5;
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < D; ++j) {
      Matd xp = x, xm = x;
      xp(i, j) += h;
      xm(i, j) -= h;
      const double fd = (gaussian_marginal_logdensity(kDefault, t, xp, mu, data_mean, data_var) -
                         gaussian_marginal_logdensity(kDefault, t, xm, mu, data_mean, data_var)) /
                        (2.0 * h);
      CHECK(std::abs(score(i, j) - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("schedule functions work in float instantiation") {
  const NoiseSchedule<float> sched(0.05f, 20.0f);
  CHECK(beta_at(sched, 0.5f) == doctest::Approx(10.025f));
  const auto m = moments_at(sched, 0.5f);
  CHECK(m.rho_coeff_mu + m.rho_coeff_x0 == 1.0f);
}
