#pragma once

#include <cmath>

#include "diffspeech/types.hpp"

namespace diffspeech {

// Linear noise scale beta_t = beta0 + (beta1 - beta0) * t on t in [0, 1].
// The forward process d x_t = 1/2 (mu - x_t) beta_t dt + sqrt(beta_t) dw_t is
// fully characterized by the closed forms below.
template <typename Scalar = double>
struct NoiseSchedule {
  Scalar beta0;
  Scalar beta1;

  NoiseSchedule(Scalar b0, Scalar b1) : beta0(b0), beta1(b1) {
    if (!(Scalar(0) < b0 && b0 < b1)) {
      throw ConfigError("noise schedule requires 0 < beta0 < beta1, got beta0=" +
                        std::to_string(static_cast<double>(b0)) +
                        " beta1=" + std::to_string(static_cast<double>(b1)));
    }
  }
};

// Coefficients of the conditional law of x_t given x_0:
//   x_t | x_0 ~ N(rho_coeff_mu * mu + rho_coeff_x0 * x0, sigma2 * I)
// with rho_coeff_mu = 1 - e^{-I/2}, rho_coeff_x0 = e^{-I/2},
// sigma2 = 1 - e^{-I}, I = int_0^t beta_s ds.
template <typename Scalar = double>
struct ForwardMoments {
  Scalar rho_coeff_mu;
  Scalar rho_coeff_x0;
  Scalar sigma2;

  Scalar sigma() const { return std::sqrt(sigma2); }
};

template <typename Scalar>
void check_unit_time(Scalar t) {
  if (!(t >= Scalar(0) && t <= Scalar(1))) {
    throw DomainError("diffusion time t must lie in [0,1], got " +
                      std::to_string(static_cast<double>(t)));
  }
}

template <typename Scalar>
Scalar beta_at(const NoiseSchedule<Scalar>& sched, Scalar t) {
  check_unit_time(t);
  return sched.beta0 + (sched.beta1 - sched.beta0) * t;
}

// int_0^t beta_s ds = beta0 t + (beta1 - beta0) t^2 / 2.
template <typename Scalar>
Scalar beta_integral(const NoiseSchedule<Scalar>& sched, Scalar t) {
  check_unit_time(t);
  return sched.beta0 * t + (sched.beta1 - sched.beta0) * t * t / Scalar(2);
}

template <typename Scalar>
ForwardMoments<Scalar> moments_at(const NoiseSchedule<Scalar>& sched, Scalar t) {
  const Scalar half_decay = std::exp(Scalar(-0.5) * beta_integral(sched, t));
  ForwardMoments<Scalar> m;
  m.rho_coeff_x0 = half_decay;
  m.rho_coeff_mu = Scalar(1) - half_decay;
  m.sigma2 = Scalar(1) - half_decay * half_decay;
  return m;
}

// Reparameterized draw from the conditional law: rho(x0, t) + sigma_t * noise.
// The noise matrix is caller-supplied standard normal draws.
template <typename Scalar, typename DX, typename DM, typename DN>
Mat<Scalar> forward_sample(const NoiseSchedule<Scalar>& sched, Scalar t,
                           const Eigen::MatrixBase<DX>& x0, const Eigen::MatrixBase<DM>& mu,
                           const Eigen::MatrixBase<DN>& noise) {
  require_same_shape(x0, mu, "forward_sample(x0, mu)");
  require_same_shape(x0, noise, "forward_sample(x0, noise)");
  const ForwardMoments<Scalar> m = moments_at(sched, t);
  return m.rho_coeff_mu * mu + m.rho_coeff_x0 * x0 + m.sigma() * noise;
}

// Analytic score oracle for a diagonal-Gaussian data distribution.
// If x0 ~ N(data_mean, diag(data_cov_diag)) per frame, then the marginal of
// x_t is Gaussian with mean m_t = rho_coeff_mu * mu + rho_coeff_x0 * data_mean
// and per-dimension variance v_t = rho_coeff_x0^2 * data_cov_diag + sigma2,
// so grad_x log P(x_t) = -(x_t - m_t) / v_t elementwise.
template <typename Scalar, typename DX, typename DM>
Mat<Scalar> true_score_gaussian(const NoiseSchedule<Scalar>& sched, Scalar t,
                                const Eigen::MatrixBase<DX>& x_t, const Eigen::MatrixBase<DM>& mu,
                                const RowVec<Scalar>& data_mean,
                                const RowVec<Scalar>& data_cov_diag) {
  require_same_shape(x_t, mu, "true_score_gaussian(x_t, mu)");
  if (data_mean.cols() != x_t.cols() || data_cov_diag.cols() != x_t.cols()) {
    throw ShapeError("true_score_gaussian: data_mean/data_cov_diag must have one entry per "
                     "feature dimension");
  }
  if ((data_cov_diag.array() <= Scalar(0)).any()) {
    throw DomainError("true_score_gaussian: data covariance diagonal must be positive");
  }
  const ForwardMoments<Scalar> m = moments_at(sched, t);
  const RowVec<Scalar> v_t =
      (m.rho_coeff_x0 * m.rho_coeff_x0 * data_cov_diag.array() + m.sigma2).matrix();
  Mat<Scalar> score(x_t.rows(), x_t.cols());
  for (Eigen::Index i = 0; i < x_t.rows(); ++i) {
    const RowVec<Scalar> m_row = m.rho_coeff_mu * mu.row(i) + m.rho_coeff_x0 * data_mean;
    score.row(i) = -((x_t.row(i) - m_row).array() / v_t.array()).matrix();
  }
  return score;
}

// Log density matching true_score_gaussian, for finite-difference cross-checks.
template <typename Scalar, typename DX, typename DM>
Scalar gaussian_marginal_logdensity(const NoiseSchedule<Scalar>& sched, Scalar t,
                                    const Eigen::MatrixBase<DX>& x_t,
                                    const Eigen::MatrixBase<DM>& mu,
                                    const RowVec<Scalar>& data_mean,
                                    const RowVec<Scalar>& data_cov_diag) {
  const ForwardMoments<Scalar> m = moments_at(sched, t);
  const RowVec<Scalar> v_t =
      (m.rho_coeff_x0 * m.rho_coeff_x0 * data_cov_diag.array() + m.sigma2).matrix();
  Scalar logp = Scalar(0);
  for (Eigen::Index i = 0; i < x_t.rows(); ++i) {
    const RowVec<Scalar> m_row = m.rho_coeff_mu * mu.row(i) + m.rho_coeff_x0 * data_mean;
    for (Eigen::Index j = 0; j < x_t.cols(); ++j) {
      const Scalar d = x_t(i, j) - m_row(j);
      logp += Scalar(-0.5) * (d * d / v_t(j) + std::log(Scalar(2) * Scalar(M_PI) * v_t(j)));
    }
  }
  return logp;
}

}  // namespace diffspeech
