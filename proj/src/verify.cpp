#include "diffspeech/verify.hpp"

#include <cmath>

#include "diffspeech/numeric.hpp"
#include "diffspeech/sampler.hpp"

namespace diffspeech {

namespace {

CheckResult make_result(const std::string& name, double measured, double tol,
                        const std::string& detail = "") {
  CheckResult r;
  r.name = name;
  r.measured = measured;
  r.tolerance = tol;
  r.pass = measured <= tol;
  r.detail = detail;
  return r;
}

CheckResult check_schedule_quadrature() {
  Rng rng(7001);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double b0 = rng.uniform(0.01, 1.0);
    const double b1 = b0 + rng.uniform(0.5, 30.0);
    const double t = rng.uniform(1e-4, 1.0);
    const NoiseSchedule<double> sched(b0, b1);
    const double closed = beta_integral(sched, t);
    const double quad = adaptive_simpson([&](double s) { return beta_at(sched, s); }, 0.0, t);
    worst = std::max(worst, std::abs(closed - quad) / std::max(std::abs(quad), 1e-30));
    // sigma_t^2 and rho through the quadrature value
    const auto m = moments_at(sched, t);
    const double sigma2_q = 1.0 - std::exp(-quad);
    const double rho_q = std::exp(-0.5 * quad);
    worst = std::max(worst, std::abs(m.sigma2 - sigma2_q) / std::max(std::abs(sigma2_q), 1e-30));
    worst = std::max(worst, std::abs(m.rho_coeff_x0 - rho_q) / std::max(std::abs(rho_q), 1e-30));
  }
  return make_result("schedule_closed_form_vs_quadrature", worst, 1e-10,
                     "max relative error over 100 random (beta0, beta1, t)");
}

CheckResult check_moment_identities() {
  Rng rng(7002);
  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const double b0 = rng.uniform(0.01, 1.0);
    const NoiseSchedule<double> sched(b0, b0 + rng.uniform(0.5, 30.0));
    const auto m = moments_at(sched, rng.uniform());
    worst = std::max(worst, std::abs(m.rho_coeff_mu + m.rho_coeff_x0 - 1.0));
    worst = std::max(worst, std::abs(m.sigma2 - (1.0 - m.rho_coeff_x0 * m.rho_coeff_x0)));
  }
  return make_result("moment_identities", worst, 1e-15,
                     "rho_mu + rho_x0 = 1 and sigma2 = 1 - rho_x0^2");
}

CheckResult check_forward_sample_moments(const NoiseSchedule<double>& sched) {
  Rng rng(7003);
  const int D = 4;
  const int N = 20000;
  RowVecd x0(D), mu(D);
  x0 << 0.7, -1.1, 0.2, 2.0;
  mu << -0.5, 0.4, 1.5, 0.0;
  const double t = 0.5;
  const auto m = moments_at(sched, t);
  Matd draws(N, D);
  for (int i = 0; i < N; ++i) {
    const Matd noise = gaussian_matrix<double>(1, D, rng);
    draws.row(i) = forward_sample(sched, t, x0, mu, noise);
  }
  const RowVecd mean = draws.colwise().mean();
  const RowVecd want_mean = m.rho_coeff_mu * mu + m.rho_coeff_x0 * x0;
  double worst_z = 0.0;
  const double se_mean = m.sigma() / std::sqrt(double(N));
  const double se_var = m.sigma2 * std::sqrt(2.0 / (N - 1.0));
  for (int j = 0; j < D; ++j) {
    worst_z = std::max(worst_z, std::abs(mean(j) - want_mean(j)) / se_mean);
    const double var = (draws.col(j).array() - mean(j)).square().sum() / (N - 1.0);
    worst_z = std::max(worst_z, std::abs(var - m.sigma2) / se_var);
  }
  return make_result("forward_sample_moments", worst_z, 3.0,
                     "max z-score of Monte-Carlo mean/variance at t=0.5");
}

CheckResult check_score_gradient() {
  Rng rng(7004);
  const NoiseSchedule<double> sched(0.05, 20.0);
  ScoreNet<double> net = ScoreNet<double>::init(3, 2, {5, 4}, sched, rng);

  TrainBatch<double> batch;
  const int B = 4;
  batch.x0 = gaussian_matrix<double>(B, 3, rng);
  batch.mu = gaussian_matrix<double>(B, 3, rng);
  batch.eps = gaussian_matrix<double>(B, 3, rng);
  batch.speakers = {0, 1, 0, 1};
  batch.t.resize(B);
  for (int i = 0; i < B; ++i) batch.t(i) = rng.uniform(0.05, 1.0);

  const DsmResult<double> res = dsm_loss(net, batch);
  const double h = 1e-4;
  double worst = 0.0;
  for (size_t p = 0; p < net.mlp.n_params(); ++p) {
    const double orig = net.mlp.get_param(p);
    net.mlp.set_param(p, orig + h);
    const double up = dsm_loss(net, batch).loss;
    net.mlp.set_param(p, orig - h);
    const double down = dsm_loss(net, batch).loss;
    net.mlp.set_param(p, orig);
    const double fd = (up - down) / (2.0 * h);
    const double an = net.mlp.grad_at(res.grads, p);
    worst = std::max(worst, std::abs(an - fd) / std::max(1.0, std::abs(an) + std::abs(fd)));
  }
  return make_result("score_gradient_check", worst, 1e-4,
                     "analytic vs central finite differences over all parameters");
}

CheckResult check_classifier_gradient() {
  Rng rng(7005);
  const NoiseSchedule<double> sched(0.05, 20.0);
  PhoneClassifier<double> clf =
      PhoneClassifier<double>::init(3, {"a", "b", "c"}, {5, 4}, sched, rng);
  const int L = 3;
  const Matd x = gaussian_matrix<double>(L, 3, rng);
  const std::vector<int> labels = {2, 0, 1};
  const double t = 0.37;

  double worst = 0.0;
  // input gradient vs finite differences of the total log-prob
  const Matd grad = guidance_gradient(clf, x, t, labels, FrameWeights::uniform(3));
  const double h = 1e-5;
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < 3; ++j) {
      Matd xp = x, xm = x;
      xp(i, j) += h;
      xm(i, j) -= h;
      const double fd = (frame_logprob(clf, xp, t, labels).total -
                         frame_logprob(clf, xm, t, labels).total) /
                        (2.0 * h);
      worst = std::max(worst, std::abs(grad(i, j) - fd) /
                                  std::max(1.0, std::abs(grad(i, j)) + std::abs(fd)));
    }
  }
  // parameter gradient of the cross-entropy loss
  const Vecd ts = Vecd::Constant(L, t);
  const CeResult<double> ce = classifier_ce_loss(clf, x, ts, labels);
  const double hp = 1e-4;
  for (size_t p = 0; p < clf.mlp.n_params(); ++p) {
    const double orig = clf.mlp.get_param(p);
    clf.mlp.set_param(p, orig + hp);
    const double up = classifier_ce_loss(clf, x, ts, labels).loss;
    clf.mlp.set_param(p, orig - hp);
    const double down = classifier_ce_loss(clf, x, ts, labels).loss;
    clf.mlp.set_param(p, orig);
    const double fd = (up - down) / (2.0 * hp);
    const double an = clf.mlp.grad_at(ce.grads, p);
    worst = std::max(worst, std::abs(an - fd) / std::max(1.0, std::abs(an) + std::abs(fd)));
  }
  return make_result("classifier_gradient_check", worst, 1e-4,
                     "guidance gradient and CE parameter gradient vs finite differences");
}

CheckResult check_loss_identity_oracle(const NoiseSchedule<double>& sched) {
  Rng rng(7006);
  TrainBatch<double> batch;
  const int B = 16, D = 4;
  batch.x0 = gaussian_matrix<double>(B, D, rng);
  batch.mu = gaussian_matrix<double>(B, D, rng);
  batch.eps = gaussian_matrix<double>(B, D, rng);
  batch.speakers.assign(B, 0);
  batch.t.resize(B);
  for (int i = 0; i < B; ++i) batch.t(i) = rng.uniform(0.05, 1.0);

  Matd oracle(B, D);
  for (int i = 0; i < B; ++i)
    oracle.row(i) = -batch.eps.row(i) / moments_at(sched, batch.t(i)).sigma();
  const double loss = dsm_loss_value(oracle, batch, sched);
  return make_result("loss_identity_oracle_target", std::abs(loss), 1e-12,
                     "injecting -eps/sigma yields zero loss");
}

CheckResult check_loss_identity_zero_net(const NoiseSchedule<double>& sched) {
  Rng rng(7007);
  TrainBatch<double> batch;
  const int B = 32, D = 4;
  batch.x0 = gaussian_matrix<double>(B, D, rng);
  batch.mu = gaussian_matrix<double>(B, D, rng);
  batch.eps = gaussian_matrix<double>(B, D, rng);
  batch.speakers.assign(B, 0);
  batch.t.resize(B);
  for (int i = 0; i < B; ++i) batch.t(i) = rng.uniform(0.05, 1.0);

  ScoreNet<double> zero = ScoreNet<double>::zeros(D, 1, {5}, sched);
  TrainBatch<double> b2 = batch;
  const double loss = dsm_loss(zero, b2).loss;
  const double want = batch.eps.array().square().rowwise().sum().mean();
  return make_result("loss_identity_zero_net", rel_err(loss, want), 1e-9,
                     "zero net loss equals mean ||eps||^2");
}

CheckResult check_ode_sde_marginal(const NoiseSchedule<double>& sched) {
  Rng rng_ode(7008), rng_sde(7009);
  const int D = 4, N = 4000, steps = 400;
  RowVecd mu(D), data_mean(D), data_var(D);
  mu << 0.5, -0.2, 1.0, 0.0;
  data_mean << 1.2, 0.3, -0.8, 0.4;
  data_var << 0.25, 0.5, 0.3, 0.4;

  GuidanceConfig ode_cfg;
  ode_cfg.alpha = 0.0;
  ode_cfg.n_steps = steps;
  ode_cfg.kind = SamplerKind::euler_ode;
  ode_cfg.weights = FrameWeights::uniform(1);
  GuidanceConfig sde_cfg = ode_cfg;
  sde_cfg.kind = SamplerKind::euler_sde;

  const ScoreFn score = [&](const Matd& x, double t) {
    return true_score_gaussian(sched, t, x, mu.matrix(), data_mean, data_var);
  };

  Matd ode_end(N, D), sde_end(N, D);
  for (int i = 0; i < N; ++i) {
    const Matd x1o = sample_prior(mu, sched, rng_ode);
    ode_end.row(i) = run_reverse(x1o, mu, sched, ode_cfg, score, nullptr, nullptr, nullptr).first;
    const Matd x1s = sample_prior(mu, sched, rng_sde);
    sde_end.row(i) = run_reverse(x1s, mu, sched, sde_cfg, score, nullptr, nullptr, &rng_sde).first;
  }
  double worst_z = 0.0;
  for (int j = 0; j < D; ++j) {
    const double mo = ode_end.col(j).mean();
    const double ms = sde_end.col(j).mean();
    const double vo = (ode_end.col(j).array() - mo).square().sum() / (N - 1.0);
    const double vs = (sde_end.col(j).array() - ms).square().sum() / (N - 1.0);
    const double se_mean = std::sqrt(vo / N + vs / N);
    const double se_var = std::sqrt(2.0 * vo * vo / (N - 1.0) + 2.0 * vs * vs / (N - 1.0));
    worst_z = std::max(worst_z, std::abs(mo - ms) / se_mean);
    worst_z = std::max(worst_z, std::abs(vo - vs) / se_var);
  }
  return make_result("ode_sde_marginal_match", worst_z, 3.0,
                     "terminal mean/variance z-scores between ODE and SDE ensembles");
}

struct GuidanceFixture {
  NoiseSchedule<double> sched{0.05, 20.0};
  ScoreNet<double> net;
  PhoneClassifier<double> clf;
  Matd mu;
  std::vector<int> labels;

  GuidanceFixture() : net(make_net()), clf(make_clf()), mu(gaussian()), labels{0, 2, 1, 1, 0} {}

  static ScoreNet<double> make_net() {
    Rng rng(7010);
    return ScoreNet<double>::init(4, 2, {8, 8}, {0.05, 20.0}, rng);
  }
  static PhoneClassifier<double> make_clf() {
    Rng rng(7011);
    return PhoneClassifier<double>::init(4, {"a", "b", "c"}, {8, 8}, {0.05, 20.0}, rng);
  }
  static Matd gaussian() {
    Rng rng(7012);
    return gaussian_matrix<double>(5, 4, rng);
  }
};

CheckResult check_alpha_zero_identity() {
  GuidanceFixture fx;
  const ScoreFn score = make_score_fn(fx.net, fx.mu, 1);
  const GuidanceFn guide = make_guidance_fn(fx.clf, fx.labels, FrameWeights::uniform(3));

  GuidanceConfig gcfg;
  gcfg.alpha = 0.0;
  gcfg.n_steps = 25;
  gcfg.weights = FrameWeights::uniform(3);

  Rng rng_a(4242);
  const Matd x1a = sample_prior(fx.mu, fx.sched, rng_a);
  const Matd with_guide =
      run_reverse(x1a, fx.mu, fx.sched, gcfg, score, &guide, nullptr, nullptr).first;
  Rng rng_b(4242);
  const Matd x1b = sample_prior(fx.mu, fx.sched, rng_b);
  const Matd without =
      run_reverse(x1b, fx.mu, fx.sched, gcfg, score, nullptr, nullptr, nullptr).first;
  const double diff = (with_guide - without).cwiseAbs().maxCoeff();
  return make_result("alpha_zero_bit_identity", diff, 0.0,
                     "alpha=0 guided run must equal the unguided run bit for bit");
}

CheckResult check_norm_identity() {
  GuidanceFixture fx;
  const ScoreFn score = make_score_fn(fx.net, fx.mu, 1);
  const GuidanceFn guide = make_guidance_fn(fx.clf, fx.labels, FrameWeights::uniform(3));

  GuidanceConfig gcfg;
  gcfg.alpha = 0.3;
  gcfg.n_steps = 25;
  gcfg.weights = FrameWeights::uniform(3);

  Rng rng(4243);
  const Matd x1 = sample_prior(fx.mu, fx.sched, rng);
  const auto [x_end, traj] =
      run_reverse(x1, fx.mu, fx.sched, gcfg, score, &guide, nullptr, nullptr);
  (void)x_end;
  double worst = 0.0;
  for (const StepDiag& d : traj.diags) {
    if (d.guidance_norm < kGammaGuard) continue;
    const double want = gcfg.alpha * d.score_norm;
    worst = std::max(worst, std::abs(d.applied_norm - want) / std::max(want, 1e-30));
  }
  return make_result("guidance_norm_identity", worst, 1e-9,
                     "||gamma g|| = alpha ||score|| at every guided step");
}

}  // namespace

std::vector<CheckResult> run_verification(const RunConfig& cfg) {
  const NoiseSchedule<double> sched = cfg.schedule();
  std::vector<CheckResult> checks;
  checks.push_back(check_schedule_quadrature());
  checks.push_back(check_moment_identities());
  checks.push_back(check_forward_sample_moments(sched));
  checks.push_back(check_score_gradient());
  checks.push_back(check_classifier_gradient());
  checks.push_back(check_loss_identity_oracle(sched));
  checks.push_back(check_loss_identity_zero_net(sched));
  checks.push_back(check_ode_sde_marginal(sched));
  checks.push_back(check_alpha_zero_identity());
  checks.push_back(check_norm_identity());
  return checks;
}

json checks_to_json(const std::vector<CheckResult>& checks) {
  json arr = json::array();
  for (const auto& c : checks) {
    arr.push_back({{"name", c.name},
                   {"pass", c.pass},
                   {"measured", c.measured},
                   {"tolerance", c.tolerance},
                   {"detail", c.detail}});
  }
  return arr;
}

}  // namespace diffspeech
