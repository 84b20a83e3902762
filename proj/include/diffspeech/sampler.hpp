#pragma once

#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "diffspeech/classifier.hpp"
#include "diffspeech/data.hpp"
#include "diffspeech/schedule.hpp"
#include "diffspeech/score_model.hpp"

namespace diffspeech {

enum class SamplerKind { euler_ode, exp_ode, euler_sde };

inline const char* to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::euler_ode: return "euler_ode";
    case SamplerKind::exp_ode: return "exp_ode";
    case SamplerKind::euler_sde: return "euler_sde";
  }
  return "?";
}

inline SamplerKind sampler_kind_from_string(const std::string& s) {
  if (s == "euler_ode") return SamplerKind::euler_ode;
  if (s == "exp_ode") return SamplerKind::exp_ode;
  if (s == "euler_sde") return SamplerKind::euler_sde;
  throw ConfigError("unknown sampler kind '" + s + "'");
}

// Guidance scale is zeroed when the classifier gradient norm falls below this.
inline constexpr double kGammaGuard = 1e-12;

struct GuidanceConfig {
  double alpha = 0.3;
  FrameWeights weights;
  int n_steps = 25;
  SamplerKind kind = SamplerKind::euler_ode;
  double t_end = 1e-3;
  bool per_frame_gamma = false;  // default: one Frobenius-norm gamma per step

  void validate() const {
    if (!(alpha >= 0)) throw ConfigError("guidance alpha must be >= 0");
    if (n_steps < 1) throw ConfigError("n_steps must be >= 1");
    if (!(t_end > 0 && t_end < 1)) throw ConfigError("t_end must lie in (0, 1)");
    if (kind == SamplerKind::euler_sde && alpha > 0)
      throw ConfigError("guided sampling is defined on the ODE path; use euler_ode or exp_ode");
    weights.validate();
  }
};

struct StepDiag {
  int step = 0;
  double t = 0.0;
  double score_norm = 0.0;
  double guidance_norm = 0.0;      // ||g||_F before scaling
  double gamma = 0.0;              // per-frame mode records the row mean
  double applied_norm = 0.0;       // ||gamma * g||_F actually added to the score
  double total_logprob = 0.0;      // classifier total log-prob at the step input
  int n_guarded_rows = 0;          // rows with ||g_i|| below the guard (per-frame mode)
};

struct Trajectory {
  std::vector<double> times;        // length n_steps + 1, strictly decreasing
  std::vector<Matd> states;         // populated when record_states is set
  std::vector<StepDiag> diags;      // one per step
  std::vector<Matd> sde_noise;      // per-step noise draws (SDE kind only)
};

// Terminal prior draw: mu + sigma_1 * noise. For the default schedule
// sigma_1^2 = 1 - e^{-10.025}, i.e. the prior is N(mu, I) up to 5e-5.
template <typename D>
Matd sample_prior(const Eigen::MatrixBase<D>& mu, const NoiseSchedule<double>& sched, Rng& rng) {
  const double sigma1 = moments_at(sched, 1.0).sigma();
  return mu + sigma1 * gaussian_matrix<double>(mu.rows(), mu.cols(), rng);
}

// One backward Euler step of the reverse ODE d x = 1/2 beta_t [mu - x - score] dt:
//   x' = x - 1/2 beta_t (mu - x - score) dt   (t decreasing by dt).
inline Matd reverse_ode_step(const Matd& x, double t, double dt, const Matd& score,
                             const Matd& mu, const NoiseSchedule<double>& sched) {
  const double beta = beta_at(sched, t);
  return x - 0.5 * beta * dt * (mu - x - score);
}

// Exponential-integrator variant: the linear (mu - x) part is integrated
// exactly over [t - dt, t] backward, the score part by Euler:
//   x' = mu + e^J (x - mu) + 1/2 beta_t score dt,  J = 1/2 int_{t-dt}^t beta.
inline Matd exp_ode_step(const Matd& x, double t, double dt, const Matd& score,
                         const Matd& mu, const NoiseSchedule<double>& sched) {
  const double J = 0.5 * (beta_integral(sched, t) - beta_integral(sched, t - dt));
  return mu + std::exp(J) * (x - mu) + 0.5 * beta_at(sched, t) * dt * score;
}

// Euler-Maruyama step of the reverse SDE. Its drift carries the full g^2
// score coefficient (beta_t) where the ODE carries g^2 / 2, so with the score
// term doubled and zero noise it coincides with reverse_ode_step:
//   x' = x - [1/2 beta_t (mu - x) - beta_t score] dt + sqrt(beta_t dt) noise.
inline Matd reverse_sde_step(const Matd& x, double t, double dt, const Matd& score,
                             const Matd& mu, const NoiseSchedule<double>& sched,
                             const Matd& noise) {
  const double beta = beta_at(sched, t);
  return x - dt * (0.5 * beta * (mu - x) - beta * score) + std::sqrt(beta * dt) * noise;
}

// Type-erased model views bound to a fixed conditioning (mu, speaker, labels).
// Sampler arithmetic is always double; f32 networks are cast per call.
using ScoreFn = std::function<Matd(const Matd& x, double t)>;
using GuidanceFn = std::function<Matd(const Matd& x, double t)>;
using LogProbFn = std::function<double(const Matd& x, double t)>;

template <typename Scalar>
ScoreFn make_score_fn(const ScoreNet<Scalar>& net, Matd mu, int speaker) {
  return [&net, mu = std::move(mu), speaker](const Matd& x, double t) -> Matd {
    const Mat<Scalar> xs = x.template cast<Scalar>();
    const Mat<Scalar> ms = mu.template cast<Scalar>();
    return score_forward(net, xs, t, ms, speaker).template cast<double>();
  };
}

template <typename Scalar>
GuidanceFn make_guidance_fn(const PhoneClassifier<Scalar>& clf, std::vector<int> labels,
                            FrameWeights weights) {
  return [&clf, labels = std::move(labels), weights = std::move(weights)](const Matd& x,
                                                                          double t) -> Matd {
    return guidance_gradient(clf, x.template cast<Scalar>().eval(), t, labels, weights)
        .template cast<double>();
  };
}

template <typename Scalar>
LogProbFn make_logprob_fn(const PhoneClassifier<Scalar>& clf, std::vector<int> labels) {
  return [&clf, labels = std::move(labels)](const Matd& x, double t) -> double {
    return static_cast<double>(
        frame_logprob(clf, x.template cast<Scalar>().eval(), t, labels).total);
  };
}

struct GuidedStepResult {
  Matd x;
  StepDiag diag;
};

// One guided reverse step: score is replaced by score + gamma * g with the
// norm-based scale gamma = alpha * ||score||_2 / ||g||_2 (Frobenius norms over
// the whole matrix by default, per-frame norms behind the config flag). When
// gamma is zero the addition is skipped entirely, which makes the alpha = 0
// path bit-identical to the unguided sampler.
inline GuidedStepResult guided_step(const Matd& x, double t, double dt, const ScoreFn& score_fn,
                                    const GuidanceFn* guidance_fn, const LogProbFn* logprob_fn,
                                    const Matd& mu, const NoiseSchedule<double>& sched,
                                    const GuidanceConfig& gcfg, int step_index) {
  GuidedStepResult res;
  res.diag.step = step_index;
  res.diag.t = t;

  Matd score = score_fn(x, t);
  res.diag.score_norm = score.norm();
  if (logprob_fn) res.diag.total_logprob = (*logprob_fn)(x, t);

  if (guidance_fn && gcfg.alpha > 0) {
    const Matd g = (*guidance_fn)(x, t);
    res.diag.guidance_norm = g.norm();
    if (gcfg.per_frame_gamma) {
      Matd applied = Matd::Zero(g.rows(), g.cols());
      double gamma_sum = 0.0;
      for (Eigen::Index i = 0; i < g.rows(); ++i) {
        const double gn = g.row(i).norm();
        if (gn < kGammaGuard) {
          ++res.diag.n_guarded_rows;
          continue;
        }
        const double gamma_i = gcfg.alpha * score.row(i).norm() / gn;
        applied.row(i) = gamma_i * g.row(i);
        gamma_sum += gamma_i;
      }
      res.diag.gamma = gamma_sum / static_cast<double>(g.rows());
      res.diag.applied_norm = applied.norm();
      score += applied;
    } else {
      const double gn = res.diag.guidance_norm;
      const double gamma = gn < kGammaGuard ? 0.0 : gcfg.alpha * res.diag.score_norm / gn;
      res.diag.gamma = gamma;
      if (gamma != 0.0) {
        const Matd applied = gamma * g;
        res.diag.applied_norm = applied.norm();
        score += applied;
      } else if (gn < kGammaGuard) {
        res.diag.n_guarded_rows = static_cast<int>(g.rows());
      }
    }
  }

  res.x = gcfg.kind == SamplerKind::exp_ode ? exp_ode_step(x, t, dt, score, mu, sched)
                                            : reverse_ode_step(x, t, dt, score, mu, sched);
  if (!res.x.allFinite())
    throw NumericError("guided_step: non-finite state at step " + std::to_string(step_index));
  return res;
}

// Integrates from t = 1 down to t_end on a uniform grid. Guidance (if any) is
// applied at every step. The SDE kind consumes one noise matrix per step from
// rng and records it in the trajectory.
inline std::pair<Matd, Trajectory> run_reverse(const Matd& x1, const Matd& mu,
                                               const NoiseSchedule<double>& sched,
                                               const GuidanceConfig& gcfg,
                                               const ScoreFn& score_fn,
                                               const GuidanceFn* guidance_fn,
                                               const LogProbFn* logprob_fn, Rng* rng,
                                               bool record_states = false) {
  gcfg.validate();
  require_same_shape(x1, mu, "run_reverse(x1, mu)");
  const double dt = (1.0 - gcfg.t_end) / gcfg.n_steps;

  Trajectory traj;
  traj.times.push_back(1.0);
  if (record_states) traj.states.push_back(x1);

  Matd x = x1;
  for (int k = 0; k < gcfg.n_steps; ++k) {
    const double t = 1.0 - k * dt;
    if (gcfg.kind == SamplerKind::euler_sde) {
      if (!rng) throw ConfigError("euler_sde sampling needs an RNG");
      StepDiag diag;
      diag.step = k;
      diag.t = t;
      const Matd score = score_fn(x, t);
      diag.score_norm = score.norm();
      if (logprob_fn) diag.total_logprob = (*logprob_fn)(x, t);
      const Matd noise = gaussian_matrix<double>(x.rows(), x.cols(), *rng);
      x = reverse_sde_step(x, t, dt, score, mu, sched, noise);
      if (!x.allFinite())
        throw NumericError("run_reverse: non-finite state at step " + std::to_string(k));
      traj.sde_noise.push_back(noise);
      traj.diags.push_back(diag);
    } else {
      GuidedStepResult res = guided_step(x, t, dt, score_fn, guidance_fn, logprob_fn, mu, sched,
                                         gcfg, k);
      x = std::move(res.x);
      traj.diags.push_back(res.diag);
    }
    traj.times.push_back(t - dt);
    if (record_states) traj.states.push_back(x);
  }
  return {std::move(x), std::move(traj)};
}

struct SynthesisResult {
  Matd frames;
  std::vector<int> frame_labels;
  std::vector<int> durations;
  Trajectory trajectory;
};

// Full generation pipeline for one utterance: durations (supplied or from the
// median table) -> length regulation -> prior draw -> reverse integration.
template <typename Scalar, typename ClfScalar>
SynthesisResult synthesize(const std::vector<int>& phone_ids, int speaker,
                           const ScoreNet<Scalar>& net, const PhoneClassifier<ClfScalar>* clf,
                           const PhoneDictionary& dict, const DurationTable* duration_table,
                           const std::vector<int>* durations_override,
                           const NoiseSchedule<double>& sched, const GuidanceConfig& gcfg,
                           Rng& rng, bool record_states = false) {
  SynthesisResult out;
  if (durations_override) {
    if (durations_override->size() != phone_ids.size())
      throw ShapeError("synthesize: durations must match phone sequence length");
    out.durations = *durations_override;
  } else {
    if (!duration_table) throw ConfigError("synthesize: need durations or a duration table");
    out.durations = predict_durations(phone_ids, *duration_table);
  }
  const LengthRegulated reg = length_regulate(phone_ids, out.durations, dict);
  out.frame_labels = reg.frame_labels;

  const ScoreFn score_fn = make_score_fn(net, reg.mu, speaker);
  std::optional<GuidanceFn> guide;
  std::optional<LogProbFn> logprob;
  if (clf) {
    guide = make_guidance_fn(*clf, reg.frame_labels, gcfg.weights);
    logprob = make_logprob_fn(*clf, reg.frame_labels);
  }

  const Matd x1 = sample_prior(reg.mu, sched, rng);
  auto [x_end, traj] = run_reverse(x1, reg.mu, sched, gcfg, score_fn,
                                   guide ? &*guide : nullptr, logprob ? &*logprob : nullptr,
                                   &rng, record_states);
  out.frames = std::move(x_end);
  out.trajectory = std::move(traj);
  return out;
}

struct SynthesisRequest {
  std::vector<int> phone_ids;
  int speaker = 0;
};

// Independent chains run in parallel; chain i draws from the RNG stream
// derived as (root_seed, i), so results do not depend on the job count.
template <typename Scalar, typename ClfScalar>
std::vector<SynthesisResult> synthesize_batch(const std::vector<SynthesisRequest>& requests,
                                              const ScoreNet<Scalar>& net,
                                              const PhoneClassifier<ClfScalar>* clf,
                                              const PhoneDictionary& dict,
                                              const DurationTable& duration_table,
                                              const NoiseSchedule<double>& sched,
                                              const GuidanceConfig& gcfg, std::uint64_t root_seed,
                                              int jobs) {
  std::vector<SynthesisResult> results(requests.size());
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= requests.size()) return;
      try {
        Rng rng = Rng::stream(root_seed, i);
        results[i] = synthesize(requests[i].phone_ids, requests[i].speaker, net, clf, dict,
                                &duration_table, nullptr, sched, gcfg, rng);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  const int n_threads = std::max(1, jobs);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(n_threads));
  for (int k = 0; k < n_threads; ++k) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
  return results;
}

// Trace CSV columns are fixed: step, t, score_norm, guidance_norm, gamma,
// total_logprob. Values carry 17 significant digits.
inline void write_trace_csv(const std::string& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "step,t,score_norm,guidance_norm,gamma,total_logprob\n";
  char buf[512];
  for (const StepDiag& d : traj.diags) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", d.step, d.t,
                  d.score_norm, d.guidance_norm, d.gamma, d.total_logprob);
    out << buf;
  }
}

}  // namespace diffspeech
