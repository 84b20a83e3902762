#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "diffspeech/data.hpp"
#include "diffspeech/nn.hpp"
#include "diffspeech/schedule.hpp"

namespace diffspeech {

inline constexpr int kSpeakerEmbedDim = 16;  // one-hot speaker embedding width
inline constexpr int kTimeEmbedDim = 4;      // (t, sin 2*pi*t, cos 2*pi*t, sigma_t)

template <typename Scalar>
Vec<Scalar> time_embedding(const NoiseSchedule<double>& sched, double t) {
  Vec<Scalar> e(kTimeEmbedDim);
  e(0) = static_cast<Scalar>(t);
  e(1) = static_cast<Scalar>(std::sin(2.0 * M_PI * t));
  e(2) = static_cast<Scalar>(std::cos(2.0 * M_PI * t));
  e(3) = static_cast<Scalar>(moments_at(sched, t).sigma());
  return e;
}

// Frame-local score estimator S(x_t, t, mu, s): the same network is applied
// independently to every frame row, so the score of frame i depends only on
// row i of x_t and mu.
template <typename Scalar>
struct ScoreNet {
  Mlp<Scalar> mlp;
  int feat_dim = 0;
  int n_speakers = 0;
  NoiseSchedule<double> sched{0.05, 20.0};

  static ScoreNet init(int feat_dim, int n_speakers, const std::vector<int>& hidden,
                       const NoiseSchedule<double>& sched, Rng& rng) {
    if (n_speakers < 1 || n_speakers > kSpeakerEmbedDim)
      throw ConfigError("score net supports 1.." + std::to_string(kSpeakerEmbedDim) +
                        " speakers, got " + std::to_string(n_speakers));
    ScoreNet net;
    net.feat_dim = feat_dim;
    net.n_speakers = n_speakers;
    net.sched = sched;
    std::vector<int> dims;
    dims.push_back(2 * feat_dim + kTimeEmbedDim + kSpeakerEmbedDim);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(feat_dim);
    net.mlp = Mlp<Scalar>::init(dims, rng);
    return net;
  }

  static ScoreNet zeros(int feat_dim, int n_speakers, const std::vector<int>& hidden,
                        const NoiseSchedule<double>& sched) {
    ScoreNet net;
    net.feat_dim = feat_dim;
    net.n_speakers = n_speakers;
    net.sched = sched;
    std::vector<int> dims;
    dims.push_back(2 * feat_dim + kTimeEmbedDim + kSpeakerEmbedDim);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(feat_dim);
    net.mlp = Mlp<Scalar>::zeros(dims);
    return net;
  }

  // Input column per frame: [x row | mu row | time embedding | speaker one-hot].
  Mat<Scalar> assemble_input(const Mat<Scalar>& x_rows, const Mat<Scalar>& mu_rows,
                             const Vec<double>& t_per_item,
                             const std::vector<int>& speakers) const {
    const Eigen::Index B = x_rows.rows();
    Mat<Scalar> in = Mat<Scalar>::Zero(mlp.in_dim(), B);
    for (Eigen::Index c = 0; c < B; ++c) {
      in.block(0, c, feat_dim, 1) = x_rows.row(c).transpose();
      in.block(feat_dim, c, feat_dim, 1) = mu_rows.row(c).transpose();
      in.block(2 * feat_dim, c, kTimeEmbedDim, 1) =
          time_embedding<Scalar>(sched, t_per_item(c));
      const int s = speakers[static_cast<size_t>(c)];
      if (s < 0 || s >= kSpeakerEmbedDim)
        throw DomainError("speaker id " + std::to_string(s) + " outside one-hot range");
      in(2 * feat_dim + kTimeEmbedDim + s, c) = Scalar(1);
    }
    return in;
  }
};

// Predicted score matrix for an utterance: x_t and mu are L x D, one shared t
// and speaker. Rows are computed independently.
template <typename Scalar>
Mat<Scalar> score_forward(const ScoreNet<Scalar>& net, const Mat<Scalar>& x_t, double t,
                          const Mat<Scalar>& mu, int speaker) {
  check_unit_time(t);
  require_same_shape(x_t, mu, "score_forward(x_t, mu)");
  if (x_t.cols() != net.feat_dim) throw ShapeError("score_forward: feature dim mismatch");
  const Vec<double> ts = Vec<double>::Constant(x_t.rows(), t);
  const std::vector<int> speakers(static_cast<size_t>(x_t.rows()), speaker);
  return net.mlp.forward(net.assemble_input(x_t, mu, ts, speakers)).transpose();
}

// One denoising-score-matching batch: per-item clean frame, conditioning mu
// row, speaker id, sampled t and sampled standard normal eps.
template <typename Scalar>
struct TrainBatch {
  Mat<Scalar> x0;   // B x D
  Mat<Scalar> mu;   // B x D
  std::vector<int> speakers;
  Vec<double> t;    // B
  Mat<Scalar> eps;  // B x D

  Eigen::Index size() const { return x0.rows(); }
};

// Frame-level training set: every frame of every utterance becomes one item
// with mu = dictionary row of its phone.
template <typename Scalar>
struct FrameDataset {
  Mat<Scalar> x0;  // N x D
  Mat<Scalar> mu;  // N x D
  std::vector<int> speakers;
  std::vector<int> labels;

  Eigen::Index size() const { return x0.rows(); }
};

template <typename Scalar>
FrameDataset<Scalar> build_frame_dataset(const Corpus& corpus, const PhoneDictionary& dict) {
  long total = 0;
  for (const auto& u : corpus.utterances) total += u.n_frames();
  FrameDataset<Scalar> ds;
  ds.x0.resize(total, corpus.feat_dim);
  ds.mu.resize(total, corpus.feat_dim);
  ds.speakers.reserve(static_cast<size_t>(total));
  ds.labels.reserve(static_cast<size_t>(total));
  long row = 0;
  for (const auto& u : corpus.utterances) {
    const std::vector<int> labels = u.frame_labels();
    for (int i = 0; i < u.n_frames(); ++i, ++row) {
      ds.x0.row(row) = u.frames.row(i).template cast<Scalar>();
      ds.mu.row(row) = dict.row(labels[static_cast<size_t>(i)]).template cast<Scalar>();
      ds.speakers.push_back(u.speaker_id);
      ds.labels.push_back(labels[static_cast<size_t>(i)]);
    }
  }
  return ds;
}

// Training t is drawn from U(t_min, 1); the sigma floor below guards the
// sigma^{-1} singularity at t = 0 by resampling.
inline constexpr double kSigmaFloor = 1e-8;

template <typename Scalar>
TrainBatch<Scalar> sample_train_batch(const FrameDataset<Scalar>& ds,
                                      const NoiseSchedule<double>& sched, Eigen::Index batch,
                                      double t_min, Rng& rng) {
  TrainBatch<Scalar> b;
  b.x0.resize(batch, ds.x0.cols());
  b.mu.resize(batch, ds.x0.cols());
  b.speakers.resize(static_cast<size_t>(batch));
  b.t.resize(batch);
  b.eps.resize(batch, ds.x0.cols());
  for (Eigen::Index i = 0; i < batch; ++i) {
    const auto idx = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(ds.size())));
    b.x0.row(i) = ds.x0.row(idx);
    b.mu.row(i) = ds.mu.row(idx);
    b.speakers[static_cast<size_t>(i)] = ds.speakers[static_cast<size_t>(idx)];
    double t = rng.uniform(t_min, 1.0);
    while (moments_at(sched, t).sigma() < kSigmaFloor) t = rng.uniform(t_min, 1.0);
    b.t(i) = t;
    for (Eigen::Index j = 0; j < ds.x0.cols(); ++j) b.eps(i, j) = static_cast<Scalar>(rng.gaussian());
  }
  return b;
}

// Weighted L2 loss evaluated on given predictions:
//   mean_i sigma_i^2 * || S_i + sigma_i^{-1} eps_i ||_2^2.
// Exposed separately so an exact-target oracle can be injected in place of a
// network.
template <typename Scalar>
Scalar dsm_loss_value(const Mat<Scalar>& predictions, const TrainBatch<Scalar>& batch,
                      const NoiseSchedule<double>& sched) {
  require_same_shape(predictions, batch.eps, "dsm_loss_value(predictions, eps)");
  Scalar loss = Scalar(0);
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const auto m = moments_at(sched, batch.t(i));
    const Scalar sigma = static_cast<Scalar>(m.sigma());
    const auto resid = (predictions.row(i) + batch.eps.row(i) / sigma).eval();
    loss += static_cast<Scalar>(m.sigma2) * resid.squaredNorm();
  }
  return loss / static_cast<Scalar>(batch.size());
}

template <typename Scalar>
struct DsmResult {
  Scalar loss;
  MlpGrads<Scalar> grads;
};

// Loss and parameter gradients by explicit backprop. x_t is built in-place by
// the reparameterization x_t = rho(x0, t) + sigma_t * eps.
template <typename Scalar>
DsmResult<Scalar> dsm_loss(const ScoreNet<Scalar>& net, const TrainBatch<Scalar>& batch) {
  const Eigen::Index B = batch.size();
  Mat<Scalar> x_t(B, net.feat_dim);
  Vec<Scalar> sigma(B);
  Vec<Scalar> sigma2(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto m = moments_at(net.sched, batch.t(i));
    sigma(i) = static_cast<Scalar>(m.sigma());
    sigma2(i) = static_cast<Scalar>(m.sigma2);
    x_t.row(i) = static_cast<Scalar>(m.rho_coeff_mu) * batch.mu.row(i) +
                 static_cast<Scalar>(m.rho_coeff_x0) * batch.x0.row(i) + sigma(i) * batch.eps.row(i);
  }
  const Mat<Scalar> in = net.assemble_input(x_t, batch.mu, batch.t, batch.speakers);
  MlpCache<Scalar> cache;
  const Mat<Scalar> out = net.mlp.forward(in, &cache);  // D x B

  Scalar loss = Scalar(0);
  Mat<Scalar> d_out(net.feat_dim, B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const Vec<Scalar> resid = out.col(i) + batch.eps.row(i).transpose() / sigma(i);
    loss += sigma2(i) * resid.squaredNorm();
    d_out.col(i) = Scalar(2) * sigma2(i) * resid / static_cast<Scalar>(B);
  }
  loss /= static_cast<Scalar>(B);

  DsmResult<Scalar> result;
  result.loss = loss;
  result.grads = net.mlp.backward(cache, d_out);
  return result;
}

struct TrainConfig {
  int steps = 4000;
  int batch = 128;
  double lr = 0.02;
  double momentum = 0.9;
  double t_min = 1e-3;
  std::vector<int> hidden = {64, 64};
  std::uint64_t seed = 1;
};

template <typename Scalar>
struct TrainedScore {
  ScoreNet<Scalar> net;
  std::vector<double> loss_curve;
};

// Trains on healthy + target speakers. Deterministic given the seed; aborts
// with diagnostics if the loss diverges.
template <typename Scalar>
TrainedScore<Scalar> train_score(const Corpus& corpus, const PhoneDictionary& dict,
                                 const NoiseSchedule<double>& sched, const TrainConfig& cfg) {
  if (corpus.utterances.empty()) throw ConfigError("train_score: corpus is empty");
  const FrameDataset<Scalar> ds = build_frame_dataset<Scalar>(corpus, dict);
  int max_speaker = 0;
  for (int s : ds.speakers) max_speaker = std::max(max_speaker, s);

  Rng rng(cfg.seed);
  TrainedScore<Scalar> trained{
      ScoreNet<Scalar>::init(corpus.feat_dim, max_speaker + 1, cfg.hidden, sched, rng), {}};
  MomentumSgd<Scalar> opt(static_cast<Scalar>(cfg.lr), static_cast<Scalar>(cfg.momentum),
                          trained.net.mlp);
  trained.loss_curve.reserve(static_cast<size_t>(cfg.steps));
  for (int step = 0; step < cfg.steps; ++step) {
    const TrainBatch<Scalar> batch =
        sample_train_batch(ds, sched, cfg.batch, cfg.t_min, rng);
    const DsmResult<Scalar> res = dsm_loss(trained.net, batch);
    if (!std::isfinite(static_cast<double>(res.loss)) || static_cast<double>(res.loss) > 1e6) {
      throw NumericError("train_score diverged at step " + std::to_string(step) +
                         " with loss " + std::to_string(static_cast<double>(res.loss)));
    }
    opt.step(trained.net.mlp, res.grads);
    trained.loss_curve.push_back(static_cast<double>(res.loss));
  }
  return trained;
}

inline std::vector<double> smooth_curve(const std::vector<double>& curve, size_t window) {
  std::vector<double> out;
  if (curve.size() < window || window == 0) return out;
  double acc = 0.0;
  for (size_t i = 0; i < curve.size(); ++i) {
    acc += curve[i];
    if (i + 1 >= window) {
      out.push_back(acc / static_cast<double>(window));
      acc -= curve[i + 1 - window];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints (format shared with the classifier module).
// ---------------------------------------------------------------------------

template <typename Scalar>
json score_checkpoint_to_json(const ScoreNet<Scalar>& net, const TrainConfig& cfg) {
  json j;
  j["format"] = kCheckpointFormat;
  j["model"] = "score";
  j["dtype"] = std::is_same_v<Scalar, float> ? "f32" : "f64";
  j["feat_dim"] = net.feat_dim;
  j["n_speakers"] = net.n_speakers;
  j["beta0"] = net.sched.beta0;
  j["beta1"] = net.sched.beta1;
  j["layers"] = mlp_to_json(net.mlp);
  j["train"] = {{"steps", cfg.steps}, {"batch", cfg.batch},     {"lr", cfg.lr},
                {"momentum", cfg.momentum}, {"t_min", cfg.t_min}, {"hidden", cfg.hidden},
                {"seed", cfg.seed}};
  return j;
}

inline void check_checkpoint_header(const json& j, const std::string& expected_model) {
  if (!j.is_object() || !j.contains("format") || j.at("format") != kCheckpointFormat)
    throw IoError("checkpoint: missing or unsupported format tag");
  if (j.at("model") != expected_model)
    throw IoError("checkpoint: expected model '" + expected_model + "', found '" +
                  j.at("model").get<std::string>() + "'");
}

template <typename Scalar>
ScoreNet<Scalar> score_checkpoint_from_json(const json& j) {
  check_checkpoint_header(j, "score");
  ScoreNet<Scalar> net;
  net.feat_dim = j.at("feat_dim").get<int>();
  net.n_speakers = j.at("n_speakers").get<int>();
  net.sched = NoiseSchedule<double>(j.at("beta0").get<double>(), j.at("beta1").get<double>());
  net.mlp = mlp_from_json<Scalar>(j.at("layers"));
  if (net.mlp.in_dim() != 2 * net.feat_dim + kTimeEmbedDim + kSpeakerEmbedDim ||
      net.mlp.out_dim() != net.feat_dim)
    throw IoError("checkpoint: layer shapes disagree with feat_dim");
  return net;
}

inline std::string checkpoint_dtype(const json& j) {
  if (!j.is_object() || !j.contains("dtype")) throw IoError("checkpoint: missing dtype");
  const std::string d = j.at("dtype").get<std::string>();
  if (d != "f32" && d != "f64") throw IoError("checkpoint: unknown dtype '" + d + "'");
  return d;
}

}  // namespace diffspeech
