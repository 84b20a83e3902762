#pragma once

#include <string>
#include <vector>

#include "diffspeech/data.hpp"
#include "diffspeech/nn.hpp"
#include "diffspeech/schedule.hpp"
#include "diffspeech/score_model.hpp"

namespace diffspeech {

// Frame-level phone classifier P(y | x_t, t). Deliberately has no speaker
// input, so speaker independence holds structurally. Trained on healthy
// speakers only; conditioning on t keeps its gradients meaningful along the
// whole reverse trajectory.
template <typename Scalar>
struct PhoneClassifier {
  Mlp<Scalar> mlp;
  std::vector<std::string> phones;
  int feat_dim = 0;
  NoiseSchedule<double> sched{0.05, 20.0};

  int n_phones() const { return static_cast<int>(phones.size()); }

  static PhoneClassifier init(int feat_dim, const std::vector<std::string>& phones,
                              const std::vector<int>& hidden, const NoiseSchedule<double>& sched,
                              Rng& rng) {
    PhoneClassifier clf;
    clf.feat_dim = feat_dim;
    clf.phones = phones;
    clf.sched = sched;
    std::vector<int> dims;
    dims.push_back(feat_dim + kTimeEmbedDim);
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(static_cast<int>(phones.size()));
    clf.mlp = Mlp<Scalar>::init(dims, rng);
    return clf;
  }

  Mat<Scalar> assemble_input(const Mat<Scalar>& x_rows, const Vec<double>& t_per_item) const {
    const Eigen::Index B = x_rows.rows();
    Mat<Scalar> in(mlp.in_dim(), B);
    for (Eigen::Index c = 0; c < B; ++c) {
      in.block(0, c, feat_dim, 1) = x_rows.row(c).transpose();
      in.block(feat_dim, c, kTimeEmbedDim, 1) = time_embedding<Scalar>(sched, t_per_item(c));
    }
    return in;
  }

  // Logits, one column per frame.
  Mat<Scalar> logits(const Mat<Scalar>& x_rows, double t) const {
    check_unit_time(t);
    if (x_rows.cols() != feat_dim) throw ShapeError("classifier: feature dim mismatch");
    const Vec<double> ts = Vec<double>::Constant(x_rows.rows(), t);
    return mlp.forward(assemble_input(x_rows, ts));
  }
};

// Per-phone positive guidance multipliers. Defaults to 1.0 everywhere; build
// with extra weight on impaired phones for the guided sampler.
struct FrameWeights {
  std::vector<double> by_phone;

  static FrameWeights uniform(int n_phones, double w = 1.0) {
    FrameWeights fw;
    fw.by_phone.assign(static_cast<size_t>(n_phones), w);
    fw.validate();
    return fw;
  }

  static FrameWeights with_impaired(const PhoneInventory& inv, double impaired_weight) {
    FrameWeights fw = uniform(inv.size());
    for (int q : inv.impaired) fw.by_phone[static_cast<size_t>(q)] = impaired_weight;
    fw.validate();
    return fw;
  }

  double at(int phone_id) const {
    if (phone_id < 0 || phone_id >= static_cast<int>(by_phone.size()))
      throw LookupError("frame weight for phone id " + std::to_string(phone_id) + " missing");
    return by_phone[static_cast<size_t>(phone_id)];
  }

  void validate() const {
    for (double w : by_phone)
      if (!(w > 0)) throw ConfigError("frame weights must be positive");
  }
};

template <typename Scalar>
struct FrameLogProb {
  Vec<Scalar> per_frame;
  Scalar total;  // exactly the sum of per_frame
};

// log P(y^(i) | x_t) per frame plus the total. The total factorizes over
// frames because the classifier is frame-local.
template <typename Scalar>
FrameLogProb<Scalar> frame_logprob(const PhoneClassifier<Scalar>& clf, const Mat<Scalar>& x_t,
                                   double t, const std::vector<int>& frame_labels) {
  if (static_cast<Eigen::Index>(frame_labels.size()) != x_t.rows())
    throw ShapeError("frame_logprob: one label per frame required");
  for (int y : frame_labels)
    if (y < 0 || y >= clf.n_phones())
      throw LookupError("frame_logprob: label id " + std::to_string(y) + " out of range");
  const Mat<Scalar> lp = log_softmax_columns(clf.logits(x_t, t));
  FrameLogProb<Scalar> out;
  out.per_frame.resize(x_t.rows());
  out.total = Scalar(0);
  for (Eigen::Index i = 0; i < x_t.rows(); ++i) {
    out.per_frame(i) = lp(frame_labels[static_cast<size_t>(i)], i);
    out.total += out.per_frame(i);
  }
  return out;
}

// Row i = weights[label_i] * grad_{x row i} log P(y^(i) | x_t), by explicit
// backprop through the classifier. Rows are independent.
template <typename Scalar>
Mat<Scalar> guidance_gradient(const PhoneClassifier<Scalar>& clf, const Mat<Scalar>& x_t, double t,
                              const std::vector<int>& frame_labels, const FrameWeights& weights) {
  if (static_cast<Eigen::Index>(frame_labels.size()) != x_t.rows())
    throw ShapeError("guidance_gradient: one label per frame required");
  const Vec<double> ts = Vec<double>::Constant(x_t.rows(), t);
  MlpCache<Scalar> cache;
  const Mat<Scalar> logits = clf.mlp.forward(clf.assemble_input(x_t, ts), &cache);
  const Mat<Scalar> p = softmax_columns(logits);

  // d log p_y / d logits = onehot(y) - p
  Mat<Scalar> d_logits = -p;
  for (Eigen::Index i = 0; i < x_t.rows(); ++i)
    d_logits(frame_labels[static_cast<size_t>(i)], i) += Scalar(1);

  Mat<Scalar> d_input;
  clf.mlp.backward(cache, d_logits, &d_input);

  Mat<Scalar> grad(x_t.rows(), clf.feat_dim);
  for (Eigen::Index i = 0; i < x_t.rows(); ++i) {
    grad.row(i) = static_cast<Scalar>(weights.at(frame_labels[static_cast<size_t>(i)])) *
                  d_input.block(0, i, clf.feat_dim, 1).transpose();
    if (!grad.row(i).allFinite())
      throw NumericError("guidance_gradient: non-finite gradient at frame " + std::to_string(i));
  }
  return grad;
}

template <typename Scalar>
struct CeResult {
  Scalar loss;
  MlpGrads<Scalar> grads;
};

// Mean cross-entropy of the intended labels plus parameter gradients; the
// training step below and the finite-difference checks share this path.
template <typename Scalar>
CeResult<Scalar> classifier_ce_loss(const PhoneClassifier<Scalar>& clf, const Mat<Scalar>& x_t,
                                    const Vec<double>& ts, const std::vector<int>& labels) {
  const Eigen::Index B = x_t.rows();
  MlpCache<Scalar> cache;
  const Mat<Scalar> logits = clf.mlp.forward(clf.assemble_input(x_t, ts), &cache);
  const Mat<Scalar> lp = log_softmax_columns(logits);
  Scalar loss = Scalar(0);
  for (Eigen::Index i = 0; i < B; ++i) loss -= lp(labels[static_cast<size_t>(i)], i);
  loss /= static_cast<Scalar>(B);

  Mat<Scalar> d_logits = softmax_columns(logits);
  for (Eigen::Index i = 0; i < B; ++i) d_logits(labels[static_cast<size_t>(i)], i) -= Scalar(1);
  d_logits /= static_cast<Scalar>(B);
  return {loss, clf.mlp.backward(cache, d_logits)};
}

struct ClassifierTrainConfig {
  int steps = 2500;
  int batch = 128;
  double lr = 0.05;
  double momentum = 0.9;
  std::vector<int> hidden = {48, 48};
  bool noise_conditional = true;  // false trains on clean frames only (t = 0)
  std::uint64_t seed = 1;
};

// Cross-entropy training on noised frames x_t drawn via the forward process
// at random t, with mu taken as the per-phone dictionary row. Refuses corpora
// containing target-speaker data.
template <typename Scalar>
PhoneClassifier<Scalar> train_classifier(const Corpus& corpus_healthy,
                                         const PhoneDictionary& dict,
                                         const NoiseSchedule<double>& sched,
                                         const ClassifierTrainConfig& cfg) {
  if (corpus_healthy.utterances.empty()) throw ConfigError("train_classifier: corpus is empty");
  if (corpus_healthy.has_kind(SpeakerKind::target))
    throw ConfigError("train_classifier: corpus contains target-speaker data; the classifier "
                      "must be trained on healthy speakers only");
  const FrameDataset<Scalar> ds = build_frame_dataset<Scalar>(corpus_healthy, dict);

  Rng rng(cfg.seed);
  PhoneClassifier<Scalar> clf = PhoneClassifier<Scalar>::init(
      corpus_healthy.feat_dim, corpus_healthy.inventory.phones, cfg.hidden, sched, rng);
  MomentumSgd<Scalar> opt(static_cast<Scalar>(cfg.lr), static_cast<Scalar>(cfg.momentum), clf.mlp);

  const Eigen::Index B = cfg.batch;
  for (int step = 0; step < cfg.steps; ++step) {
    Mat<Scalar> x_t(B, clf.feat_dim);
    Vec<double> ts(B);
    std::vector<int> labels(static_cast<size_t>(B));
    for (Eigen::Index i = 0; i < B; ++i) {
      const auto idx = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(ds.size())));
      const double t = cfg.noise_conditional ? rng.uniform() : 0.0;
      const auto m = moments_at(sched, t);
      ts(i) = t;
      labels[static_cast<size_t>(i)] = ds.labels[static_cast<size_t>(idx)];
      for (Eigen::Index j = 0; j < clf.feat_dim; ++j) {
        x_t(i, j) = static_cast<Scalar>(m.rho_coeff_mu) * ds.mu(idx, j) +
                    static_cast<Scalar>(m.rho_coeff_x0) * ds.x0(idx, j) +
                    static_cast<Scalar>(m.sigma() * rng.gaussian());
      }
    }
    const CeResult<Scalar> res = classifier_ce_loss(clf, x_t, ts, labels);
    if (!std::isfinite(static_cast<double>(res.loss)))
      throw NumericError("train_classifier: non-finite loss at step " + std::to_string(step));
    opt.step(clf.mlp, res.grads);
  }
  return clf;
}

// Held-out accuracy at a fixed t, used by training regression tests.
template <typename Scalar>
double classifier_accuracy(const PhoneClassifier<Scalar>& clf, const Mat<Scalar>& frames,
                           const std::vector<int>& labels, double t) {
  const Mat<Scalar> lg = clf.logits(frames, t);
  long correct = 0;
  for (Eigen::Index i = 0; i < frames.rows(); ++i) {
    Eigen::Index argmax;
    lg.col(i).maxCoeff(&argmax);
    if (static_cast<int>(argmax) == labels[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(frames.rows());
}

template <typename Scalar>
json classifier_checkpoint_to_json(const PhoneClassifier<Scalar>& clf,
                                   const ClassifierTrainConfig& cfg) {
  json j;
  j["format"] = kCheckpointFormat;
  j["model"] = "classifier";
  j["dtype"] = std::is_same_v<Scalar, float> ? "f32" : "f64";
  j["feat_dim"] = clf.feat_dim;
  j["phones"] = clf.phones;
  j["beta0"] = clf.sched.beta0;
  j["beta1"] = clf.sched.beta1;
  j["layers"] = mlp_to_json(clf.mlp);
  j["train"] = {{"steps", cfg.steps},       {"batch", cfg.batch},
                {"lr", cfg.lr},             {"momentum", cfg.momentum},
                {"hidden", cfg.hidden},     {"noise_conditional", cfg.noise_conditional},
                {"seed", cfg.seed}};
  return j;
}

template <typename Scalar>
PhoneClassifier<Scalar> classifier_checkpoint_from_json(const json& j) {
  check_checkpoint_header(j, "classifier");
  PhoneClassifier<Scalar> clf;
  clf.feat_dim = j.at("feat_dim").get<int>();
  clf.phones = j.at("phones").get<std::vector<std::string>>();
  clf.sched = NoiseSchedule<double>(j.at("beta0").get<double>(), j.at("beta1").get<double>());
  clf.mlp = mlp_from_json<Scalar>(j.at("layers"));
  if (clf.mlp.in_dim() != clf.feat_dim + kTimeEmbedDim ||
      clf.mlp.out_dim() != clf.n_phones())
    throw IoError("checkpoint: layer shapes disagree with feat_dim/phones");
  return clf;
}

}  // namespace diffspeech
