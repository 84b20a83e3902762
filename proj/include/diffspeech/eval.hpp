#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "diffspeech/classifier.hpp"
#include "diffspeech/data.hpp"

namespace diffspeech {

// The four comparison conditions of the objective harness.
inline constexpr const char* kCondRecordingTarget = "recording_target";
inline constexpr const char* kCondRecordingSource = "recording_source";
inline constexpr const char* kCondUnguided = "unguided";
inline constexpr const char* kCondGuided = "guided";

// Oracle frame labels: argmax of a clean-frame classifier (evaluated at t = 0).
template <typename Scalar>
std::vector<int> oracle_classify(const Matd& frames, const PhoneClassifier<Scalar>& oracle) {
  if (frames.cols() != oracle.feat_dim)
    throw ShapeError("oracle_classify: feature dim mismatch");
  const Mat<Scalar> logits = oracle.logits(frames.template cast<Scalar>().eval(), 0.0);
  std::vector<int> labels(static_cast<size_t>(frames.rows()));
  for (Eigen::Index i = 0; i < frames.rows(); ++i) {
    Eigen::Index argmax;
    logits.col(i).maxCoeff(&argmax);
    labels[static_cast<size_t>(i)] = static_cast<int>(argmax);
  }
  return labels;
}

struct EvalItem {
  Matd frames;
  std::vector<int> intended;  // intended phone id per frame
};

inline EvalItem eval_item_from_utterance(const Utterance& utt) {
  return {utt.frames, utt.frame_labels()};
}

struct PhoneStat {
  long n_frames = 0;
  long n_errors = 0;
  double sum_dist_canonical = 0.0;
  double sum_dist_target = 0.0;

  double rate() const { return n_frames == 0 ? 0.0 : static_cast<double>(n_errors) / n_frames; }
  double mean_dist_canonical() const {
    return n_frames == 0 ? 0.0 : sum_dist_canonical / static_cast<double>(n_frames);
  }
  double mean_dist_target() const {
    return n_frames == 0 ? 0.0 : sum_dist_target / static_cast<double>(n_frames);
  }

  void add(const PhoneStat& o) {
    n_frames += o.n_frames;
    n_errors += o.n_errors;
    sum_dist_canonical += o.sum_dist_canonical;
    sum_dist_target += o.sum_dist_target;
  }
};

struct ConditionReport {
  std::string condition;
  std::vector<PhoneStat> per_phone;

  // The total is the exact frame-weighted aggregate of the per-phone rows.
  PhoneStat total() const {
    PhoneStat t;
    for (const auto& p : per_phone) t.add(p);
    return t;
  }

  double rate_on(const std::vector<int>& phone_ids) const {
    PhoneStat t;
    for (int q : phone_ids) t.add(per_phone[static_cast<size_t>(q)]);
    return t.rate();
  }
};

struct EvalReport {
  std::vector<std::string> phones;
  std::vector<ConditionReport> conditions;

  const ConditionReport& find(const std::string& condition) const {
    for (const auto& c : conditions)
      if (c.condition == condition) return c;
    throw LookupError("no condition '" + condition + "' in report");
  }
};

// Frame-error rate of one condition: the fraction of frames whose
// oracle-classified phone differs from the intended phone, with per-phone
// breakdown and mean distances to the canonical and target phone means.
template <typename Scalar>
ConditionReport frame_error_rate(const std::vector<EvalItem>& items,
                                 const PhoneClassifier<Scalar>& oracle,
                                 const Matd& canonical_means, const Matd& target_means,
                                 const std::string& condition) {
  ConditionReport report;
  report.condition = condition;
  report.per_phone.resize(static_cast<size_t>(oracle.n_phones()));
  for (const EvalItem& item : items) {
    if (static_cast<Eigen::Index>(item.intended.size()) != item.frames.rows())
      throw ShapeError("frame_error_rate: one intended label per frame required");
    const std::vector<int> predicted = oracle_classify(item.frames, oracle);
    for (Eigen::Index i = 0; i < item.frames.rows(); ++i) {
      const int q = item.intended[static_cast<size_t>(i)];
      PhoneStat& stat = report.per_phone[static_cast<size_t>(q)];
      ++stat.n_frames;
      if (predicted[static_cast<size_t>(i)] != q) ++stat.n_errors;
      stat.sum_dist_canonical += (item.frames.row(i) - canonical_means.row(q)).norm();
      stat.sum_dist_target += (item.frames.row(i) - target_means.row(q)).norm();
    }
  }
  return report;
}

// CSV schema: condition, phone, n_frames, n_errors, rate, mean_dist_canonical,
// mean_dist_target. One row per (condition, phone) plus an ALL total row per
// condition; floats carry 17 significant digits.
inline void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "condition,phone,n_frames,n_errors,rate,mean_dist_canonical,mean_dist_target\n";
  char buf[512];
  auto emit = [&](const std::string& condition, const std::string& phone, const PhoneStat& s) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%ld,%ld,%.17g,%.17g,%.17g\n", condition.c_str(),
                  phone.c_str(), s.n_frames, s.n_errors, s.rate(), s.mean_dist_canonical(),
                  s.mean_dist_target());
    out << buf;
  };
  for (const ConditionReport& c : report.conditions) {
    for (size_t q = 0; q < report.phones.size(); ++q) emit(c.condition, report.phones[q], c.per_phone[q]);
    emit(c.condition, "ALL", c.total());
  }
}

}  // namespace diffspeech
