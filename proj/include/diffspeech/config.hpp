#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffspeech/classifier.hpp"
#include "diffspeech/data.hpp"
#include "diffspeech/sampler.hpp"
#include "diffspeech/score_model.hpp"

namespace diffspeech {

// Full run configuration. Every random operation in a run is keyed off the
// single root seed; unknown config keys are rejected.
struct RunConfig {
  std::uint64_t seed = 1234;
  int jobs = 1;

  double beta0 = 0.05;
  double beta1 = 20.0;

  CorpusConfig corpus;

  // score-model training
  TrainConfig score_train;
  // guidance classifier training
  ClassifierTrainConfig clf_train;
  // held-out oracle classifier (clean frames, separate split and seed stream)
  ClassifierTrainConfig oracle_train;
  std::string precision = "f32";  // network parameter dtype: f32 | f64

  GuidanceConfig guidance;
  double impaired_weight = 5.0;

  int eval_utts = 30;
  int oracle_speakers = 2;
  int oracle_utts_per_speaker = 48;

  NoiseSchedule<double> schedule() const { return {beta0, beta1}; }

  void validate() const;
};

RunConfig default_config();

// Re-derives per-stage training seeds from cfg.seed; call after overriding it.
void reseed(RunConfig& cfg);

// Strict parse: unknown keys anywhere in the tree are a hard error.
RunConfig config_from_json(const json& j);
json config_to_json(const RunConfig& cfg);

RunConfig load_config_file(const std::string& path);

}  // namespace diffspeech
