#pragma once

#include <string>
#include <vector>

#include "diffspeech/config.hpp"
#include "diffspeech/eval.hpp"

namespace diffspeech {

// Everything a run directory contains after gen-corpus.
struct CorpusArtifacts {
  Corpus train;        // healthy + target speakers
  Corpus oracle;       // held-out healthy split for the evaluation oracle
  std::vector<Utterance> eval_target;  // recording_target
  std::vector<Utterance> eval_source;  // recording_source, same phone content
  PhoneDictionary dict;
  PhoneDictionary dict_healthy;
  DurationTable durations;
};

// Deterministic in (cfg, cfg.seed); stage seeds are streams of the root seed.
CorpusArtifacts generate_corpus_artifacts(const RunConfig& cfg);

// CLI-facing commands; they operate on the documented file layout.
void gen_corpus_cmd(const RunConfig& cfg, const std::string& out_dir);
void train_score_cmd(const RunConfig& cfg, const std::string& corpus_dir,
                     const std::string& out_ckpt);
void train_classifier_cmd(const RunConfig& cfg, const std::string& corpus_dir,
                          const std::string& out_ckpt, bool healthy_only, bool oracle_split,
                          bool clean_only);

struct SynthCmdOptions {
  std::string score_ckpt;
  std::string classifier_ckpt;  // empty disables guidance
  std::string dict_path;
  std::string inventory_path;  // defaults to inventory.json next to the dict
  std::string phones;          // space-separated symbols
  std::string speaker = "target";
  std::string weights;  // "impaired=5.0" or "sym=w,sym=w"
  double alpha = 0.3;
  int steps = 25;
  std::string sampler = "euler_ode";
  std::uint64_t seed = 0;
  std::string out_path;
  std::string trace_path;  // optional
};
void synth_cmd(const SynthCmdOptions& opts);

void eval_cmd(const std::string& synth_dir, const std::string& oracle_ckpt,
              const std::string& out_csv);

struct PipelineResult {
  EvalReport report;
  std::string report_path;
};

// gen -> train (score, classifier, oracle) -> synth (guided + unguided) ->
// eval, all under out_dir with config and seeds copied in.
PipelineResult run_pipeline(const RunConfig& cfg, const std::string& out_dir);

// In-memory variant used by the pipeline and by replication experiments.
EvalReport run_pipeline_report(const RunConfig& cfg);

}  // namespace diffspeech
