#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "diffspeech/pipeline.hpp"
#include "diffspeech/verify.hpp"

namespace ds = diffspeech;

namespace {

// Exit codes: 0 success, 1 check failure, 2 usage error, 3 numeric failure.
constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;

ds::RunConfig load_or_default(const std::string& config_path) {
  return config_path.empty() ? ds::default_config() : ds::load_config_file(config_path);
}

void print_report_summary(const ds::EvalReport& report) {
  std::printf("%-18s %10s %10s %8s\n", "condition", "frames", "errors", "rate");
  for (const auto& c : report.conditions) {
    const ds::PhoneStat total = c.total();
    std::printf("%-18s %10ld %10ld %8.4f\n", c.condition.c_str(), total.n_frames, total.n_errors,
                total.rate());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Classifier-guided diffusion synthesis on a synthetic phone-conditioned "
               "speech-feature domain"};
  app.require_subcommand(1);

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "Generate the synthetic corpus and lookup tables");
  std::string gen_config, gen_out;
  std::uint64_t gen_seed = 0;
  bool gen_seed_set = false;
  gen->add_option("--config", gen_config, "Config file (JSON)");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seed", gen_seed, "Root seed override")->each([&](const std::string&) {
    gen_seed_set = true;
  });

  // train-score
  auto* ts = app.add_subcommand("train-score", "Train the score network");
  std::string ts_config, ts_corpus, ts_out;
  int ts_steps = 0;
  std::uint64_t ts_seed = 0;
  bool ts_steps_set = false, ts_seed_set = false;
  ts->add_option("--config", ts_config, "Config file (JSON)");
  ts->add_option("--corpus", ts_corpus, "Corpus directory from gen-corpus")->required();
  ts->add_option("--out", ts_out, "Checkpoint output path")->required();
  ts->add_option("--steps", ts_steps, "Training steps")->each([&](const std::string&) {
    ts_steps_set = true;
  });
  ts->add_option("--seed", ts_seed, "Training seed")->each([&](const std::string&) {
    ts_seed_set = true;
  });

  // train-classifier
  auto* tc = app.add_subcommand("train-classifier", "Train the phone classifier");
  std::string tc_config, tc_corpus, tc_out;
  int tc_steps = 0;
  std::uint64_t tc_seed = 0;
  bool tc_steps_set = false, tc_seed_set = false, tc_healthy = false, tc_oracle = false,
       tc_clean = false;
  tc->add_option("--config", tc_config, "Config file (JSON)");
  tc->add_option("--corpus", tc_corpus, "Corpus directory from gen-corpus")->required();
  tc->add_option("--out", tc_out, "Checkpoint output path")->required();
  tc->add_flag("--healthy-only", tc_healthy, "Drop target-speaker utterances before training");
  tc->add_flag("--oracle-split", tc_oracle, "Train on the held-out oracle split");
  tc->add_flag("--clean-only", tc_clean, "Train on clean frames only (no noise conditioning)");
  tc->add_option("--steps", tc_steps, "Training steps")->each([&](const std::string&) {
    tc_steps_set = true;
  });
  tc->add_option("--seed", tc_seed, "Training seed")->each([&](const std::string&) {
    tc_seed_set = true;
  });

  // synth
  auto* sy = app.add_subcommand("synth", "Synthesize one utterance");
  ds::SynthCmdOptions sopts;
  sy->add_option("--score", sopts.score_ckpt, "Score checkpoint")->required();
  sy->add_option("--classifier", sopts.classifier_ckpt, "Classifier checkpoint (omit to disable guidance)");
  sy->add_option("--dict", sopts.dict_path, "Phone dictionary file")->required();
  sy->add_option("--inventory", sopts.inventory_path,
                 "Inventory file (default: inventory.json next to the dictionary)");
  sy->add_option("--phones", sopts.phones, "Space-separated phone symbols")->required();
  sy->add_option("--speaker", sopts.speaker, "'target' or integer speaker id");
  sy->add_option("--alpha", sopts.alpha, "Guidance scale hyperparameter");
  sy->add_option("--steps", sopts.steps, "Reverse steps");
  sy->add_option("--sampler", sopts.sampler, "euler_ode | exp_ode");
  sy->add_option("--weights", sopts.weights, "Per-phone guidance weights, e.g. impaired=5.0");
  sy->add_option("--seed", sopts.seed, "Sampling seed");
  sy->add_option("--out", sopts.out_path, "Output utterance record (JSON)")->required();
  sy->add_option("--trace", sopts.trace_path, "Per-step trace CSV");

  // eval
  auto* ev = app.add_subcommand("eval", "Frame-error evaluation of synthesized conditions");
  std::string ev_dir, ev_oracle, ev_out;
  ev->add_option("--synth-dir", ev_dir, "Directory with the four condition files")->required();
  ev->add_option("--oracle", ev_oracle, "Oracle classifier checkpoint")->required();
  ev->add_option("--out", ev_out, "Report CSV path")->required();

  // verify
  auto* vf = app.add_subcommand("verify", "Run the analytic-oracle invariant suite");
  std::string vf_config, vf_json, vf_score, vf_clf;
  vf->add_option("--config", vf_config, "Config file (JSON)");
  vf->add_option("--json", vf_json, "Write machine-readable results to this file");
  vf->add_option("--score", vf_score, "Validate a score checkpoint");
  vf->add_option("--classifier", vf_clf, "Validate a classifier checkpoint");

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "Full run: gen -> train -> synth -> eval");
  std::string pl_config, pl_out;
  std::uint64_t pl_seed = 0;
  int pl_jobs = 0;
  bool pl_seed_set = false, pl_jobs_set = false;
  pl->add_option("--config", pl_config, "Config file (JSON)");
  pl->add_option("--out", pl_out, "Run directory")->required();
  pl->add_option("--seed", pl_seed, "Root seed override")->each([&](const std::string&) {
    pl_seed_set = true;
  });
  pl->add_option("--jobs", pl_jobs, "Parallel synthesis chains")->each([&](const std::string&) {
    pl_jobs_set = true;
  });

  try {
    app.parse(argc, argv);

    if (*gen) {
      ds::RunConfig cfg = load_or_default(gen_config);
      if (gen_seed_set) {
        cfg.seed = gen_seed;
        ds::reseed(cfg);
      }
      ds::gen_corpus_cmd(cfg, gen_out);
      std::printf("corpus written to %s\n", gen_out.c_str());
      return kExitOk;
    }
    if (*ts) {
      ds::RunConfig cfg = load_or_default(ts_config);
      if (ts_steps_set) cfg.score_train.steps = ts_steps;
      if (ts_seed_set) cfg.score_train.seed = ts_seed;
      ds::train_score_cmd(cfg, ts_corpus, ts_out);
      std::printf("score checkpoint written to %s\n", ts_out.c_str());
      return kExitOk;
    }
    if (*tc) {
      ds::RunConfig cfg = load_or_default(tc_config);
      if (tc_steps_set) {
        cfg.clf_train.steps = tc_steps;
        cfg.oracle_train.steps = tc_steps;
      }
      if (tc_seed_set) {
        cfg.clf_train.seed = tc_seed;
        cfg.oracle_train.seed = tc_seed;
      }
      ds::train_classifier_cmd(cfg, tc_corpus, tc_out, tc_healthy, tc_oracle, tc_clean);
      std::printf("classifier checkpoint written to %s\n", tc_out.c_str());
      return kExitOk;
    }
    if (*sy) {
      ds::synth_cmd(sopts);
      std::printf("utterance written to %s\n", sopts.out_path.c_str());
      return kExitOk;
    }
    if (*ev) {
      ds::eval_cmd(ev_dir, ev_oracle, ev_out);
      std::printf("report written to %s\n", ev_out.c_str());
      return kExitOk;
    }
    if (*vf) {
      const ds::RunConfig cfg = load_or_default(vf_config);
      if (!vf_score.empty())
        ds::score_checkpoint_from_json<double>(ds::read_json_file(vf_score));
      if (!vf_clf.empty())
        ds::classifier_checkpoint_from_json<double>(ds::read_json_file(vf_clf));
      const auto checks = ds::run_verification(cfg);
      for (const auto& c : checks) {
        std::printf("[%s] %s measured=%.6g tol=%.6g\n", c.pass ? "PASS" : "FAIL", c.name.c_str(),
                    c.measured, c.tolerance);
      }
      if (!vf_json.empty()) ds::write_json_file(vf_json, ds::checks_to_json(checks));
      return ds::all_passed(checks) ? kExitOk : kExitCheckFailure;
    }
    if (*pl) {
      ds::RunConfig cfg = load_or_default(pl_config);
      if (pl_seed_set) {
        cfg.seed = pl_seed;
        ds::reseed(cfg);
      }
      if (pl_jobs_set) cfg.jobs = pl_jobs;
      const ds::PipelineResult result = ds::run_pipeline(cfg, pl_out);
      print_report_summary(result.report);
      std::printf("report written to %s\n", result.report_path.c_str());
      return kExitOk;
    }
    return kExitUsage;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  } catch (const ds::DomainError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ds::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
