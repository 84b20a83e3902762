#include "diffspeech/pipeline.hpp"

#include <filesystem>
#include <sstream>

#include "diffspeech/sampler.hpp"

namespace diffspeech {

namespace fs = std::filesystem;

namespace {

// Seed-stream layout of a run: 1 train corpus, 2 oracle corpus, 3 eval sets,
// 11/12/13 training stages (set by reseed), 21 synthesis chains.
constexpr std::uint64_t kStreamTrainCorpus = 1;
constexpr std::uint64_t kStreamOracleCorpus = 2;
constexpr std::uint64_t kStreamEvalSets = 3;
constexpr std::uint64_t kStreamSynthesis = 21;

const Speaker& target_speaker(const Corpus& corpus) {
  for (const Speaker& s : corpus.speakers)
    if (s.kind == SpeakerKind::target) return s;
  throw ConfigError("corpus has no target speaker");
}

struct LoadedDir {
  PhoneInventory inv;
  GenMeta meta;
  fs::path dir;

  Corpus corpus(const std::string& name) const {
    Corpus c = read_corpus_jsonl((dir / name).string(), inv);
    c.meta = meta;
    return c;
  }
};

LoadedDir load_dir(const std::string& corpus_dir) {
  LoadedDir d;
  d.dir = corpus_dir;
  auto [inv, meta] = inventory_from_json(read_json_file((d.dir / "inventory.json").string()));
  d.inv = std::move(inv);
  d.meta = std::move(meta);
  return d;
}

FrameWeights parse_weights_spec(const std::string& spec, const PhoneInventory& inv) {
  FrameWeights w = FrameWeights::uniform(inv.size());
  if (spec.empty()) return w;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos)
      throw ConfigError("weight spec '" + item + "' must look like name=value");
    const std::string name = item.substr(0, eq);
    const double value = std::stod(item.substr(eq + 1));
    if (name == "impaired") {
      for (int q : inv.impaired) w.by_phone[static_cast<size_t>(q)] = value;
    } else {
      w.by_phone[static_cast<size_t>(inv.index_of(name))] = value;
    }
  }
  w.validate();
  return w;
}

std::vector<int> parse_phone_seq(const std::string& phones, const PhoneInventory& inv) {
  std::vector<int> seq;
  std::stringstream ss(phones);
  std::string sym;
  while (ss >> sym) seq.push_back(inv.index_of(sym));
  if (seq.empty()) throw ConfigError("empty phone sequence");
  return seq;
}

Utterance synthesis_to_utterance(const SynthesisResult& res, const std::vector<int>& phone_ids,
                                 int speaker_id) {
  Utterance utt;
  utt.speaker_id = speaker_id;
  utt.kind = SpeakerKind::target;
  utt.phone_ids = phone_ids;
  utt.durations = res.durations;
  utt.frames = res.frames;
  return utt;
}

// Trained models plus everything evaluation needs, independent of dtype.
struct TrainedModels {
  json score_ckpt;
  json classifier_ckpt;
  json oracle_ckpt;
  std::vector<Utterance> guided;
  std::vector<Utterance> unguided;
};

template <typename Scalar>
TrainedModels train_and_synthesize(const RunConfig& cfg, const CorpusArtifacts& art) {
  const NoiseSchedule<double> sched = cfg.schedule();
  TrainedModels out;

  const TrainedScore<Scalar> trained = train_score<Scalar>(art.train, art.dict, sched,
                                                           cfg.score_train);
  const Corpus healthy = art.train.filtered(SpeakerKind::healthy);
  const PhoneClassifier<Scalar> clf = train_classifier<Scalar>(healthy, art.dict, sched,
                                                               cfg.clf_train);
  const PhoneClassifier<Scalar> oracle = train_classifier<Scalar>(art.oracle, art.dict, sched,
                                                                  cfg.oracle_train);
  out.score_ckpt = score_checkpoint_to_json(trained.net, cfg.score_train);
  out.classifier_ckpt = classifier_checkpoint_to_json(clf, cfg.clf_train);
  out.oracle_ckpt = classifier_checkpoint_to_json(oracle, cfg.oracle_train);

  const int target_id = art.train.meta.target_speaker_id;
  std::vector<SynthesisRequest> requests;
  requests.reserve(art.eval_target.size());
  for (const Utterance& u : art.eval_target) requests.push_back({u.phone_ids, target_id});

  GuidanceConfig guided_cfg = cfg.guidance;
  guided_cfg.weights = FrameWeights::with_impaired(art.train.inventory, cfg.impaired_weight);
  GuidanceConfig unguided_cfg = cfg.guidance;
  unguided_cfg.alpha = 0.0;
  unguided_cfg.weights = FrameWeights::uniform(art.train.inventory.size());

  // Shared synthesis root seed: guided and unguided runs are paired, starting
  // from identical prior draws.
  const std::uint64_t synth_root = derive_seed(cfg.seed, kStreamSynthesis);
  const std::vector<SynthesisResult> guided_res = synthesize_batch(
      requests, trained.net, &clf, art.dict, art.durations, sched, guided_cfg, synth_root,
      cfg.jobs);
  const std::vector<SynthesisResult> unguided_res =
      synthesize_batch(requests, trained.net, static_cast<const PhoneClassifier<Scalar>*>(nullptr),
                       art.dict, art.durations, sched, unguided_cfg, synth_root, cfg.jobs);

  for (size_t i = 0; i < requests.size(); ++i) {
    out.guided.push_back(synthesis_to_utterance(guided_res[i], requests[i].phone_ids, target_id));
    out.unguided.push_back(
        synthesis_to_utterance(unguided_res[i], requests[i].phone_ids, target_id));
  }
  return out;
}

template <typename Scalar>
EvalReport build_report(const CorpusArtifacts& art, const TrainedModels& models,
                        const PhoneClassifier<Scalar>& oracle) {
  const Matd canonical = art.train.meta.canonical_means;
  const Matd target_means = art.train.meta.target_means(art.train.inventory);
  auto items = [](const std::vector<Utterance>& utts) {
    std::vector<EvalItem> v;
    v.reserve(utts.size());
    for (const auto& u : utts) v.push_back(eval_item_from_utterance(u));
    return v;
  };
  EvalReport report;
  report.phones = art.train.inventory.phones;
  report.conditions.push_back(frame_error_rate(items(art.eval_target), oracle, canonical,
                                               target_means, kCondRecordingTarget));
  report.conditions.push_back(frame_error_rate(items(art.eval_source), oracle, canonical,
                                               target_means, kCondRecordingSource));
  report.conditions.push_back(
      frame_error_rate(items(models.unguided), oracle, canonical, target_means, kCondUnguided));
  report.conditions.push_back(
      frame_error_rate(items(models.guided), oracle, canonical, target_means, kCondGuided));
  return report;
}

PipelineResult run_pipeline_impl(const RunConfig& cfg, const fs::path* out_dir) {
  cfg.validate();
  const CorpusArtifacts art = generate_corpus_artifacts(cfg);

  TrainedModels models;
  EvalReport report;
  if (cfg.precision == "f32") {
    models = train_and_synthesize<float>(cfg, art);
    report = build_report(art, models, classifier_checkpoint_from_json<float>(models.oracle_ckpt));
  } else {
    models = train_and_synthesize<double>(cfg, art);
    report = build_report(art, models, classifier_checkpoint_from_json<double>(models.oracle_ckpt));
  }

  PipelineResult result;
  result.report = report;
  if (out_dir) {
    const fs::path corpus_dir = *out_dir / "corpus";
    const fs::path ckpt_dir = *out_dir / "ckpt";
    const fs::path synth_dir = *out_dir / "synth";
    fs::create_directories(corpus_dir);
    fs::create_directories(ckpt_dir);
    fs::create_directories(synth_dir);

    write_json_file((*out_dir / "config.json").string(), config_to_json(cfg));
    json manifest;
    manifest["formats"] = {{"checkpoint", kCheckpointFormat},
                           {"dictionary", kDictionaryFormat},
                           {"duration_table", kDurationTableFormat},
                           {"inventory", kInventoryFormat}};
    manifest["seed"] = cfg.seed;
    manifest["seed_streams"] = {{"train_corpus", kStreamTrainCorpus},
                                {"oracle_corpus", kStreamOracleCorpus},
                                {"eval_sets", kStreamEvalSets},
                                {"synthesis", kStreamSynthesis}};
    write_json_file((*out_dir / "manifest.json").string(), manifest);

    const auto& inv = art.train.inventory;
    write_json_file((corpus_dir / "inventory.json").string(),
                    inventory_to_json(inv, art.train.meta));
    write_corpus_jsonl((corpus_dir / "corpus.jsonl").string(), art.train);
    write_corpus_jsonl((corpus_dir / "oracle.jsonl").string(), art.oracle);
    write_utterances_jsonl((corpus_dir / "eval_target.jsonl").string(), art.eval_target, inv);
    write_utterances_jsonl((corpus_dir / "eval_source.jsonl").string(), art.eval_source, inv);
    write_json_file((corpus_dir / "dict.json").string(), dictionary_to_json(art.dict));
    write_json_file((corpus_dir / "dict_healthy.json").string(),
                    dictionary_to_json(art.dict_healthy));
    write_json_file((corpus_dir / "durations.json").string(),
                    duration_table_to_json(art.durations));

    write_json_file((ckpt_dir / "score.json").string(), models.score_ckpt);
    write_json_file((ckpt_dir / "classifier.json").string(), models.classifier_ckpt);
    write_json_file((ckpt_dir / "oracle.json").string(), models.oracle_ckpt);

    write_json_file((synth_dir / "inventory.json").string(),
                    inventory_to_json(inv, art.train.meta));
    write_utterances_jsonl((synth_dir / "recording_target.jsonl").string(), art.eval_target, inv);
    write_utterances_jsonl((synth_dir / "recording_source.jsonl").string(), art.eval_source, inv);
    write_utterances_jsonl((synth_dir / "unguided.jsonl").string(), models.unguided, inv);
    write_utterances_jsonl((synth_dir / "guided.jsonl").string(), models.guided, inv);

    result.report_path = (*out_dir / "report.csv").string();
    write_report_csv(result.report_path, report);
  }
  return result;
}

}  // namespace

CorpusArtifacts generate_corpus_artifacts(const RunConfig& cfg) {
  cfg.validate();
  CorpusArtifacts art;
  art.train = generate_corpus(cfg.corpus, derive_seed(cfg.seed, kStreamTrainCorpus));

  // Held-out healthy split for the evaluation oracle.
  {
    Rng rng(derive_seed(cfg.seed, kStreamOracleCorpus));
    art.oracle.inventory = cfg.corpus.inventory;
    art.oracle.feat_dim = cfg.corpus.feat_dim;
    art.oracle.meta = art.train.meta;
    for (int i = 0; i < cfg.oracle_speakers; ++i) {
      art.oracle.speakers.push_back(make_speaker(cfg.corpus, art.train.meta.canonical_means,
                                                 100 + i, SpeakerKind::healthy, rng));
    }
    for (const Speaker& spk : art.oracle.speakers)
      for (int u = 0; u < cfg.oracle_utts_per_speaker; ++u)
        art.oracle.utterances.push_back(
            draw_utterance(spk, draw_phone_seq(cfg.corpus, u, rng), cfg.corpus, rng));
  }

  // Evaluation sets: fresh target-speaker recordings plus a dedicated healthy
  // source speaker reading the same phone content.
  {
    Rng rng(derive_seed(cfg.seed, kStreamEvalSets));
    const Speaker& target = target_speaker(art.train);
    const Speaker source = make_speaker(cfg.corpus, art.train.meta.canonical_means, 200,
                                        SpeakerKind::healthy, rng);
    for (int u = 0; u < cfg.eval_utts; ++u) {
      const std::vector<int> seq = draw_phone_seq(cfg.corpus, u, rng);
      art.eval_target.push_back(draw_utterance(target, seq, cfg.corpus, rng));
      art.eval_source.push_back(draw_utterance(source, seq, cfg.corpus, rng));
    }
  }

  art.dict = build_phone_dictionary(art.train, /*include_target=*/true);
  art.dict_healthy = build_phone_dictionary(art.train, /*include_target=*/false);
  art.durations = build_duration_table(art.train);
  return art;
}

void gen_corpus_cmd(const RunConfig& cfg, const std::string& out_dir) {
  const CorpusArtifacts art = generate_corpus_artifacts(cfg);
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_json_file((dir / "inventory.json").string(),
                  inventory_to_json(art.train.inventory, art.train.meta));
  write_corpus_jsonl((dir / "corpus.jsonl").string(), art.train);
  write_corpus_jsonl((dir / "oracle.jsonl").string(), art.oracle);
  write_utterances_jsonl((dir / "eval_target.jsonl").string(), art.eval_target,
                         art.train.inventory);
  write_utterances_jsonl((dir / "eval_source.jsonl").string(), art.eval_source,
                         art.train.inventory);
  write_json_file((dir / "dict.json").string(), dictionary_to_json(art.dict));
  write_json_file((dir / "dict_healthy.json").string(), dictionary_to_json(art.dict_healthy));
  write_json_file((dir / "durations.json").string(), duration_table_to_json(art.durations));
  write_json_file((dir / "config.json").string(), config_to_json(cfg));
}

void train_score_cmd(const RunConfig& cfg, const std::string& corpus_dir,
                     const std::string& out_ckpt) {
  const LoadedDir d = load_dir(corpus_dir);
  const Corpus corpus = d.corpus("corpus.jsonl");
  const PhoneDictionary dict =
      dictionary_from_json(read_json_file((d.dir / "dict.json").string()), d.inv);
  const NoiseSchedule<double> sched = cfg.schedule();
  if (cfg.precision == "f32") {
    const auto trained = train_score<float>(corpus, dict, sched, cfg.score_train);
    write_json_file(out_ckpt, score_checkpoint_to_json(trained.net, cfg.score_train));
  } else {
    const auto trained = train_score<double>(corpus, dict, sched, cfg.score_train);
    write_json_file(out_ckpt, score_checkpoint_to_json(trained.net, cfg.score_train));
  }
}

void train_classifier_cmd(const RunConfig& cfg, const std::string& corpus_dir,
                          const std::string& out_ckpt, bool healthy_only, bool oracle_split,
                          bool clean_only) {
  const LoadedDir d = load_dir(corpus_dir);
  Corpus corpus = d.corpus(oracle_split ? "oracle.jsonl" : "corpus.jsonl");
  if (healthy_only) corpus = corpus.filtered(SpeakerKind::healthy);
  ClassifierTrainConfig tcfg = oracle_split ? cfg.oracle_train : cfg.clf_train;
  if (clean_only) tcfg.noise_conditional = false;
  const PhoneDictionary dict =
      dictionary_from_json(read_json_file((d.dir / "dict.json").string()), d.inv);
  const NoiseSchedule<double> sched = cfg.schedule();
  if (cfg.precision == "f32") {
    write_json_file(out_ckpt, classifier_checkpoint_to_json(
                                  train_classifier<float>(corpus, dict, sched, tcfg), tcfg));
  } else {
    write_json_file(out_ckpt, classifier_checkpoint_to_json(
                                  train_classifier<double>(corpus, dict, sched, tcfg), tcfg));
  }
}

namespace {

template <typename ScoreScalar, typename ClfScalar>
void synth_with(const SynthCmdOptions& opts, const json& score_json, const json* clf_json,
                const PhoneInventory& inv, const PhoneDictionary& dict,
                const DurationTable& durations) {
  const ScoreNet<ScoreScalar> net = score_checkpoint_from_json<ScoreScalar>(score_json);
  std::optional<PhoneClassifier<ClfScalar>> clf;
  if (clf_json) clf = classifier_checkpoint_from_json<ClfScalar>(*clf_json);

  const std::vector<int> phone_ids = parse_phone_seq(opts.phones, inv);
  int speaker = 0;
  if (opts.speaker == "target") {
    speaker = net.n_speakers - 1;
  } else {
    try {
      speaker = std::stoi(opts.speaker);
    } catch (const std::exception&) {
      throw ConfigError("--speaker must be 'target' or an integer id");
    }
  }

  GuidanceConfig gcfg;
  gcfg.alpha = opts.alpha;
  gcfg.n_steps = opts.steps;
  gcfg.kind = sampler_kind_from_string(opts.sampler);
  gcfg.weights = parse_weights_spec(opts.weights, inv);

  Rng rng(opts.seed);
  const SynthesisResult res =
      synthesize(phone_ids, speaker, net, clf ? &*clf : nullptr, dict, &durations, nullptr,
                 net.sched, gcfg, rng);

  Utterance utt = synthesis_to_utterance(res, phone_ids, speaker);
  std::ofstream out(opts.out_path);
  if (!out) throw IoError("cannot open '" + opts.out_path + "' for writing");
  out << utterance_to_json(utt, inv).dump() << "\n";
  if (!opts.trace_path.empty()) write_trace_csv(opts.trace_path, res.trajectory);
}

}  // namespace

void synth_cmd(const SynthCmdOptions& opts) {
  const fs::path dict_path(opts.dict_path);
  const std::string inv_path = opts.inventory_path.empty()
                                   ? (dict_path.parent_path() / "inventory.json").string()
                                   : opts.inventory_path;
  auto [inv, meta] = inventory_from_json(read_json_file(inv_path));
  (void)meta;
  const PhoneDictionary dict = dictionary_from_json(read_json_file(opts.dict_path), inv);
  const DurationTable durations = duration_table_from_json(
      read_json_file((dict_path.parent_path() / "durations.json").string()), inv);

  const json score_json = read_json_file(opts.score_ckpt);
  std::optional<json> clf_json;
  if (!opts.classifier_ckpt.empty()) clf_json = read_json_file(opts.classifier_ckpt);

  const bool score_f32 = checkpoint_dtype(score_json) == "f32";
  const bool clf_f32 = clf_json ? checkpoint_dtype(*clf_json) == "f32" : true;
  if (score_f32 && clf_f32)
    synth_with<float, float>(opts, score_json, clf_json ? &*clf_json : nullptr, inv, dict, durations);
  else if (score_f32)
    synth_with<float, double>(opts, score_json, clf_json ? &*clf_json : nullptr, inv, dict, durations);
  else if (clf_f32)
    synth_with<double, float>(opts, score_json, clf_json ? &*clf_json : nullptr, inv, dict, durations);
  else
    synth_with<double, double>(opts, score_json, clf_json ? &*clf_json : nullptr, inv, dict, durations);
}

namespace {

template <typename Scalar>
EvalReport eval_with(const LoadedDir& d, const json& oracle_json) {
  const PhoneClassifier<Scalar> oracle = classifier_checkpoint_from_json<Scalar>(oracle_json);
  const Matd canonical = d.meta.canonical_means;
  const Matd target_means = d.meta.target_means(d.inv);
  EvalReport report;
  report.phones = d.inv.phones;
  const std::pair<const char*, const char*> files[] = {
      {kCondRecordingTarget, "recording_target.jsonl"},
      {kCondRecordingSource, "recording_source.jsonl"},
      {kCondUnguided, "unguided.jsonl"},
      {kCondGuided, "guided.jsonl"}};
  for (const auto& [condition, file] : files) {
    const Corpus c = read_corpus_jsonl((d.dir / file).string(), d.inv);
    std::vector<EvalItem> items;
    items.reserve(c.utterances.size());
    for (const auto& u : c.utterances) items.push_back(eval_item_from_utterance(u));
    report.conditions.push_back(
        frame_error_rate(items, oracle, canonical, target_means, condition));
  }
  return report;
}

}  // namespace

void eval_cmd(const std::string& synth_dir, const std::string& oracle_ckpt,
              const std::string& out_csv) {
  const LoadedDir d = load_dir(synth_dir);
  const json oracle_json = read_json_file(oracle_ckpt);
  const EvalReport report = checkpoint_dtype(oracle_json) == "f32"
                                ? eval_with<float>(d, oracle_json)
                                : eval_with<double>(d, oracle_json);
  write_report_csv(out_csv, report);
}

PipelineResult run_pipeline(const RunConfig& cfg, const std::string& out_dir) {
  const fs::path dir(out_dir);
  return run_pipeline_impl(cfg, &dir);
}

EvalReport run_pipeline_report(const RunConfig& cfg) {
  return run_pipeline_impl(cfg, nullptr).report;
}

}  // namespace diffspeech
