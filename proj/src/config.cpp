#include "diffspeech/config.hpp"

#include <set>

namespace diffspeech {

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError("unknown config key '" + where + "." + it.key() + "'");
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void parse_corpus(const json& j, CorpusConfig& c) {
  check_keys(j,
             {"phones", "impaired", "feat_dim", "n_healthy", "utts_per_speaker",
              "min_phones_per_utt", "max_phones_per_utt", "phone_mean_scale", "emission_stddev",
              "speaker_offset_stddev", "articulation_shift"},
             "corpus");
  maybe(j, "phones", c.inventory.phones);
  if (j.contains("impaired")) {
    c.inventory.impaired.clear();
    for (const auto& p : j.at("impaired"))
      c.inventory.impaired.push_back(c.inventory.index_of(p.get<std::string>()));
  }
  maybe(j, "feat_dim", c.feat_dim);
  maybe(j, "n_healthy", c.n_healthy);
  maybe(j, "utts_per_speaker", c.utts_per_speaker);
  maybe(j, "min_phones_per_utt", c.min_phones_per_utt);
  maybe(j, "max_phones_per_utt", c.max_phones_per_utt);
  maybe(j, "phone_mean_scale", c.phone_mean_scale);
  maybe(j, "emission_stddev", c.emission_stddev);
  maybe(j, "speaker_offset_stddev", c.speaker_offset_stddev);
  if (j.contains("articulation_shift")) {
    const auto v = j.at("articulation_shift").get<std::vector<double>>();
    c.articulation_shift.resize(static_cast<Eigen::Index>(v.size()));
    for (size_t i = 0; i < v.size(); ++i) c.articulation_shift(static_cast<Eigen::Index>(i)) = v[i];
  } else if (c.articulation_shift.cols() != c.feat_dim) {
    // re-derive the default shift for a non-default feat_dim
    c.articulation_shift = RowVecd::Zero(c.feat_dim);
    if (c.feat_dim > 0) c.articulation_shift(0) = 1.4 * c.phone_mean_scale;
  }
}

void parse_train(const json& j, TrainConfig& t) {
  check_keys(j, {"steps", "batch", "lr", "momentum", "t_min", "hidden", "seed"}, "score_train");
  maybe(j, "steps", t.steps);
  maybe(j, "batch", t.batch);
  maybe(j, "lr", t.lr);
  maybe(j, "momentum", t.momentum);
  maybe(j, "t_min", t.t_min);
  maybe(j, "hidden", t.hidden);
}

void parse_clf_train(const json& j, ClassifierTrainConfig& t, const std::string& where) {
  check_keys(j, {"steps", "batch", "lr", "momentum", "hidden", "noise_conditional"}, where);
  maybe(j, "steps", t.steps);
  maybe(j, "batch", t.batch);
  maybe(j, "lr", t.lr);
  maybe(j, "momentum", t.momentum);
  maybe(j, "hidden", t.hidden);
  maybe(j, "noise_conditional", t.noise_conditional);
}

void parse_guidance(const json& j, RunConfig& cfg) {
  check_keys(j, {"alpha", "impaired_weight", "n_steps", "sampler", "t_end", "per_frame_gamma"},
             "guidance");
  maybe(j, "alpha", cfg.guidance.alpha);
  maybe(j, "impaired_weight", cfg.impaired_weight);
  maybe(j, "n_steps", cfg.guidance.n_steps);
  if (j.contains("sampler"))
    cfg.guidance.kind = sampler_kind_from_string(j.at("sampler").get<std::string>());
  maybe(j, "t_end", cfg.guidance.t_end);
  maybe(j, "per_frame_gamma", cfg.guidance.per_frame_gamma);
}

void parse_eval(const json& j, RunConfig& cfg) {
  check_keys(j, {"eval_utts", "oracle_speakers", "oracle_utts_per_speaker"}, "eval");
  maybe(j, "eval_utts", cfg.eval_utts);
  maybe(j, "oracle_speakers", cfg.oracle_speakers);
  maybe(j, "oracle_utts_per_speaker", cfg.oracle_utts_per_speaker);
}

}  // namespace

RunConfig default_config() {
  RunConfig cfg;
  cfg.corpus.inventory.phones = {"aa", "ee", "ii", "oo", "kk", "ss"};
  cfg.corpus.inventory.impaired = {4, 5};  // kk, ss
  cfg.corpus.articulation_shift = RowVecd::Zero(cfg.corpus.feat_dim);
  cfg.corpus.articulation_shift(0) = 1.4 * cfg.corpus.phone_mean_scale;

  cfg.score_train.steps = 4000;
  cfg.clf_train.steps = 2500;
  cfg.oracle_train = cfg.clf_train;
  cfg.oracle_train.noise_conditional = false;
  cfg.oracle_train.steps = 1500;
  return cfg;
}

void RunConfig::validate() const {
  NoiseSchedule<double> sched(beta0, beta1);  // throws on bad endpoints
  (void)sched;
  corpus.validate();
  guidance.validate();  // weights are rebuilt per run; validate the scalar fields
  if (precision != "f32" && precision != "f64")
    throw ConfigError("precision must be 'f32' or 'f64'");
  if (!(impaired_weight > 0)) throw ConfigError("impaired_weight must be positive");
  if (eval_utts < 1) throw ConfigError("eval_utts must be >= 1");
  if (oracle_speakers < 1) throw ConfigError("oracle_speakers must be >= 1");
  if (oracle_utts_per_speaker < 1) throw ConfigError("oracle_utts_per_speaker must be >= 1");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (score_train.steps < 1 || clf_train.steps < 1 || oracle_train.steps < 1)
    throw ConfigError("training steps must be >= 1");
  if (!(score_train.t_min > 0 && score_train.t_min < 1))
    throw ConfigError("t_min must lie in (0, 1)");
}

RunConfig config_from_json(const json& j) {
  RunConfig cfg = default_config();
  check_keys(j,
             {"seed", "jobs", "beta0", "beta1", "corpus", "score_train", "classifier_train",
              "oracle_train", "precision", "guidance", "eval"},
             "<root>");
  maybe(j, "seed", cfg.seed);
  maybe(j, "jobs", cfg.jobs);
  maybe(j, "beta0", cfg.beta0);
  maybe(j, "beta1", cfg.beta1);
  if (j.contains("corpus")) parse_corpus(j.at("corpus"), cfg.corpus);
  if (j.contains("score_train")) parse_train(j.at("score_train"), cfg.score_train);
  if (j.contains("classifier_train"))
    parse_clf_train(j.at("classifier_train"), cfg.clf_train, "classifier_train");
  if (j.contains("oracle_train")) parse_clf_train(j.at("oracle_train"), cfg.oracle_train, "oracle_train");
  maybe(j, "precision", cfg.precision);
  if (j.contains("guidance")) parse_guidance(j.at("guidance"), cfg);
  if (j.contains("eval")) parse_eval(j.at("eval"), cfg);

  reseed(cfg);
  cfg.validate();
  return cfg;
}

// Stage seeds are streams of the root seed.
void reseed(RunConfig& cfg) {
  cfg.score_train.seed = derive_seed(cfg.seed, 11);
  cfg.clf_train.seed = derive_seed(cfg.seed, 12);
  cfg.oracle_train.seed = derive_seed(cfg.seed, 13);
}

json config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["jobs"] = cfg.jobs;
  j["beta0"] = cfg.beta0;
  j["beta1"] = cfg.beta1;

  json corpus;
  corpus["phones"] = cfg.corpus.inventory.phones;
  json impaired = json::array();
  for (int q : cfg.corpus.inventory.impaired)
    impaired.push_back(cfg.corpus.inventory.phones[static_cast<size_t>(q)]);
  corpus["impaired"] = impaired;
  corpus["feat_dim"] = cfg.corpus.feat_dim;
  corpus["n_healthy"] = cfg.corpus.n_healthy;
  corpus["utts_per_speaker"] = cfg.corpus.utts_per_speaker;
  corpus["min_phones_per_utt"] = cfg.corpus.min_phones_per_utt;
  corpus["max_phones_per_utt"] = cfg.corpus.max_phones_per_utt;
  corpus["phone_mean_scale"] = cfg.corpus.phone_mean_scale;
  corpus["emission_stddev"] = cfg.corpus.emission_stddev;
  corpus["speaker_offset_stddev"] = cfg.corpus.speaker_offset_stddev;
  json shift = json::array();
  for (int c = 0; c < cfg.corpus.articulation_shift.cols(); ++c)
    shift.push_back(cfg.corpus.articulation_shift(c));
  corpus["articulation_shift"] = shift;
  j["corpus"] = corpus;

  j["score_train"] = {{"steps", cfg.score_train.steps}, {"batch", cfg.score_train.batch},
                      {"lr", cfg.score_train.lr},       {"momentum", cfg.score_train.momentum},
                      {"t_min", cfg.score_train.t_min}, {"hidden", cfg.score_train.hidden}};
  auto clf_json = [](const ClassifierTrainConfig& t) {
    return json{{"steps", t.steps}, {"batch", t.batch},   {"lr", t.lr},
                {"momentum", t.momentum}, {"hidden", t.hidden},
                {"noise_conditional", t.noise_conditional}};
  };
  j["classifier_train"] = clf_json(cfg.clf_train);
  j["oracle_train"] = clf_json(cfg.oracle_train);
  j["precision"] = cfg.precision;

  j["guidance"] = {{"alpha", cfg.guidance.alpha},
                   {"impaired_weight", cfg.impaired_weight},
                   {"n_steps", cfg.guidance.n_steps},
                   {"sampler", to_string(cfg.guidance.kind)},
                   {"t_end", cfg.guidance.t_end},
                   {"per_frame_gamma", cfg.guidance.per_frame_gamma}};
  j["eval"] = {{"eval_utts", cfg.eval_utts},
               {"oracle_speakers", cfg.oracle_speakers},
               {"oracle_utts_per_speaker", cfg.oracle_utts_per_speaker}};
  return j;
}

RunConfig load_config_file(const std::string& path) {
  return config_from_json(read_json_file(path));
}

}  // namespace diffspeech
