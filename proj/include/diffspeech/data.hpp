#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "diffspeech/rng.hpp"
#include "diffspeech/types.hpp"

namespace diffspeech {

using json = nlohmann::json;

struct PhoneInventory {
  std::vector<std::string> phones;
  std::vector<int> impaired;  // indices into phones

  int size() const { return static_cast<int>(phones.size()); }

  int index_of(const std::string& symbol) const {
    for (int i = 0; i < size(); ++i)
      if (phones[i] == symbol) return i;
    throw LookupError("unknown phone symbol '" + symbol + "'");
  }

  bool is_impaired(int phone_id) const {
    return std::find(impaired.begin(), impaired.end(), phone_id) != impaired.end();
  }

  // Corpus-generation inventories must have >= 4 unique phones, >= 1 impaired.
  void validate() const {
    std::set<std::string> uniq(phones.begin(), phones.end());
    if (uniq.size() != phones.size()) throw ConfigError("phone inventory has duplicate symbols");
    if (phones.size() < 4) throw ConfigError("phone inventory needs at least 4 phones");
    if (impaired.empty()) throw ConfigError("phone inventory needs at least 1 impaired phone");
    for (int id : impaired)
      if (id < 0 || id >= size()) throw ConfigError("impaired phone index out of range");
  }
};

enum class SpeakerKind { healthy, target };

inline const char* to_string(SpeakerKind k) {
  return k == SpeakerKind::healthy ? "healthy" : "target";
}

inline SpeakerKind speaker_kind_from_string(const std::string& s) {
  if (s == "healthy") return SpeakerKind::healthy;
  if (s == "target") return SpeakerKind::target;
  throw ConfigError("unknown speaker kind '" + s + "'");
}

// Per-phone emission parameters: row q of means/var is the Gaussian for phone q.
struct Speaker {
  int id = 0;
  SpeakerKind kind = SpeakerKind::healthy;
  Matd means;  // K x D
  Matd var;    // K x D, diagonal covariances
};

struct Utterance {
  int speaker_id = 0;
  SpeakerKind kind = SpeakerKind::healthy;
  std::vector<int> phone_ids;
  std::vector<int> durations;  // frames per phone, all >= 1
  Matd frames;                 // L x D with L = sum(durations)

  int n_frames() const { return static_cast<int>(frames.rows()); }

  std::vector<int> frame_labels() const {
    std::vector<int> labels;
    labels.reserve(static_cast<size_t>(n_frames()));
    for (size_t k = 0; k < phone_ids.size(); ++k)
      for (int d = 0; d < durations[k]; ++d) labels.push_back(phone_ids[k]);
    return labels;
  }
};

// Generative ground truth kept alongside a synthetic corpus; evaluation uses
// the canonical and target means as distance references.
struct GenMeta {
  int feat_dim = 0;
  Matd canonical_means;   // K x D
  RowVecd articulation_shift;  // D
  double emission_var = 0.0;
  int target_speaker_id = -1;

  Matd target_means(const PhoneInventory& inv) const {
    Matd m = canonical_means;
    for (int q : inv.impaired) m.row(q) += articulation_shift;
    return m;
  }
};

struct Corpus {
  PhoneInventory inventory;
  int feat_dim = 0;
  std::vector<Speaker> speakers;  // empty when loaded from disk
  std::vector<Utterance> utterances;
  GenMeta meta;  // only populated by generate_corpus

  Corpus filtered(SpeakerKind kind) const {
    Corpus out;
    out.inventory = inventory;
    out.feat_dim = feat_dim;
    out.meta = meta;
    for (const auto& s : speakers)
      if (s.kind == kind) out.speakers.push_back(s);
    for (const auto& u : utterances)
      if (u.kind == kind) out.utterances.push_back(u);
    return out;
  }

  bool has_kind(SpeakerKind kind) const {
    return std::any_of(utterances.begin(), utterances.end(),
                       [&](const Utterance& u) { return u.kind == kind; });
  }
};

struct CorpusConfig {
  PhoneInventory inventory;
  int feat_dim = 8;
  int n_healthy = 4;
  int utts_per_speaker = 48;
  int min_phones_per_utt = 4;
  int max_phones_per_utt = 8;
  double phone_mean_scale = 2.0;       // canonical mean of phone k is scale * e_k
  double emission_stddev = 0.35;       // per-dimension emission noise
  double speaker_offset_stddev = 0.08; // healthy speakers deviate this much from canonical
  RowVecd articulation_shift;          // added to target means on impaired phones

  void validate() const {
    inventory.validate();
    if (feat_dim < 1) throw ConfigError("feat_dim must be >= 1");
    if (inventory.size() > feat_dim)
      throw ConfigError("axis-aligned canonical means require |phones| <= feat_dim");
    if (n_healthy < 2) throw ConfigError("need at least 2 healthy speakers");
    if (utts_per_speaker < 1) throw ConfigError("utts_per_speaker must be >= 1");
    if (min_phones_per_utt < 1 || max_phones_per_utt < min_phones_per_utt)
      throw ConfigError("invalid phones-per-utterance range");
    if (emission_stddev <= 0) throw ConfigError("emission_stddev must be positive");
    if (speaker_offset_stddev < 0) throw ConfigError("speaker_offset_stddev must be >= 0");
    if (articulation_shift.cols() != feat_dim)
      throw ConfigError("articulation_shift must have feat_dim entries");
  }
};

// Canonical phone means: phone k sits at scale * e_k. Deterministic, well
// separated, and independent of the seed so corpora with different seeds share
// the same underlying phone geometry.
inline Matd canonical_phone_means(const CorpusConfig& cfg) {
  Matd m = Matd::Zero(cfg.inventory.size(), cfg.feat_dim);
  for (int k = 0; k < cfg.inventory.size(); ++k) m(k, k) = cfg.phone_mean_scale;
  return m;
}

// Phone k has intrinsic duration 2 + (k mod 3); draws jitter by +-1 frame so
// the per-phone median equals the intrinsic value.
inline int base_duration(int phone_id) { return 2 + phone_id % 3; }

inline Utterance draw_utterance(const Speaker& spk, const std::vector<int>& phone_ids,
                                const CorpusConfig& cfg, Rng& rng) {
  Utterance utt;
  utt.speaker_id = spk.id;
  utt.kind = spk.kind;
  utt.phone_ids = phone_ids;
  utt.durations.reserve(phone_ids.size());
  int total = 0;
  for (int q : phone_ids) {
    const int d = std::max(1, base_duration(q) + rng.uniform_int(-1, 1));
    utt.durations.push_back(d);
    total += d;
  }
  utt.frames.resize(total, cfg.feat_dim);
  int row = 0;
  for (size_t k = 0; k < phone_ids.size(); ++k) {
    const int q = phone_ids[k];
    for (int d = 0; d < utt.durations[k]; ++d, ++row) {
      for (int j = 0; j < cfg.feat_dim; ++j) {
        utt.frames(row, j) = spk.means(q, j) + std::sqrt(spk.var(q, j)) * rng.gaussian();
      }
    }
  }
  return utt;
}

inline std::vector<int> draw_phone_seq(const CorpusConfig& cfg, int utt_index, Rng& rng) {
  // The first utterance of every speaker enumerates the full inventory, which
  // guarantees phone coverage in even the smallest corpora.
  if (utt_index == 0) {
    std::vector<int> all(static_cast<size_t>(cfg.inventory.size()));
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  const int len = rng.uniform_int(cfg.min_phones_per_utt, cfg.max_phones_per_utt);
  std::vector<int> seq(static_cast<size_t>(len));
  for (int& q : seq) q = static_cast<int>(rng.uniform_index(cfg.inventory.size()));
  return seq;
}

inline Speaker make_speaker(const CorpusConfig& cfg, const Matd& canonical, int id,
                            SpeakerKind kind, Rng& rng) {
  Speaker spk;
  spk.id = id;
  spk.kind = kind;
  spk.means = canonical;
  spk.var = Matd::Constant(cfg.inventory.size(), cfg.feat_dim,
                           cfg.emission_stddev * cfg.emission_stddev);
  if (kind == SpeakerKind::healthy) {
    spk.means += cfg.speaker_offset_stddev *
                 gaussian_matrix<double>(canonical.rows(), canonical.cols(), rng);
  } else {
    // Target means equal canonical except on impaired phones.
    for (int q : cfg.inventory.impaired) spk.means.row(q) += cfg.articulation_shift;
  }
  return spk;
}

// Healthy speakers get ids 0..n_healthy-1, the target speaker id n_healthy.
// A pure function of (config, seed).
inline Corpus generate_corpus(const CorpusConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.n_healthy + 1 > 16)
    throw ConfigError("speaker one-hot embedding is 16-dimensional; need n_healthy + 1 <= 16");

  Corpus corpus;
  corpus.inventory = cfg.inventory;
  corpus.feat_dim = cfg.feat_dim;
  corpus.meta.feat_dim = cfg.feat_dim;
  corpus.meta.canonical_means = canonical_phone_means(cfg);
  corpus.meta.articulation_shift = cfg.articulation_shift;
  corpus.meta.emission_var = cfg.emission_stddev * cfg.emission_stddev;
  corpus.meta.target_speaker_id = cfg.n_healthy;

  Rng rng(seed);
  for (int id = 0; id <= cfg.n_healthy; ++id) {
    const SpeakerKind kind = id < cfg.n_healthy ? SpeakerKind::healthy : SpeakerKind::target;
    corpus.speakers.push_back(make_speaker(cfg, corpus.meta.canonical_means, id, kind, rng));
  }
  for (const Speaker& spk : corpus.speakers) {
    for (int u = 0; u < cfg.utts_per_speaker; ++u) {
      const std::vector<int> seq = draw_phone_seq(cfg, u, rng);
      corpus.utterances.push_back(draw_utterance(spk, seq, cfg, rng));
    }
  }
  return corpus;
}

// Per-phone mean frame over training data. Conditioned on phones only, never
// on speakers; the include_target=false variant exposes the healthy-only
// ablation.
struct PhoneDictionary {
  std::vector<std::string> phones;
  Matd means;  // K x D

  RowVecd row(int phone_id) const {
    if (phone_id < 0 || phone_id >= means.rows())
      throw LookupError("phone id " + std::to_string(phone_id) + " not in dictionary");
    return means.row(phone_id);
  }
};

inline PhoneDictionary build_phone_dictionary(const Corpus& corpus, bool include_target = true) {
  const int K = corpus.inventory.size();
  Matd sums = Matd::Zero(K, corpus.feat_dim);
  std::vector<long> counts(static_cast<size_t>(K), 0);
  for (const Utterance& utt : corpus.utterances) {
    if (!include_target && utt.kind == SpeakerKind::target) continue;
    const std::vector<int> labels = utt.frame_labels();
    for (int i = 0; i < utt.n_frames(); ++i) {
      sums.row(labels[static_cast<size_t>(i)]) += utt.frames.row(i);
      ++counts[static_cast<size_t>(labels[static_cast<size_t>(i)])];
    }
  }
  PhoneDictionary dict;
  dict.phones = corpus.inventory.phones;
  dict.means.resize(K, corpus.feat_dim);
  for (int q = 0; q < K; ++q) {
    if (counts[static_cast<size_t>(q)] == 0)
      throw LookupError("phone '" + corpus.inventory.phones[static_cast<size_t>(q)] +
                        "' has no frames in the corpus");
    dict.means.row(q) = sums.row(q) / static_cast<double>(counts[static_cast<size_t>(q)]);
  }
  return dict;
}

// Expands a phone sequence to frame level: row i of mu is the dictionary entry
// of the phone owning frame i.
struct LengthRegulated {
  Matd mu;  // L x D
  std::vector<int> frame_labels;
};

inline LengthRegulated length_regulate(const std::vector<int>& phone_ids,
                                       const std::vector<int>& durations,
                                       const PhoneDictionary& dict) {
  if (phone_ids.size() != durations.size())
    throw ShapeError("length_regulate: phone_ids and durations must have equal length");
  int total = 0;
  for (int d : durations) {
    if (d < 1) throw DomainError("length_regulate: durations must be >= 1");
    total += d;
  }
  LengthRegulated out;
  out.mu.resize(total, dict.means.cols());
  out.frame_labels.reserve(static_cast<size_t>(total));
  int row = 0;
  for (size_t k = 0; k < phone_ids.size(); ++k) {
    const RowVecd entry = dict.row(phone_ids[k]);
    for (int d = 0; d < durations[k]; ++d, ++row) {
      out.mu.row(row) = entry;
      out.frame_labels.push_back(phone_ids[k]);
    }
  }
  return out;
}

// Median training duration per phone (lower median for even counts), min 1.
struct DurationTable {
  std::vector<std::string> phones;
  std::vector<int> median_frames;

  int lookup(int phone_id) const {
    if (phone_id < 0 || phone_id >= static_cast<int>(median_frames.size()))
      throw LookupError("phone id " + std::to_string(phone_id) + " not in duration table");
    return median_frames[static_cast<size_t>(phone_id)];
  }
};

inline DurationTable build_duration_table(const Corpus& corpus) {
  const int K = corpus.inventory.size();
  std::vector<std::vector<int>> samples(static_cast<size_t>(K));
  for (const Utterance& utt : corpus.utterances)
    for (size_t k = 0; k < utt.phone_ids.size(); ++k)
      samples[static_cast<size_t>(utt.phone_ids[k])].push_back(utt.durations[k]);
  DurationTable table;
  table.phones = corpus.inventory.phones;
  table.median_frames.resize(static_cast<size_t>(K));
  for (int q = 0; q < K; ++q) {
    auto& v = samples[static_cast<size_t>(q)];
    if (v.empty())
      throw LookupError("phone '" + corpus.inventory.phones[static_cast<size_t>(q)] +
                        "' has no durations in the corpus");
    std::sort(v.begin(), v.end());
    table.median_frames[static_cast<size_t>(q)] = std::max(1, v[(v.size() - 1) / 2]);
  }
  return table;
}

inline std::vector<int> predict_durations(const std::vector<int>& phone_ids,
                                          const DurationTable& table) {
  std::vector<int> out;
  out.reserve(phone_ids.size());
  for (int q : phone_ids) out.push_back(table.lookup(q));
  return out;
}

// ---------------------------------------------------------------------------
// Serialization. Corpora are newline-delimited JSON records with fields
// {speaker_id, kind, phones[], durations[], frames[[f64]]}.
// ---------------------------------------------------------------------------

inline json utterance_to_json(const Utterance& utt, const PhoneInventory& inv) {
  json j;
  j["speaker_id"] = utt.speaker_id;
  j["kind"] = to_string(utt.kind);
  json phones = json::array();
  for (int q : utt.phone_ids) phones.push_back(inv.phones[static_cast<size_t>(q)]);
  j["phones"] = phones;
  j["durations"] = utt.durations;
  json frames = json::array();
  for (int i = 0; i < utt.frames.rows(); ++i) {
    json row = json::array();
    for (int c = 0; c < utt.frames.cols(); ++c) row.push_back(utt.frames(i, c));
    frames.push_back(row);
  }
  j["frames"] = frames;
  return j;
}

inline Utterance utterance_from_json(const json& j, const PhoneInventory& inv) {
  Utterance utt;
  utt.speaker_id = j.at("speaker_id").get<int>();
  utt.kind = speaker_kind_from_string(j.at("kind").get<std::string>());
  for (const auto& p : j.at("phones")) utt.phone_ids.push_back(inv.index_of(p.get<std::string>()));
  utt.durations = j.at("durations").get<std::vector<int>>();
  const auto& frames = j.at("frames");
  const int L = static_cast<int>(frames.size());
  const int D = L > 0 ? static_cast<int>(frames[0].size()) : 0;
  utt.frames.resize(L, D);
  for (int i = 0; i < L; ++i)
    for (int c = 0; c < D; ++c) utt.frames(i, c) = frames[static_cast<size_t>(i)][static_cast<size_t>(c)].get<double>();
  const int total = std::accumulate(utt.durations.begin(), utt.durations.end(), 0);
  if (total != L) throw IoError("corpus record: sum(durations) != frame count");
  return utt;
}

inline void write_utterances_jsonl(const std::string& path, const std::vector<Utterance>& utts,
                                   const PhoneInventory& inv) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  for (const Utterance& utt : utts) out << utterance_to_json(utt, inv).dump() << "\n";
}

inline void write_corpus_jsonl(const std::string& path, const Corpus& corpus) {
  write_utterances_jsonl(path, corpus.utterances, corpus.inventory);
}

inline Corpus read_corpus_jsonl(const std::string& path, const PhoneInventory& inv) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file '" + path + "'");
  Corpus corpus;
  corpus.inventory = inv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("malformed corpus line in '" + path + "': " + e.what());
    }
    corpus.utterances.push_back(utterance_from_json(j, inv));
  }
  if (!corpus.utterances.empty()) corpus.feat_dim = static_cast<int>(corpus.utterances[0].frames.cols());
  return corpus;
}

inline json inventory_to_json(const PhoneInventory& inv, const GenMeta& meta) {
  json j;
  j["format"] = kInventoryFormat;
  j["phones"] = inv.phones;
  json impaired = json::array();
  for (int q : inv.impaired) impaired.push_back(inv.phones[static_cast<size_t>(q)]);
  j["impaired"] = impaired;
  j["feat_dim"] = meta.feat_dim;
  json means = json::array();
  for (int q = 0; q < meta.canonical_means.rows(); ++q) {
    json row = json::array();
    for (int c = 0; c < meta.canonical_means.cols(); ++c) row.push_back(meta.canonical_means(q, c));
    means.push_back(row);
  }
  j["canonical_means"] = means;
  json shift = json::array();
  for (int c = 0; c < meta.articulation_shift.cols(); ++c) shift.push_back(meta.articulation_shift(c));
  j["articulation_shift"] = shift;
  j["emission_var"] = meta.emission_var;
  j["target_speaker_id"] = meta.target_speaker_id;
  return j;
}

inline std::pair<PhoneInventory, GenMeta> inventory_from_json(const json& j) {
  if (!j.contains("format") || j.at("format") != kInventoryFormat)
    throw IoError("inventory file: missing or unsupported format tag");
  PhoneInventory inv;
  inv.phones = j.at("phones").get<std::vector<std::string>>();
  for (const auto& p : j.at("impaired")) inv.impaired.push_back(inv.index_of(p.get<std::string>()));
  GenMeta meta;
  meta.feat_dim = j.at("feat_dim").get<int>();
  const auto& means = j.at("canonical_means");
  meta.canonical_means.resize(static_cast<int>(means.size()), meta.feat_dim);
  for (int q = 0; q < meta.canonical_means.rows(); ++q)
    for (int c = 0; c < meta.feat_dim; ++c)
      meta.canonical_means(q, c) = means[static_cast<size_t>(q)][static_cast<size_t>(c)].get<double>();
  const auto& shift = j.at("articulation_shift");
  meta.articulation_shift.resize(meta.feat_dim);
  for (int c = 0; c < meta.feat_dim; ++c) meta.articulation_shift(c) = shift[static_cast<size_t>(c)].get<double>();
  meta.emission_var = j.at("emission_var").get<double>();
  meta.target_speaker_id = j.at("target_speaker_id").get<int>();
  return {inv, meta};
}

inline void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in '" + path + "': " + e.what());
  }
  return j;
}

inline json dictionary_to_json(const PhoneDictionary& dict) {
  json entries = json::object();
  for (size_t q = 0; q < dict.phones.size(); ++q) {
    json row = json::array();
    for (int c = 0; c < dict.means.cols(); ++c) row.push_back(dict.means(static_cast<int>(q), c));
    entries[dict.phones[q]] = row;
  }
  return json{{"format", kDictionaryFormat}, {"entries", entries}};
}

inline PhoneDictionary dictionary_from_json(const json& j, const PhoneInventory& inv) {
  if (!j.contains("format") || j.at("format") != kDictionaryFormat)
    throw IoError("dictionary file: missing or unsupported format tag");
  const auto& entries = j.at("entries");
  PhoneDictionary dict;
  dict.phones = inv.phones;
  for (size_t q = 0; q < inv.phones.size(); ++q) {
    if (!entries.contains(inv.phones[q]))
      throw LookupError("dictionary file is missing phone '" + inv.phones[q] + "'");
    const auto& row = entries.at(inv.phones[q]);
    if (q == 0) dict.means.resize(inv.size(), static_cast<int>(row.size()));
    for (int c = 0; c < dict.means.cols(); ++c)
      dict.means(static_cast<int>(q), c) = row[static_cast<size_t>(c)].get<double>();
  }
  return dict;
}

inline json duration_table_to_json(const DurationTable& table) {
  json medians = json::object();
  for (size_t q = 0; q < table.phones.size(); ++q) medians[table.phones[q]] = table.median_frames[q];
  return json{{"format", kDurationTableFormat}, {"median_frames", medians}};
}

inline DurationTable duration_table_from_json(const json& j, const PhoneInventory& inv) {
  if (!j.contains("format") || j.at("format") != kDurationTableFormat)
    throw IoError("duration table file: missing or unsupported format tag");
  const auto& medians = j.at("median_frames");
  DurationTable table;
  table.phones = inv.phones;
  for (const auto& p : inv.phones) {
    if (!medians.contains(p)) throw LookupError("duration table is missing phone '" + p + "'");
    table.median_frames.push_back(medians.at(p).get<int>());
  }
  return table;
}

}  // namespace diffspeech
