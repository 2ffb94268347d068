// Copyright 2026 The toktide Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "toktide/io.hpp"
#include "toktide/nn/tensor.hpp"

namespace toktide::synth {

using Features = Mat<float>;

struct EventClass {
  int id = 0;
  std::string name;
  std::vector<std::string> synonyms;  // includes name; any of these may name the event in a caption
  std::vector<std::string> verbs;
  Features prototype;  // k_e x F
};

struct TimelineEvent {
  int event = 0;
  long onset = 0;
  double gain = 1.0;
};

struct Clip {
  std::string id;
  std::string split;
  Features frames;  // T x F
  std::vector<int> tags;  // multi-hot over S
  std::vector<std::string> captions;  // exactly 5
  std::vector<TimelineEvent> timeline;  // sorted by onset
};

struct CorpusConfig {
  int num_classes = 8;
  long n_train = 500;
  long n_val = 100;
  long n_test = 100;
  double duration_s = 2.0;
  double frame_rate = 50.0;
  long feature_dim = 32;
  double noise_level = 0.1;
  int max_events_per_clip = 3;
  long min_event_frames = 10;
  long max_event_frames = 20;
  // Shared spectral atoms: every prototype is a cross-fade between two atoms
  // from this pool plus a class-specific pattern weighted by class_specificity.
  int atom_pool = 5;
  double class_specificity = 0.3;
  // Each event occurrence is scaled by a gain drawn log-uniformly from
  // [1/max_gain, max_gain] (loudness variation).
  double max_gain = 4.0;
  // Per-clip stationary background: a random smooth spectrum scaled by a level
  // drawn uniformly from [0, ambience_level], slowly modulated over time.
  double ambience_level = 0.0;
  // Distinguishes independent clip streams (e.g. an out-of-domain corpus) that
  // share the same class bank.
  std::uint64_t stream = 0;

  long frames_per_clip() const { return std::lround(duration_s * frame_rate); }
  long total_clips() const { return n_train + n_val + n_test; }
};

inline constexpr int kCaptionsPerClip = 5;

struct ClassLexicon {
  const char* name;
  const char* alt;
  const char* verb1;
  const char* verb2;
};

inline constexpr std::array<ClassLexicon, 24> kLexicon{{
    {"dog", "puppy", "barks", "yelps"},       {"bird", "songbird", "chirps", "sings"},
    {"car", "automobile", "passes", "honks"}, {"rain", "drizzle", "falls", "patters"},
    {"bell", "chime", "rings", "tolls"},      {"siren", "alarm", "wails", "blares"},
    {"wind", "breeze", "blows", "howls"},     {"door", "gate", "slams", "creaks"},
    {"engine", "motor", "rumbles", "idles"},  {"baby", "infant", "cries", "babbles"},
    {"crowd", "audience", "cheers", "claps"}, {"stream", "river", "flows", "trickles"},
    {"cat", "kitten", "meows", "purrs"},      {"clock", "timer", "ticks", "beeps"},
    {"phone", "telephone", "buzzes", "vibrates"}, {"train", "locomotive", "whistles", "rattles"},
    {"thunder", "storm", "booms", "crashes"}, {"hammer", "mallet", "bangs", "knocks"},
    {"cow", "cattle", "moos", "lows"},        {"horse", "pony", "neighs", "gallops"},
    {"saw", "chainsaw", "whirs", "grinds"},   {"fire", "campfire", "crackles", "roars"},
    {"frog", "toad", "croaks", "ribbits"},    {"whistle", "flute", "shrills", "toots"},
}};

inline constexpr int kMaxClasses = static_cast<int>(kLexicon.size());

inline void validate(const CorpusConfig& cfg) {
  if (cfg.num_classes < 2) throw ConfigError("corpus needs at least 2 classes, got " + std::to_string(cfg.num_classes));
  if (cfg.num_classes > kMaxClasses)
    throw ConfigError("corpus supports at most " + std::to_string(kMaxClasses) + " classes");
  if (cfg.n_train < 1 || cfg.n_val < 0 || cfg.n_test < 0) throw ConfigError("corpus needs at least one training clip");
  if (cfg.max_events_per_clip < 1 || cfg.max_events_per_clip > cfg.num_classes)
    throw ConfigError("max_events_per_clip must be in [1, S]");
  if (cfg.feature_dim < 1) throw ConfigError("feature_dim must be positive");
  if (cfg.frames_per_clip() < cfg.max_event_frames * cfg.max_events_per_clip)
    throw ConfigError("clip too short to hold max_events_per_clip events");
  if (cfg.min_event_frames < 2 || cfg.max_event_frames < cfg.min_event_frames)
    throw ConfigError("invalid event length range");
  if (cfg.atom_pool < 2 || cfg.atom_pool * cfg.atom_pool < cfg.num_classes)
    throw ConfigError("atom_pool too small for the number of classes");
  if (cfg.noise_level < 0) throw ConfigError("noise_level must be non-negative");
  if (cfg.max_gain < 1) throw ConfigError("max_gain must be >= 1");
  if (cfg.ambience_level < 0) throw ConfigError("ambience_level must be non-negative");
}

// Smooth non-negative spectral shape with unit RMS.
inline Features spectral_shape(long bins, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> raw(static_cast<std::size_t>(bins));
  for (auto& v : raw) v = n(rng);
  Features s(1, bins);
  for (long b = 0; b < bins; ++b) {
    double acc = 0, wsum = 0;
    for (long o = -2; o <= 2; ++o) {
      const long j = std::clamp(b + o, 0L, bins - 1);
      const double w = 1.0 / (1.0 + std::abs(static_cast<double>(o)));
      acc += w * raw[static_cast<std::size_t>(j)];
      wsum += w;
    }
    s(0, b) = static_cast<float>(std::abs(acc / wsum));
  }
  const float rms = std::sqrt(s.squaredNorm() / static_cast<float>(bins));
  return s / std::max(rms, 1e-6f);
}

// Class bank: deterministic in (seed, class id) for a fixed atom pool size.
inline std::vector<EventClass> make_classes(std::uint64_t seed, const CorpusConfig& cfg) {
  const long f = cfg.feature_dim;
  Rng atom_rng(mix_seed(seed, 0xA70));
  std::vector<Features> atoms;
  for (int a = 0; a < cfg.atom_pool; ++a) atoms.push_back(spectral_shape(f, atom_rng));
  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < cfg.atom_pool; ++a)
    for (int b = 0; b < cfg.atom_pool; ++b) pairs.emplace_back(a, b);
  std::shuffle(pairs.begin(), pairs.end(), atom_rng);

  std::vector<EventClass> classes;
  for (int id = 0; id < cfg.num_classes; ++id) {
    Rng rng(mix_seed(seed, 0xC1A55000ULL + static_cast<std::uint64_t>(id)));
    const auto& lex = kLexicon[static_cast<std::size_t>(id)];
    EventClass ec;
    ec.id = id;
    ec.name = lex.name;
    ec.synonyms = {lex.name, lex.alt};
    ec.verbs = {lex.verb1, lex.verb2};
    std::uniform_int_distribution<long> len_dist(cfg.min_event_frames, cfg.max_event_frames);
    const long k = len_dist(rng);
    const auto [a1, a2] = pairs[static_cast<std::size_t>(id)];
    const Features own = spectral_shape(f, rng);
    const Features own2 = spectral_shape(f, rng);
    ec.prototype.resize(k, f);
    const double c = cfg.class_specificity;
    for (long i = 0; i < k; ++i) {
      const float w = k > 1 ? static_cast<float>(i) / static_cast<float>(k - 1) : 0.f;
      const float env = static_cast<float>(0.6 + 0.4 * std::sin(M_PI * (static_cast<double>(i) + 0.5) / k));
      Features shared = (1.f - w) * atoms[static_cast<std::size_t>(a1)] + w * atoms[static_cast<std::size_t>(a2)];
      Features mine = (1.f - w) * own + w * own2;
      ec.prototype.row(i) = env * (static_cast<float>(1.0 - c) * shared + static_cast<float>(c) * mine);
    }
    classes.push_back(std::move(ec));
  }
  return classes;
}

// Places events sequentially (no overlap) into a T x F canvas and adds noise.
inline Features render_clip(const std::vector<EventClass>& classes, const std::vector<TimelineEvent>& timeline, long frames,
                            long feature_dim, double noise_level, Rng& rng) {
  Features out = Features::Zero(frames, feature_dim);
  for (const auto& ev : timeline) {
    const auto& proto = classes.at(static_cast<std::size_t>(ev.event)).prototype;
    const long n = std::min<long>(proto.rows(), frames - ev.onset);
    if (n > 0) out.middleRows(ev.onset, n) += static_cast<float>(ev.gain) * proto.topRows(n);
  }
  if (noise_level > 0) {
    std::normal_distribution<double> nd(0.0, noise_level);
    for (long i = 0; i < out.size(); ++i) out.data()[i] += static_cast<float>(nd(rng));
  }
  return out;
}

inline std::string event_phrase(const EventClass& ec, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick_n(0, ec.synonyms.size() - 1), pick_v(0, ec.verbs.size() - 1);
  const std::string& noun = ec.synonyms[pick_n(rng)];
  const std::string& verb = ec.verbs[pick_v(rng)];
  return "a " + noun + " " + verb;
}

// Template grammar: events in onset order joined by a forward connective, or
// in reverse order joined by "after". Synonyms are drawn per event.
inline std::string make_caption(const std::vector<EventClass>& classes, const std::vector<TimelineEvent>& timeline,
                                Rng& rng) {
  static const std::array<const char*, 3> kForward{"then", "and then", "before"};
  std::vector<std::string> phrases;
  for (const auto& ev : timeline) phrases.push_back(event_phrase(classes.at(static_cast<std::size_t>(ev.event)), rng));
  std::uniform_int_distribution<int> order(0, 1);
  std::uniform_int_distribution<std::size_t> conn(0, kForward.size() - 1);
  const bool reverse = phrases.size() > 1 && order(rng) == 1;
  std::string out;
  if (reverse) {
    for (std::size_t i = phrases.size(); i-- > 0;) {
      if (!out.empty()) out += " after ";
      out += phrases[i];
    }
  } else {
    for (std::size_t i = 0; i < phrases.size(); ++i) {
      if (i > 0) out += std::string(" ") + kForward[conn(rng)] + " ";
      out += phrases[i];
    }
  }
  return out;
}

inline std::uint64_t split_code(const std::string& split) {
  if (split == "train") return 1;
  if (split == "val") return 2;
  if (split == "test") return 3;
  return 4;
}

inline Clip make_clip(std::uint64_t seed, const CorpusConfig& cfg, const std::vector<EventClass>& classes,
                      const std::string& split, long index) {
  Rng rng(mix_seed(mix_seed(seed, 0x5EED0000ULL + cfg.stream), split_code(split) * 1000003ULL + static_cast<std::uint64_t>(index)));
  const long frames = cfg.frames_per_clip();
  std::uniform_int_distribution<int> nev(1, cfg.max_events_per_clip);
  const int n = nev(rng);
  std::vector<int> ids(static_cast<std::size_t>(cfg.num_classes));
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(static_cast<std::size_t>(n));

  long used = 0;
  for (int id : ids) used += classes[static_cast<std::size_t>(id)].prototype.rows();
  const long free = frames - used;
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> gaps(static_cast<std::size_t>(n + 1));
  for (auto& g : gaps) g = u(rng);
  const double gsum = std::accumulate(gaps.begin(), gaps.end(), 0.0);

  Clip clip;
  clip.split = split;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05ld", split.c_str(), index);
  clip.id = cfg.stream == 0 ? std::string(buf) : "s" + std::to_string(cfg.stream) + "_" + buf;
  long cursor = 0;
  for (int i = 0; i < n; ++i) {
    cursor += static_cast<long>(std::floor(free * gaps[static_cast<std::size_t>(i)] / gsum));
    clip.timeline.push_back({ids[static_cast<std::size_t>(i)], cursor, 1.0});
    cursor += classes[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])].prototype.rows();
  }
  if (cfg.max_gain > 1) {
    std::uniform_real_distribution<double> lg(-std::log(cfg.max_gain), std::log(cfg.max_gain));
    for (auto& ev : clip.timeline) ev.gain = std::exp(lg(rng));
  }
  clip.frames = render_clip(classes, clip.timeline, frames, cfg.feature_dim, cfg.noise_level, rng);
  if (cfg.ambience_level > 0) {
    std::uniform_real_distribution<double> level(0.0, cfg.ambience_level), phase(0.0, 2 * M_PI);
    const Features bg = spectral_shape(cfg.feature_dim, rng);
    const double a = level(rng), ph = phase(rng);
    for (long t = 0; t < frames; ++t)
      clip.frames.row(t) += static_cast<float>(a * (1.0 + 0.3 * std::sin(2 * M_PI * static_cast<double>(t) / frames + ph))) * bg;
  }
  clip.tags.assign(static_cast<std::size_t>(cfg.num_classes), 0);
  for (const auto& ev : clip.timeline) clip.tags[static_cast<std::size_t>(ev.event)] = 1;
  for (int c = 0; c < kCaptionsPerClip; ++c) clip.captions.push_back(make_caption(classes, clip.timeline, rng));
  return clip;
}

struct Corpus {
  std::uint64_t seed = 0;
  CorpusConfig config;
  std::vector<EventClass> classes;
  std::map<std::string, std::vector<Clip>> splits;

  const std::vector<Clip>& split(const std::string& name) const {
    auto it = splits.find(name);
    if (it == splits.end()) throw DataError("corpus has no split " + name);
    return it->second;
  }
};

inline Corpus generate_corpus(std::uint64_t seed, const CorpusConfig& cfg) {
  validate(cfg);
  Corpus c;
  c.seed = seed;
  c.config = cfg;
  c.classes = make_classes(seed, cfg);
  const std::vector<std::pair<std::string, long>> plan{{"train", cfg.n_train}, {"val", cfg.n_val}, {"test", cfg.n_test}};
  for (const auto& [name, n] : plan) {
    auto& clips = c.splits[name];
    for (long i = 0; i < n; ++i) clips.push_back(make_clip(seed, cfg, c.classes, name, i));
  }
  return c;
}

// Zero-pads or truncates to exactly target rows.
inline Features pad_or_truncate(const Features& frames, long target) {
  if (target < 1) throw ConfigError("pad_or_truncate: target length must be >= 1");
  Features out = Features::Zero(target, frames.cols());
  const long n = std::min(target, frames.rows());
  out.topRows(n) = frames.topRows(n);
  return out;
}

// ---- feature files ("AFEA") ----

inline constexpr std::uint32_t kFeatureVersion = 1;

inline std::vector<char> encode_features(const Features& f) {
  io::Writer w;
  w.magic("AFEA");
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(f.rows()));
  w.u32(static_cast<std::uint32_t>(f.cols()));
  w.bytes(f.data(), sizeof(float) * static_cast<std::size_t>(f.size()));
  return w.buffer();
}

inline Features decode_features(std::vector<char> bytes, const std::string& origin) {
  io::Reader r(std::move(bytes), origin);
  r.expect_magic("AFEA");
  const auto v = r.u32();
  if (v != kFeatureVersion) throw DataError(origin + ": unsupported AFEA version " + std::to_string(v));
  const auto t = r.u32(), d = r.u32();
  Features f(static_cast<long>(t), static_cast<long>(d));
  r.bytes(f.data(), sizeof(float) * static_cast<std::size_t>(f.size()));
  if (!r.done()) throw DataError(origin + ": trailing bytes after feature matrix");
  return f;
}

inline void write_features(const std::filesystem::path& p, const Features& f) { io::write_file_atomic(p, encode_features(f)); }
inline Features read_features(const std::filesystem::path& p) { return decode_features(io::read_file(p), p.string()); }

// ---- manifests ----

struct ManifestRecord {
  std::string id;
  std::string path;  // relative to the manifest's directory
  double duration_s = 0;
  std::vector<int> tags;  // multi-hot
  std::vector<std::string> captions;
  std::vector<TimelineEvent> events;
};

inline nlohmann::ordered_json to_json(const ManifestRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["path"] = r.path;
  j["duration_s"] = r.duration_s;
  j["tags"] = r.tags;
  j["captions"] = r.captions;
  auto ev = nlohmann::ordered_json::array();
  for (const auto& e : r.events) ev.push_back({e.event, e.onset, e.gain});
  j["events"] = ev;
  return j;
}

inline ManifestRecord record_from_json(const nlohmann::json& j) {
  ManifestRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.path = j.at("path").get<std::string>();
    r.duration_s = j.at("duration_s").get<double>();
    r.tags = j.value("tags", std::vector<int>{});
    r.captions = j.value("captions", std::vector<std::string>{});
    if (j.contains("events"))
      for (const auto& e : j["events"])
        r.events.push_back({e.at(0).get<int>(), e.at(1).get<long>(), e.size() > 2 ? e.at(2).get<double>() : 1.0});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest record: ") + e.what());
  }
  return r;
}

inline std::string manifest_text(const std::vector<ManifestRecord>& recs) {
  std::string out;
  for (const auto& r : recs) out += to_json(r).dump() + "\n";
  return out;
}

inline std::vector<ManifestRecord> read_manifest(const std::filesystem::path& p) {
  std::vector<ManifestRecord> out;
  std::istringstream in(io::read_text(p));
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(p.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

inline nlohmann::ordered_json config_to_json(const CorpusConfig& c) {
  return {{"num_classes", c.num_classes},
          {"n_train", c.n_train},
          {"n_val", c.n_val},
          {"n_test", c.n_test},
          {"duration_s", c.duration_s},
          {"frame_rate", c.frame_rate},
          {"feature_dim", c.feature_dim},
          {"noise_level", c.noise_level},
          {"max_events_per_clip", c.max_events_per_clip},
          {"min_event_frames", c.min_event_frames},
          {"max_event_frames", c.max_event_frames},
          {"atom_pool", c.atom_pool},
          {"class_specificity", c.class_specificity},
          {"max_gain", c.max_gain},
          {"ambience_level", c.ambience_level},
          {"stream", c.stream}};
}

inline CorpusConfig config_from_json(const nlohmann::json& j) {
  CorpusConfig c;
  static const std::set<std::string> known{"num_classes",     "n_train",          "n_val",     "n_test",
                                           "duration_s",      "frame_rate",       "feature_dim", "noise_level",
                                           "max_events_per_clip", "min_event_frames", "max_event_frames",
                                           "atom_pool",       "class_specificity", "max_gain", "ambience_level", "stream"};
  if (!j.is_object()) throw ConfigError("corpus config must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("unknown corpus config key: " + it.key());
  try {
    c.num_classes = j.value("num_classes", c.num_classes);
    c.n_train = j.value("n_train", c.n_train);
    c.n_val = j.value("n_val", c.n_val);
    c.n_test = j.value("n_test", c.n_test);
    c.duration_s = j.value("duration_s", c.duration_s);
    c.frame_rate = j.value("frame_rate", c.frame_rate);
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.noise_level = j.value("noise_level", c.noise_level);
    c.max_events_per_clip = j.value("max_events_per_clip", c.max_events_per_clip);
    c.min_event_frames = j.value("min_event_frames", c.min_event_frames);
    c.max_event_frames = j.value("max_event_frames", c.max_event_frames);
    c.atom_pool = j.value("atom_pool", c.atom_pool);
    c.class_specificity = j.value("class_specificity", c.class_specificity);
    c.max_gain = j.value("max_gain", c.max_gain);
    c.ambience_level = j.value("ambience_level", c.ambience_level);
    c.stream = j.value("stream", c.stream);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("corpus config: ") + e.what());
  }
  validate(c);
  return c;
}

inline ManifestRecord manifest_record(const Clip& clip, const CorpusConfig& cfg) {
  return {clip.id, "features/" + clip.id + ".afea", static_cast<double>(clip.frames.rows()) / cfg.frame_rate,
          clip.tags, clip.captions, clip.timeline};
}

// Writes <dir>/corpus.json, <dir>/<split>.jsonl and <dir>/features/*.afea.
inline void write_corpus(const Corpus& c, const std::filesystem::path& dir) {
  nlohmann::ordered_json meta;
  meta["seed"] = c.seed;
  meta["config"] = config_to_json(c.config);
  auto cls = nlohmann::ordered_json::array();
  for (const auto& ec : c.classes) cls.push_back({{"id", ec.id}, {"name", ec.name}, {"synonyms", ec.synonyms}});
  meta["classes"] = cls;
  for (const auto& [name, clips] : c.splits) {
    std::vector<ManifestRecord> recs;
    for (const auto& clip : clips) {
      write_features(dir / "features" / (clip.id + ".afea"), clip.frames);
      recs.push_back(manifest_record(clip, c.config));
    }
    io::write_text_atomic(dir / (name + ".jsonl"), manifest_text(recs));
  }
  io::write_text_atomic(dir / "corpus.json", meta.dump(2) + "\n");
}

// Loads clips listed in a manifest (frames read from the feature files).
inline std::vector<Clip> load_clips(const std::filesystem::path& manifest) {
  std::vector<Clip> out;
  const auto base = manifest.parent_path();
  for (const auto& r : read_manifest(manifest)) {
    Clip c;
    c.id = r.id;
    c.split = manifest.stem().string();
    c.frames = read_features(base / r.path);
    c.tags = r.tags;
    c.captions = r.captions;
    c.timeline = r.events;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace toktide::synth
