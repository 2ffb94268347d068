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

#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "toktide/caption/model.hpp"
#include "toktide/caption/train.hpp"
#include "toktide/probe.hpp"
#include "toktide/repcodec.hpp"
#include "toktide/suptok.hpp"
#include "toktide/synth/corpus.hpp"
#include "toktide/synth/encoder.hpp"
#include "toktide/tokenizer.hpp"

namespace toktide::pipeline {

// What the captioner reads: detokenized tokens from a tokenizer, or (kind ==
// nullopt) continuous encoder features at `layer` (layer 0 = raw frames).
struct TokenizerSpec {
  std::optional<TokenizerKind> kind = TokenizerKind::kKMeans;
  long K = 64;
  int n_layers = 1;
  int layer = 9;  // feature layer for kmeans / repcodec / continuous input
  int split = 9;  // Encoder1 depth for suptok
};

inline std::string spec_kind_name(const TokenizerSpec& s) { return s.kind ? to_string(*s.kind) : "none"; }

struct TrainingConfig {
  caption::CaptionTrainConfig captioner;
  TaggingConfig tagging;
  RepCodecConfig repcodec;
  SupTokConfig suptok;
  int kmeans_iters = 30;
  ProbeConfig probe;
};

struct ExperimentConfig {
  synth::CorpusConfig corpus;
  synth::EncoderConfig encoder;
  TokenizerSpec tokenizer;
  caption::CaptionerConfig captioner;
  int beam = 3;
  TrainingConfig training;
  std::uint64_t seed = 1;
};

// Stream ids for the independent random streams derived from the experiment
// seed.
enum SeedStream : std::uint64_t {
  kEncoderStream = 11,
  kTaggerStream,
  kKMeansStream,
  kRepCodecStream,
  kSupTokStream,
  kCaptionerStream,
  kProbeStream,
  kLmStream,
};

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t salt = 0) {
  return mix_seed(mix_seed(seed, stream), salt);
}

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError("unknown key \"" + k + "\" in " + where);
}

template <class V>
void read(const nlohmann::json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(where + "." + key + " has the wrong type");
  }
}

}  // namespace detail

inline TokenizerSpec tokenizer_spec_from_json(const nlohmann::json& j) {
  detail::check_keys(j, {"kind", "K", "n_layers", "layer", "split"}, "tokenizer");
  TokenizerSpec s;
  std::string kind = spec_kind_name(s);
  detail::read(j, "kind", kind, "tokenizer");
  s.kind = kind == "none" ? std::nullopt : std::optional<TokenizerKind>(tokenizer_kind_from(kind));
  detail::read(j, "K", s.K, "tokenizer");
  detail::read(j, "n_layers", s.n_layers, "tokenizer");
  detail::read(j, "layer", s.layer, "tokenizer");
  detail::read(j, "split", s.split, "tokenizer");
  return s;
}

inline nlohmann::ordered_json to_json(const TokenizerSpec& s) {
  return {{"kind", spec_kind_name(s)}, {"K", s.K}, {"n_layers", s.n_layers}, {"layer", s.layer}, {"split", s.split}};
}

inline TrainingConfig training_config_from_json(const nlohmann::json& j) {
  detail::check_keys(j, {"captioner", "tagging", "repcodec", "suptok", "kmeans_iters", "probe"}, "training");
  TrainingConfig t;
  if (j.contains("captioner")) {
    const auto& c = j["captioner"];
    detail::check_keys(c, {"epochs", "batch", "lr", "weight_decay"}, "training.captioner");
    detail::read(c, "epochs", t.captioner.epochs, "training.captioner");
    detail::read(c, "batch", t.captioner.batch, "training.captioner");
    detail::read(c, "lr", t.captioner.lr, "training.captioner");
    detail::read(c, "weight_decay", t.captioner.weight_decay, "training.captioner");
  }
  if (j.contains("tagging")) {
    const auto& c = j["tagging"];
    detail::check_keys(c, {"max_epochs", "min_epochs", "batch", "lr", "f1_floor", "tune_top"}, "training.tagging");
    detail::read(c, "max_epochs", t.tagging.max_epochs, "training.tagging");
    detail::read(c, "min_epochs", t.tagging.min_epochs, "training.tagging");
    detail::read(c, "batch", t.tagging.batch, "training.tagging");
    detail::read(c, "lr", t.tagging.lr, "training.tagging");
    detail::read(c, "f1_floor", t.tagging.f1_floor, "training.tagging");
    detail::read(c, "tune_top", t.tagging.tune_top, "training.tagging");
  }
  if (j.contains("repcodec")) {
    const auto& c = j["repcodec"];
    detail::check_keys(c, {"steps", "batch", "lr", "crop"}, "training.repcodec");
    detail::read(c, "steps", t.repcodec.steps, "training.repcodec");
    detail::read(c, "batch", t.repcodec.batch, "training.repcodec");
    detail::read(c, "lr", t.repcodec.lr, "training.repcodec");
    detail::read(c, "crop", t.repcodec.crop, "training.repcodec");
  }
  if (j.contains("suptok")) {
    const auto& c = j["suptok"];
    detail::check_keys(c, {"steps", "batch", "lr"}, "training.suptok");
    detail::read(c, "steps", t.suptok.steps, "training.suptok");
    detail::read(c, "batch", t.suptok.batch, "training.suptok");
    detail::read(c, "lr", t.suptok.lr, "training.suptok");
  }
  detail::read(j, "kmeans_iters", t.kmeans_iters, "training");
  if (j.contains("probe")) {
    const auto& c = j["probe"];
    detail::check_keys(c, {"epochs", "lr"}, "training.probe");
    detail::read(c, "epochs", t.probe.epochs, "training.probe");
    detail::read(c, "lr", t.probe.lr, "training.probe");
  }
  return t;
}

inline nlohmann::ordered_json to_json(const TrainingConfig& t) {
  return {{"captioner",
           {{"epochs", t.captioner.epochs},
            {"batch", t.captioner.batch},
            {"lr", t.captioner.lr},
            {"weight_decay", t.captioner.weight_decay}}},
          {"tagging",
           {{"max_epochs", t.tagging.max_epochs},
            {"min_epochs", t.tagging.min_epochs},
            {"batch", t.tagging.batch},
            {"lr", t.tagging.lr},
            {"f1_floor", t.tagging.f1_floor},
            {"tune_top", t.tagging.tune_top}}},
          {"repcodec",
           {{"steps", t.repcodec.steps}, {"batch", t.repcodec.batch}, {"lr", t.repcodec.lr}, {"crop", t.repcodec.crop}}},
          {"suptok", {{"steps", t.suptok.steps}, {"batch", t.suptok.batch}, {"lr", t.suptok.lr}}},
          {"kmeans_iters", t.kmeans_iters},
          {"probe", {{"epochs", t.probe.epochs}, {"lr", t.probe.lr}}}};
}

inline void validate(const ExperimentConfig& c) {
  synth::validate(c.corpus);
  synth::validate(c.encoder);
  const auto& t = c.tokenizer;
  if (t.K < 1) throw ConfigError("tokenizer.K must be >= 1");
  if (t.n_layers < 1 || t.n_layers > 2) throw ConfigError("tokenizer.n_layers must be 1 or 2");
  if (t.layer < 0 || t.layer > c.encoder.layers)
    throw ConfigError("tokenizer.layer must be in [0, " + std::to_string(c.encoder.layers) + "]");
  if (t.split < 1 || t.split >= c.encoder.layers)
    throw ConfigError("tokenizer.split must be in [1, " + std::to_string(c.encoder.layers - 1) + "]");
  if (c.beam < 1) throw ConfigError("captioner.beam must be >= 1");
  if (c.captioner.width % c.captioner.heads != 0) throw ConfigError("captioner.width must be divisible by heads");
  if (c.captioner.width % c.captioner.map_heads != 0) throw ConfigError("captioner.width must be divisible by map_heads");
  if (c.captioner.k_prefix < 1) throw ConfigError("captioner.k_prefix must be >= 1");
  const auto& tr = c.training;
  if (tr.captioner.epochs < 1 || tr.captioner.batch < 1) throw ConfigError("training.captioner epochs/batch must be >= 1");
  if (tr.tagging.tune_top < 0 || tr.tagging.tune_top > c.encoder.layers)
    throw ConfigError("training.tagging.tune_top must be in [0, encoder.layers]");
  if (tr.repcodec.steps < 1 || tr.suptok.steps < 1 || tr.kmeans_iters < 1)
    throw ConfigError("training step counts must be >= 1");
}

// Parses the experiment document. Every section is optional except "seed";
// unknown keys are rejected. Component seeds (encoder, captioner, tokenizer
// training) are not configurable: they are derived from "seed".
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  detail::check_keys(j, {"corpus", "encoder", "tokenizer", "captioner", "training", "seed"}, "config");
  if (!j.contains("seed")) throw ConfigError("config: \"seed\" is required");
  ExperimentConfig c;
  detail::read(j, "seed", c.seed, "config");
  if (j.contains("corpus")) {
    nlohmann::json merged = synth::config_to_json(c.corpus);
    for (const auto& [k, v] : j["corpus"].items()) merged[k] = v;
    c.corpus = synth::config_from_json(merged);
  }
  if (j.contains("encoder")) {
    detail::check_keys(j["encoder"], {"layers", "dim", "heads", "ff_mult", "window", "branch_scale"}, "encoder");
    nlohmann::json merged = synth::encoder_config_to_json(c.encoder);
    for (const auto& [k, v] : j["encoder"].items()) merged[k] = v;
    c.encoder = synth::encoder_config_from_json(merged);
  }
  if (j.contains("tokenizer")) c.tokenizer = tokenizer_spec_from_json(j["tokenizer"]);
  if (j.contains("captioner")) {
    nlohmann::json cap = j["captioner"];
    detail::check_keys(cap,
                       {"kind", "width", "heads", "layers", "ff_dim", "max_tokens", "max_frames", "k_prefix", "map_heads",
                        "beam"},
                       "captioner");
    if (cap.contains("beam")) {
      detail::read(cap, "beam", c.beam, "captioner");
      cap.erase("beam");
    }
    nlohmann::json merged = caption::captioner_config_to_json(c.captioner);
    for (const auto& [k, v] : cap.items()) merged[k] = v;
    c.captioner = caption::captioner_config_from_json(merged);
  }
  if (j.contains("training")) c.training = training_config_from_json(j["training"]);
  const bool tune_given = j.contains("training") && j["training"].contains("tagging") &&
                          j["training"]["tagging"].contains("tune_top");
  if (!tune_given) c.training.tagging.tune_top = c.encoder.layers;
  validate(c);
  return c;
}

// Inverse of experiment_config_from_json: derived fields (component seeds,
// captioner input width) are left out.
inline nlohmann::ordered_json to_json(const ExperimentConfig& c) {
  auto cap = caption::captioner_config_to_json(c.captioner);
  cap.erase("input_dim");
  cap.erase("seed");
  cap["beam"] = c.beam;
  auto enc = synth::encoder_config_to_json(c.encoder);
  enc.erase("seed");
  return {{"corpus", synth::config_to_json(c.corpus)},
          {"encoder", enc},
          {"tokenizer", to_json(c.tokenizer)},
          {"captioner", cap},
          {"training", to_json(c.training)},
          {"seed", c.seed}};
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& p) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return experiment_config_from_json(j);
}

}  // namespace toktide::pipeline
