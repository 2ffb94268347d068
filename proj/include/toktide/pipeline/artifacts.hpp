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

#include <filesystem>
#include <memory>
#include <string>

#include <json.hpp>

#include "toktide/caption/model.hpp"
#include "toktide/caption/text.hpp"
#include "toktide/nn/checkpoint.hpp"
#include "toktide/suptok.hpp"
#include "toktide/synth/corpus.hpp"
#include "toktide/tokenizer.hpp"

// On-disk layout of the experiment artifacts. Every artifact is a directory
// holding a JSON description plus one TTWT weight file; all files are written
// through the atomic ".partial" + rename path.
namespace toktide::pipeline {

namespace fs = std::filesystem;

inline nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(io::read_text(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& p, const nlohmann::ordered_json& j) { io::write_text_atomic(p, j.dump(2) + "\n"); }

template <class Fn>
auto json_field(const fs::path& origin, Fn&& fn) {
  try {
    return fn();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin.string() + ": " + e.what());
  }
}

// ---- corpora: <data>/id and <data>/od, each written by synth::write_corpus ----

inline synth::Corpus load_corpus(const fs::path& dir) {
  const auto meta = read_json(dir / "corpus.json");
  synth::Corpus c;
  json_field(dir / "corpus.json", [&] {
    c.seed = meta.at("seed").get<std::uint64_t>();
    c.config = synth::config_from_json(meta.at("config"));
    return 0;
  });
  c.classes = synth::make_classes(c.seed, c.config);
  for (const char* split : {"train", "val", "test"}) {
    const fs::path m = dir / (std::string(split) + ".jsonl");
    if (!fs::exists(m)) throw DataError("missing manifest " + m.string());
    c.splits[split] = synth::load_clips(m);
  }
  return c;
}

struct Corpora {
  synth::Corpus id, od;
};

inline Corpora load_corpora(const fs::path& data) {
  return {load_corpus(data / "id"), load_corpus(data / "od")};
}

// ---- tagging model ("pretrained encoder") ----

inline void save_tagger(const fs::path& dir, TaggingModel<float> m) {
  nlohmann::ordered_json meta;
  meta["artifact"] = "encoder";
  meta["encoder"] = synth::encoder_config_to_json(m.encoder.config());
  meta["input_dim"] = m.encoder.input_dim();
  meta["num_classes"] = m.num_classes;
  meta["tuned_from"] = m.tuned_from;
  meta["val_f1_history"] = m.val_f1_history;
  nn::save_checkpoint(dir / "weights.ttwt", m.params());
  write_json(dir / "encoder.json", meta);
}

inline TaggingModel<float> load_tagger(const fs::path& dir) {
  const fs::path mp = dir / "encoder.json";
  const auto meta = read_json(mp);
  TaggingModel<float> m;
  json_field(mp, [&] {
    if (meta.at("artifact") != "encoder") throw DataError(mp.string() + ": not an encoder artifact");
    m.encoder = synth::FrozenEncoder<float>(synth::encoder_config_from_json(meta.at("encoder")), meta.at("input_dim").get<long>());
    m.num_classes = meta.at("num_classes").get<int>();
    m.tuned_from = meta.at("tuned_from").get<int>();
    m.val_f1_history = meta.at("val_f1_history").get<std::vector<double>>();
    return 0;
  });
  Rng rng(0);
  m.head = nn::Linear<float>("tagger.head", m.encoder.dim(), m.num_classes, rng);
  nn::load_checkpoint(dir / "weights.ttwt", m.params());
  set_trainable(m.params(), false);
  return m;
}

// ---- tokenizer pipelines ----

inline void save_tokenizer(const fs::path& dir, const TokenizerPipeline<float>& p, const nlohmann::ordered_json& info) {
  nlohmann::ordered_json meta;
  meta["artifact"] = "tokenizer";
  meta["kind"] = to_string(p.kind);
  meta["source_layer"] = p.source_layer;
  meta["dim"] = p.output_dim();
  meta["K"] = p.codebooks.front().size();
  meta["n_layers"] = p.n_layers();
  ParamList<float> ps;
  auto enc = p.encoder;
  if (enc) {
    meta["encoder"] = {{"config", synth::encoder_config_to_json(enc->config())}, {"input_dim", enc->input_dim()}};
    for (auto* q : enc->params()) ps.push_back(q);
  } else {
    meta["encoder"] = nullptr;
  }
  auto pre = p.pre;
  if (pre) {
    const std::string& w = pre->in.w.name;
    meta["pre"] = {{"name", w.substr(0, w.size() - std::string(".in.w").size())},
                   {"dim", pre->in.in_dim()},
                   {"blocks", pre->stack.blocks.size()}};
    pre->collect(ps);
  } else {
    meta["pre"] = nullptr;
  }
  auto recs = nn::param_records(ps);
  for (std::size_t l = 0; l < p.codebooks.size(); ++l)
    recs.emplace_back("codebook." + std::to_string(l), nn::to_record(p.codebooks[l].vectors));
  meta["info"] = info;
  io::write_file_atomic(dir / "weights.ttwt", nn::encode_tensors(recs));
  write_json(dir / "tokenizer.json", meta);
}

inline TokenizerPipeline<float> load_tokenizer(const fs::path& dir) {
  const fs::path mp = dir / "tokenizer.json";
  const auto meta = read_json(mp);
  TokenizerPipeline<float> p;
  long k = 0, dim = 0;
  int layers = 0;
  Rng rng(0);
  json_field(mp, [&] {
    if (meta.at("artifact") != "tokenizer") throw DataError(mp.string() + ": not a tokenizer artifact");
    p.kind = tokenizer_kind_from(meta.at("kind").get<std::string>());
    p.source_layer = meta.at("source_layer").get<int>();
    k = meta.at("K").get<long>();
    dim = meta.at("dim").get<long>();
    layers = meta.at("n_layers").get<int>();
    if (!meta.at("encoder").is_null())
      p.encoder.emplace(synth::encoder_config_from_json(meta["encoder"].at("config")),
                        meta["encoder"].at("input_dim").get<long>());
    if (!meta.at("pre").is_null())
      p.pre.emplace(meta["pre"].at("name").get<std::string>(), meta["pre"].at("dim").get<long>(),
                    meta["pre"].at("blocks").get<int>(), rng);
    return 0;
  });
  const auto tensors = nn::decode_tensors(io::read_file(dir / "weights.ttwt"), (dir / "weights.ttwt").string());
  ParamList<float> ps;
  if (p.encoder) ps = p.encoder->params();
  if (p.pre) p.pre->collect(ps);
  nn::load_params(tensors, ps, (dir / "weights.ttwt").string());
  for (int l = 0; l < layers; ++l) {
    const std::string name = "codebook." + std::to_string(l);
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError(dir.string() + ": missing " + name);
    Mat<float> v(k, dim);
    nn::from_record(it->second, v, name);
    p.codebooks.emplace_back(std::move(v));
  }
  return p;
}

inline nlohmann::json tokenizer_info(const fs::path& dir) { return read_json(dir / "tokenizer.json").value("info", nlohmann::json::object()); }

// ---- captioners ----

// Where a captioner's input sequences come from. Paths are stored as given.
struct InputSource {
  std::string tokenizer;  // tokenizer artifact directory, or empty
  std::string encoder;    // encoder artifact directory for continuous input, or empty
  int layer = 0;          // continuous feature layer (0 = raw frames)
};

inline nlohmann::ordered_json to_json(const InputSource& s) {
  return {{"tokenizer", s.tokenizer}, {"encoder", s.encoder}, {"layer", s.layer}};
}

struct CaptionerBundle {
  std::unique_ptr<caption::Captioner<float>> model;
  text::Vocab vocab;
  InputSource input;
  std::string system;
};

inline std::unique_ptr<caption::Captioner<float>> make_captioner(const caption::CaptionerConfig& cfg, int vocab,
                                                                 std::uint64_t lm_seed) {
  if (cfg.kind == caption::CaptionerKind::kEncDec) return std::make_unique<caption::EncDecCaptioner<float>>(cfg, vocab);
  Rng rng(lm_seed);
  return std::make_unique<caption::PrefixCaptioner<float>>(cfg, caption::FrozenLm<float>(cfg, vocab, rng));
}

inline void save_captioner(const fs::path& dir, CaptionerBundle& b, const nlohmann::ordered_json& info) {
  nlohmann::ordered_json meta;
  meta["artifact"] = "captioner";
  meta["system"] = b.system;
  meta["config"] = caption::captioner_config_to_json(b.model->config());
  meta["vocab"] = b.vocab.content_words();
  meta["input"] = to_json(b.input);
  meta["info"] = info;
  nn::save_checkpoint(dir / "weights.ttwt", b.model->params());
  write_json(dir / "captioner.json", meta);
}

inline CaptionerBundle load_captioner(const fs::path& dir) {
  const fs::path mp = dir / "captioner.json";
  const auto meta = read_json(mp);
  CaptionerBundle b;
  caption::CaptionerConfig cfg;
  json_field(mp, [&] {
    if (meta.at("artifact") != "captioner") throw DataError(mp.string() + ": not a captioner artifact");
    b.system = meta.at("system").get<std::string>();
    cfg = caption::captioner_config_from_json(meta.at("config"));
    b.vocab = text::Vocab::from_words(meta.at("vocab").get<std::vector<std::string>>());
    const auto& in = meta.at("input");
    b.input = {in.at("tokenizer").get<std::string>(), in.at("encoder").get<std::string>(), in.at("layer").get<int>()};
    return 0;
  });
  b.model = make_captioner(cfg, b.vocab.size(), 0);
  nn::load_checkpoint(dir / "weights.ttwt", b.model->params());
  set_trainable(b.model->params(), false);
  return b;
}

}  // namespace toktide::pipeline
