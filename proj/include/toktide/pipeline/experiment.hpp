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

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "toktide/caption/train.hpp"
#include "toktide/metrics.hpp"
#include "toktide/parallel.hpp"
#include "toktide/pipeline/artifacts.hpp"
#include "toktide/pipeline/config.hpp"
#include "toktide/probe.hpp"
#include "toktide/quant/kmeans.hpp"

// End-to-end experiment steps shared by the command-line tool and the
// acceptance runner: corpora, encoder pretraining, tokenizer training,
// captioner training and scoring, the system comparison and the layer x K
// sweep.
namespace toktide::pipeline {

using Logger = std::function<void(const std::string&)>;

inline std::string fmt(double v, int digits = 6) {
  if (!std::isfinite(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// ---- corpora ----

// The out-of-domain corpus used for encoder and tokenizer training: an
// independent clip stream with twice as many event classes (the in-domain
// classes plus ones the captioning corpus never contains) and no test split.
inline synth::CorpusConfig od_config(const synth::CorpusConfig& id) {
  synth::CorpusConfig od = id;
  od.num_classes = std::min(2 * id.num_classes, synth::kMaxClasses);
  od.stream = id.stream + 1;
  od.n_test = 0;
  return od;
}

inline Corpora make_corpora(const ExperimentConfig& cfg) {
  return {synth::generate_corpus(cfg.seed, cfg.corpus), synth::generate_corpus(cfg.seed, od_config(cfg.corpus))};
}

// ---- features ----

using SplitSeqs = std::map<std::string, std::vector<Mat<float>>>;
using LayerFeatures = std::map<int, SplitSeqs>;  // layer (0 = raw frames) -> split -> clips

// Encoder states at each requested layer for every clip of every split.
inline LayerFeatures extract_features(const synth::FrozenEncoder<float>& enc, const synth::Corpus& corpus,
                                      const std::set<int>& layers) {
  const int top = layers.empty() ? 0 : *layers.rbegin();
  if (top > enc.num_layers()) throw ConfigError("feature layer " + std::to_string(top) + " exceeds encoder depth");
  LayerFeatures out;
  for (const auto& [split, clips] : corpus.splits) {
    for (int l : layers) out[l][split].resize(clips.size());
    parallel_for(clips.size(), [&](std::size_t i) {
      const Mat<float>& frames = clips[i].frames;
      if (layers.count(0)) out.at(0).at(split)[i] = frames;
      if (top == 0) return;
      Tape<float> t(false);
      Var x = t.constant(enc.embedded(frames));
      for (int l = 1; l <= top; ++l) {
        x = enc.run_blocks(t, x, l - 1, l);
        if (layers.count(l)) out.at(l).at(split)[i] = t.value(x);
      }
    });
  }
  return out;
}

inline std::vector<std::vector<int>> split_tags(const synth::Corpus& c, const std::string& split) {
  std::vector<std::vector<int>> tags;
  for (const auto& clip : c.split(split)) tags.push_back(clip.tags);
  return tags;
}

// Layer whose features a tokenizer (or continuous input) consumes.
inline int feature_layer(const TokenizerSpec& s) {
  if (!s.kind) return s.layer;
  switch (*s.kind) {
    case TokenizerKind::kSupTok:
      return s.split;
    case TokenizerKind::kAcousticProxy:
      return 0;
    default:
      return s.layer;
  }
}

// ---- encoder pretraining ----

// Random frozen encoder, then tag-supervised training of its top
// `tune_top` layers and a tag head on the out-of-domain corpus.
inline TaggingModel<float> pretrain_encoder(const ExperimentConfig& cfg, const synth::Corpus& od,
                                            const Logger& log = {}) {
  synth::EncoderConfig ec = cfg.encoder;
  ec.seed = derive_seed(cfg.seed, kEncoderStream);
  const synth::FrozenEncoder<float> enc(ec, od.config.feature_dim);
  const int from = ec.layers - cfg.training.tagging.tune_top;
  auto inputs = [&](const std::string& split) {
    std::vector<Mat<float>> xs(od.split(split).size());
    parallel_for(xs.size(), [&](std::size_t i) {
      const auto& f = od.split(split)[i].frames;
      xs[i] = from == 0 ? enc.embedded(f) : enc.encode(f, from);
    });
    return xs;
  };
  TaggingConfig tc = cfg.training.tagging;
  tc.seed = derive_seed(cfg.seed, kTaggerStream);
  auto m = pretrain_tagging_model(enc, inputs("train"), split_tags(od, "train"), inputs("val"), split_tags(od, "val"), tc);
  if (log)
    log("encoder pretraining: " + std::to_string(m.val_f1_history.size()) + " epochs, val macro-F1 " +
        fmt(m.val_f1_history.back(), 4));
  return m;
}

// ---- tokenizers ----

struct TrainedTokenizer {
  TokenizerPipeline<float> pipeline;
  nlohmann::ordered_json info;
  nlohmann::ordered_json log = nlohmann::ordered_json::array();  // training log entries
};

inline nlohmann::ordered_json log_json(const std::vector<TrainLogEntry>& log) {
  auto a = nlohmann::ordered_json::array();
  for (const auto& e : log)
    a.push_back({{"step", e.step}, {"loss", e.loss}, {"recon", e.recon}, {"commitment", e.commitment}, {"reseeded", e.reseeded}});
  return a;
}

inline Mat<float> stack_rows(const std::vector<Mat<float>>& xs) {
  long rows = 0;
  for (const auto& x : xs) rows += x.rows();
  Mat<float> out(rows, xs.front().cols());
  long r = 0;
  for (const auto& x : xs) {
    out.middleRows(r, x.rows()) = x;
    r += x.rows();
  }
  return out;
}

// Trains one tokenizer on the out-of-domain corpus. `odf` must hold the
// features at feature_layer(spec) for the train and val splits.
inline TrainedTokenizer train_tokenizer(const TokenizerSpec& spec, const ExperimentConfig& cfg,
                                        const TaggingModel<float>& tagger, const synth::Corpus& od,
                                        const LayerFeatures& odf, const Logger& log = {}) {
  if (!spec.kind) throw ConfigError("tokenizer kind \"none\" has nothing to train");
  const int layer = feature_layer(spec);
  const auto& train = odf.at(layer).at("train");
  const auto& val = odf.at(layer).at("val");
  const std::uint64_t salt = static_cast<std::uint64_t>(spec.K) * 1000003ULL + static_cast<std::uint64_t>(layer) * 101ULL +
                             static_cast<std::uint64_t>(spec.n_layers);
  TrainedTokenizer out;
  out.info["kind"] = to_string(*spec.kind);
  out.info["K"] = spec.K;
  out.info["n_layers"] = *spec.kind == TokenizerKind::kKMeans ? 1 : spec.n_layers;
  out.info["layer"] = layer;
  const std::optional<synth::FrozenEncoder<float>> enc(tagger.encoder);
  switch (*spec.kind) {
    case TokenizerKind::kKMeans: {
      const auto km = quant::kmeans_fit(stack_rows(train), spec.K, cfg.training.kmeans_iters,
                                        derive_seed(cfg.seed, kKMeansStream, salt));
      out.pipeline = kmeans_tokenizer<float>(km, layer, enc);
      out.info["inertia"] = km.inertia_history.back();
      out.info["iterations"] = km.iterations;
      for (std::size_t i = 0; i < km.inertia_history.size(); ++i)
        out.log.push_back({{"iteration", i + 1}, {"inertia", km.inertia_history[i]}});
      break;
    }
    case TokenizerKind::kRepCodec:
    case TokenizerKind::kAcousticProxy: {
      RepCodecConfig rc = cfg.training.repcodec;
      rc.codebook_size = spec.K;
      rc.n_layers = spec.n_layers;
      rc.seed = derive_seed(cfg.seed, kRepCodecStream, salt);
      auto m = train_repcodec(train, rc);
      m.source_layer = layer;
      if (*spec.kind == TokenizerKind::kAcousticProxy) m.source = "acoustic-proxy";
      double mse = 0;
      for (const auto& x : val) mse += reconstruct(m, x).mse;
      out.info["val_mse"] = mse / static_cast<double>(val.size());
      out.log = log_json(m.log);
      out.pipeline = repcodec_tokenizer<float>(m, enc);
      break;
    }
    case TokenizerKind::kSupTok: {
      SupTokConfig sc = cfg.training.suptok;
      sc.split = spec.split;
      sc.codebook_size = spec.K;
      sc.n_layers = spec.n_layers;
      sc.seed = derive_seed(cfg.seed, kSupTokStream, salt);
      const auto tags = split_tags(od, "train");
      for (const auto& t : tags)
        if (t.empty()) throw DataError("supervised tokenizer needs tagged clips");
      const auto m = train_supervised_tokenizer(tagger, train, tags, sc);
      const auto val_tags = split_tags(od, "val");
      Mat<double> probs(static_cast<long>(val.size()), tagger.num_classes), labels = probs;
      for (std::size_t i = 0; i < val.size(); ++i) {
        probs.row(static_cast<long>(i)) = m.predict(val[i]).cast<double>();
        labels.row(static_cast<long>(i)) = tag_row<double>(val_tags[i]);
      }
      out.info["bottleneck_f1"] = metrics::macro_f1(probs, labels);
      out.log = log_json(m.log);
      out.pipeline = export_tokenizer(m);
      break;
    }
  }
  std::vector<std::uint32_t> first;
  for (const auto& x : val) {
    const auto ts = out.pipeline.tokenize_features(x);
    first.insert(first.end(), ts.indices[0].begin(), ts.indices[0].end());
  }
  const auto st = quant::codebook_stats(first, static_cast<std::uint32_t>(spec.K));
  out.info["utilization"] = st.utilization;
  out.info["perplexity"] = st.perplexity;
  if (log) log("tokenizer " + to_string(*spec.kind) + ": " + out.info.dump());
  return out;
}

// Captioner inputs: detokenized tokens, or the raw features themselves.
inline SplitSeqs system_inputs(const TokenizerSpec& spec, const TokenizerPipeline<float>* tok, const LayerFeatures& f) {
  const SplitSeqs& src = f.at(feature_layer(spec));
  if (!tok) return src;
  SplitSeqs out;
  for (const auto& [split, xs] : src) {
    auto& dst = out[split];
    dst.resize(xs.size());
    parallel_for(xs.size(), [&](std::size_t i) { dst[i] = tok->detokenize(tok->tokenize_features(xs[i])); });
  }
  return out;
}

// ---- captioning ----

struct CaptionData {
  std::vector<caption::CaptionExample<float>> train, val, test;
};

inline CaptionData caption_data(const synth::Corpus& id, const SplitSeqs& inputs) {
  CaptionData d;
  auto fill = [&](const std::string& split, std::vector<caption::CaptionExample<float>>& out) {
    const auto& clips = id.split(split);
    const auto& xs = inputs.at(split);
    for (std::size_t i = 0; i < clips.size(); ++i) out.push_back({clips[i].id, xs[i], clips[i].captions});
  };
  fill("train", d.train);
  fill("val", d.val);
  fill("test", d.test);
  return d;
}

inline text::Vocab caption_vocab(const synth::Corpus& id) {
  std::vector<std::string> caps;
  for (const auto& c : id.split("train"))
    for (const auto& s : c.captions) caps.push_back(s);
  return text::Vocab::build(caps);
}

struct CaptionScore {
  double cider_d = 0;
  std::size_t n_words = 0;
  std::vector<caption::CaptionOutput> outputs;
  caption::TrainHistory history;
};

inline std::vector<std::vector<std::string>> references(const std::vector<caption::CaptionExample<float>>& data) {
  std::vector<std::vector<std::string>> refs;
  for (const auto& ex : data) refs.push_back(ex.captions);
  return refs;
}

inline CaptionScore score_outputs(const std::vector<caption::CaptionOutput>& outs,
                                  const std::vector<std::vector<std::string>>& refs) {
  CaptionScore s;
  std::vector<std::string> cands;
  for (const auto& o : outs) cands.push_back(o.caption);
  s.cider_d = metrics::cider_d(cands, refs).corpus;
  s.n_words = metrics::unique_words(cands);
  s.outputs = outs;
  return s;
}

// Builds, trains and (for the prefix kind) LM-pretrains a captioner on `data`.
inline CaptionerBundle train_captioner_bundle(const ExperimentConfig& cfg, const text::Vocab& vocab, const CaptionData& data,
                                              caption::TrainHistory* history = nullptr, const Logger& log = {}) {
  if (data.train.empty()) throw DataError("no captioning training clips");
  caption::CaptionerConfig cc = cfg.captioner;
  cc.input_dim = data.train.front().input.cols();
  cc.seed = derive_seed(cfg.seed, kCaptionerStream);
  CaptionerBundle b;
  b.vocab = vocab;
  b.model = make_captioner(cc, vocab.size(), derive_seed(cfg.seed, kLmStream));
  caption::CaptionTrainConfig tc = cfg.training.captioner;
  tc.seed = derive_seed(cfg.seed, kCaptionerStream, 1);
  if (auto* prefix = dynamic_cast<caption::PrefixCaptioner<float>*>(b.model.get())) {
    std::vector<std::string> caps;
    for (const auto& ex : data.train)
      for (const auto& c : ex.captions) caps.push_back(c);
    const auto losses = caption::pretrain_lm(prefix->lm(), vocab, caps, tc);
    if (log) log("language model pretraining: final loss " + fmt(losses.back(), 4));
  }
  auto on_epoch = [&](int epoch, double train_loss, double val_loss) {
    if (log) log("epoch " + std::to_string(epoch) + " train " + fmt(train_loss, 4) + " val " + fmt(val_loss, 4));
  };
  auto h = caption::train_captioner<float>(*b.model, vocab, data.train, data.val, tc, on_epoch);
  if (history) *history = std::move(h);
  return b;
}

inline CaptionScore train_and_score(const ExperimentConfig& cfg, const text::Vocab& vocab, const CaptionData& data,
                                    const Logger& log = {}) {
  caption::TrainHistory h;
  auto b = train_captioner_bundle(cfg, vocab, data, &h, log);
  auto s = score_outputs(caption::generate_captions<float>(*b.model, vocab, data.test, cfg.beam), references(data.test));
  s.history = std::move(h);
  return s;
}

// ---- system comparison ----

struct SystemPlan {
  std::string name;
  TokenizerSpec spec;
  bool caption = true;
  bool probe = true;
};

// Rows of the comparison report: raw-frame and continuous baselines, the
// semantic tokenizers in one- and two-codebook form, and the acoustic proxy.
inline std::vector<SystemPlan> default_systems(const ExperimentConfig& cfg) {
  const TokenizerSpec base = cfg.tokenizer;
  auto with = [&](std::optional<TokenizerKind> kind, int n_layers, int layer) {
    TokenizerSpec s = base;
    s.kind = kind;
    s.n_layers = n_layers;
    s.layer = layer;
    return s;
  };
  const int L = base.layer;
  return {{"fbank", with(std::nullopt, 1, 0)},
          {"continuous", with(std::nullopt, 1, L)},
          {"kmeans", with(TokenizerKind::kKMeans, 1, L)},
          {"repcodec-vq", with(TokenizerKind::kRepCodec, 1, L)},
          {"repcodec-rvq", with(TokenizerKind::kRepCodec, 2, L)},
          {"suptok-vq", with(TokenizerKind::kSupTok, 1, L)},
          {"suptok-rvq", with(TokenizerKind::kSupTok, 2, L)},
          {"acoustic-proxy", with(TokenizerKind::kAcousticProxy, 1, 0)}};
}

struct SystemResult {
  SystemPlan plan;
  double cider_d = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_words = 0;
  double probe_f1 = std::numeric_limits<double>::quiet_NaN();
  nlohmann::ordered_json tokenizer_info;
  std::vector<caption::CaptionOutput> captions;
};

inline std::vector<SystemResult> run_systems(const ExperimentConfig& cfg, const TaggingModel<float>& tagger,
                                             const Corpora& corpora, const std::vector<SystemPlan>& plans,
                                             const Logger& log = {}) {
  std::set<int> layers;
  for (const auto& p : plans) layers.insert(feature_layer(p.spec));
  const auto idf = extract_features(tagger.encoder, corpora.id, layers);
  const auto odf = extract_features(tagger.encoder, corpora.od, layers);
  const auto vocab = caption_vocab(corpora.id);
  const auto train_tags = split_tags(corpora.id, "train"), test_tags = split_tags(corpora.id, "test");
  std::vector<SystemResult> rows;
  for (const auto& plan : plans) {
    if (log) log("system " + plan.name);
    SystemResult r;
    r.plan = plan;
    std::optional<TrainedTokenizer> tok;
    if (plan.spec.kind) {
      tok = train_tokenizer(plan.spec, cfg, tagger, corpora.od, odf, log);
      r.tokenizer_info = tok->info;
    }
    const SplitSeqs inputs = system_inputs(plan.spec, tok ? &tok->pipeline : nullptr, idf);
    if (plan.probe) {
      ProbeConfig pc = cfg.training.probe;
      pc.seed = derive_seed(cfg.seed, kProbeStream);
      r.probe_f1 = linear_probe_f1(inputs.at("train"), train_tags, inputs.at("test"), test_tags, pc);
    }
    if (plan.caption) {
      const auto s = train_and_score(cfg, vocab, caption_data(corpora.id, inputs));
      r.cider_d = s.cider_d;
      r.n_words = s.n_words;
      r.captions = s.outputs;
    }
    if (log) log("  cider_d " + fmt(r.cider_d, 4) + "  probe_f1 " + fmt(r.probe_f1, 4));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::string comparison_csv(const std::vector<SystemResult>& rows) {
  std::ostringstream out;
  out << "system,tokenizer,layer,K,n_layers,cider_d,n_words,probe_f1,val_mse,bottleneck_f1\n";
  for (const auto& r : rows) {
    const auto& s = r.plan.spec;
    const bool tok = s.kind.has_value();
    auto info = [&](const char* k) { return r.tokenizer_info.contains(k) ? fmt(r.tokenizer_info[k].get<double>()) : ""; };
    out << r.plan.name << ',' << spec_kind_name(s) << ',' << feature_layer(s) << ',' << (tok ? std::to_string(s.K) : "")
        << ',' << (tok ? std::to_string(s.n_layers) : "") << ',' << fmt(r.cider_d) << ','
        << (std::isfinite(r.cider_d) ? std::to_string(r.n_words) : "") << ',' << fmt(r.probe_f1) << ','
        << info("val_mse") << ',' << info("bottleneck_f1") << '\n';
  }
  return out.str();
}

// ---- layer x K sweep ----

struct SweepCell {
  int layer = 0;
  long K = 0;
  double cider_d = 0;
  std::size_t n_words = 0;
};

// One k-means tokenizer and captioner per (layer, K) cell. Cells run on up to
// `threads` workers; each cell derives its own seeds, so the result does not
// depend on scheduling.
inline std::vector<SweepCell> run_sweep(const ExperimentConfig& cfg, const TaggingModel<float>& tagger,
                                        const Corpora& corpora, const std::vector<int>& layers,
                                        const std::vector<long>& ks, int threads = thread_count(),
                                        const Logger& log = {}) {
  if (layers.empty() || ks.empty()) throw ConfigError("sweep grid is empty");
  for (int l : layers)
    if (l < 1 || l > tagger.num_layers())
      throw ConfigError("sweep layer " + std::to_string(l) + " outside [1, " + std::to_string(tagger.num_layers()) + "]");
  for (long k : ks)
    if (k < 1) throw ConfigError("sweep K must be >= 1");
  const std::set<int> layer_set(layers.begin(), layers.end());
  const auto idf = extract_features(tagger.encoder, corpora.id, layer_set);
  const auto odf = extract_features(tagger.encoder, corpora.od, layer_set);
  const auto vocab = caption_vocab(corpora.id);
  std::vector<SweepCell> cells;
  for (int l : layers)
    for (long k : ks) cells.push_back({l, k, 0, 0});
  parallel_for(
      cells.size(),
      [&](std::size_t i) {
        TokenizerSpec spec;
        spec.kind = TokenizerKind::kKMeans;
        spec.layer = cells[i].layer;
        spec.K = cells[i].K;
        const auto tok = train_tokenizer(spec, cfg, tagger, corpora.od, odf);
        const auto s = train_and_score(cfg, vocab, caption_data(corpora.id, system_inputs(spec, &tok.pipeline, idf)));
        cells[i].cider_d = s.cider_d;
        cells[i].n_words = s.n_words;
        if (log) log("sweep layer " + std::to_string(cells[i].layer) + " K " + std::to_string(cells[i].K) + ": cider_d " + fmt(s.cider_d, 4));
      },
      threads);
  return cells;
}

inline std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::ostringstream out;
  out << "layer,K,cider_d,n_words\n";
  for (const auto& c : cells) out << c.layer << ',' << c.K << ',' << fmt(c.cider_d) << ',' << c.n_words << '\n';
  return out.str();
}

// Heatmap with layers on the x axis and K on the y axis, shaded by CIDEr-D.
inline std::string sweep_svg(const std::vector<SweepCell>& cells) {
  std::vector<int> layers;
  std::vector<long> ks;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& c : cells) {
    if (std::find(layers.begin(), layers.end(), c.layer) == layers.end()) layers.push_back(c.layer);
    if (std::find(ks.begin(), ks.end(), c.K) == ks.end()) ks.push_back(c.K);
    lo = std::min(lo, c.cider_d);
    hi = std::max(hi, c.cider_d);
  }
  const int cw = 90, ch = 50, left = 70, top = 40;
  const int w = left + cw * static_cast<int>(layers.size()) + 20, h = top + ch * static_cast<int>(ks.size()) + 50;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<text x=\"" << left << "\" y=\"20\">CIDEr-D by encoder layer and K</text>\n";
  for (const auto& c : cells) {
    const long xi = std::find(layers.begin(), layers.end(), c.layer) - layers.begin();
    const long yi = std::find(ks.begin(), ks.end(), c.K) - ks.begin();
    const double u = hi > lo ? (c.cider_d - lo) / (hi - lo) : 0.5;
    const int shade = static_cast<int>(std::lround(235 - 180 * u));
    const int x = left + cw * static_cast<int>(xi), y = top + ch * static_cast<int>(yi);
    s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cw << "\" height=\"" << ch << "\" fill=\"rgb(" << shade
      << ',' << shade << ",255)\" stroke=\"white\"/>\n";
    s << "<text x=\"" << x + cw / 2 << "\" y=\"" << y + ch / 2 + 4 << "\" text-anchor=\"middle\">" << fmt(c.cider_d, 3)
      << "</text>\n";
  }
  for (std::size_t i = 0; i < layers.size(); ++i)
    s << "<text x=\"" << left + cw * static_cast<int>(i) + cw / 2 << "\" y=\"" << top + ch * static_cast<int>(ks.size()) + 18
      << "\" text-anchor=\"middle\">layer " << layers[i] << "</text>\n";
  for (std::size_t i = 0; i < ks.size(); ++i)
    s << "<text x=\"" << left - 8 << "\" y=\"" << top + ch * static_cast<int>(i) + ch / 2 + 4
      << "\" text-anchor=\"end\">K=" << ks[i] << "</text>\n";
  s << "</svg>\n";
  return s.str();
}

}  // namespace toktide::pipeline
