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
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "toktide/metrics.hpp"
#include "toktide/tokenizer.hpp"

namespace toktide {

// Literal summed binary cross-entropy over N x S probabilities, with clamping
// at 1e-7 so the logs stay finite.
template <class T>
double bce_loss(const Mat<T>& probs, const Mat<T>& labels) {
  if (probs.rows() != labels.rows() || probs.cols() != labels.cols())
    throw ShapeError("bce_loss: probs " + shape_str(probs.rows(), probs.cols()) + " vs labels " +
                     shape_str(labels.rows(), labels.cols()));
  double loss = 0;
  for (long i = 0; i < probs.size(); ++i) {
    const double raw = static_cast<double>(probs.data()[i]);
    const double l = static_cast<double>(labels.data()[i]);
    if (std::isnan(raw) || std::isnan(l)) throw NumericalError("bce_loss: NaN input");
    const double p = std::clamp(raw, ops::kProbClamp, 1.0 - ops::kProbClamp);
    loss -= l * std::log(p) + (1.0 - l) * std::log(1.0 - p);
  }
  return loss;
}

template <class T>
Mat<T> tag_row(const std::vector<int>& tags) {
  Mat<T> m(1, static_cast<long>(tags.size()));
  for (std::size_t i = 0; i < tags.size(); ++i) m(0, static_cast<long>(i)) = static_cast<T>(tags[i]);
  return m;
}

struct TaggingConfig {
  int max_epochs = 60;
  int min_epochs = 5;
  int batch = 16;
  double lr = 3e-3;
  double f1_floor = 0.9;
  int tune_top = 12;  // top encoder layers trained together with the head (L = whole encoder)
  std::uint64_t seed = 1;
};

// Frozen feature encoder + clip-level tag head (mean over frames, linear,
// sigmoid).
template <class T>
struct TaggingModel {
  synth::FrozenEncoder<T> encoder;
  nn::Linear<T> head;
  int num_classes = 0;
  int tuned_from = 0;  // 0-based first block trained during pretraining (== L when head-only)
  std::vector<double> val_f1_history;

  int num_layers() const { return encoder.num_layers(); }

  // Runs layers after `after_layer` (1-based count of layers already applied)
  // and the head.
  Var logits_from(Tape<T>& t, Var h, int after_layer) {
    Var x = encoder.run_blocks(t, h, after_layer, num_layers());
    return head(t, ops::mean_rows(t, x));
  }

  Var probs_from(Tape<T>& t, Var h, int after_layer) { return ops::sigmoid(t, logits_from(t, h, after_layer)); }

  Mat<T> predict_from(const Mat<T>& h, int after_layer) const {
    Tape<T> t(false);
    auto& self = const_cast<TaggingModel&>(*this);
    return t.value(self.probs_from(t, t.constant(h), after_layer));
  }

  Mat<T> predict(const Mat<T>& frames) const {
    return predict_from(tuned_from == 0 ? encoder.embedded(frames) : encoder.encode(frames, tuned_from), tuned_from);
  }

  // Parameters of layers after `split` plus the head.
  ParamList<T> upper_params(int split) {
    ParamList<T> ps;
    for (int l = split; l < num_layers(); ++l) const_cast<nn::TransformerBlock<T>&>(encoder.blocks()[static_cast<std::size_t>(l)]).collect(ps);
    head.collect(ps);
    return ps;
  }

  ParamList<T> params() {
    ParamList<T> ps = encoder.params();
    head.collect(ps);
    return ps;
  }
};

struct LabeledFeatures {
  const std::vector<Mat<float>>* features = nullptr;
  const std::vector<std::vector<int>>* tags = nullptr;
};

// Trains the head (and optionally the top `tune_top` layers) with batch-mean
// binary cross-entropy until validation macro-F1 reaches the floor, then
// freezes everything. `train_features`/`val_features` hold encoder outputs
// at layer L - tune_top (the input embedding when tune_top == L).
template <class T>
TaggingModel<T> pretrain_tagging_model(const synth::FrozenEncoder<T>& encoder, const std::vector<Mat<T>>& train_features,
                                       const std::vector<std::vector<int>>& train_tags,
                                       const std::vector<Mat<T>>& val_features,
                                       const std::vector<std::vector<int>>& val_tags, const TaggingConfig& cfg) {
  if (train_features.empty() || train_tags.size() != train_features.size())
    throw DataError("pretrain_tagging_model: need tagged training features");
  if (val_features.empty() || val_tags.size() != val_features.size())
    throw DataError("pretrain_tagging_model: need tagged validation features");
  const int s = static_cast<int>(train_tags.front().size());
  if (s < 1) throw DataError("pretrain_tagging_model: corpus has no tags");
  if (cfg.tune_top < 0 || cfg.tune_top > encoder.num_layers()) throw ConfigError("tune_top out of range");
  Rng rng(cfg.seed);
  TaggingModel<T> m;
  m.encoder = encoder;
  m.num_classes = s;
  m.tuned_from = encoder.num_layers() - cfg.tune_top;
  m.head = nn::Linear<T>("tagger.head", encoder.dim(), s, rng);
  const int after = m.tuned_from;
  set_trainable(m.params(), false);
  ParamList<T> trainable = m.upper_params(after);
  set_trainable(trainable, true);

  nn::AdamW<T> opt({cfg.lr, 0.9, 0.999, 1e-8, 0.0});
  std::vector<std::size_t> order(train_features.size());
  std::iota(order.begin(), order.end(), 0);
  auto val_f1 = [&] {
    Mat<double> probs(static_cast<long>(val_features.size()), s), labels(static_cast<long>(val_features.size()), s);
    for (std::size_t i = 0; i < val_features.size(); ++i) {
      probs.row(static_cast<long>(i)) = m.predict_from(val_features[i], after).template cast<double>();
      labels.row(static_cast<long>(i)) = tag_row<double>(val_tags[i]);
    }
    return metrics::macro_f1(probs, labels);
  };
  double f1 = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      zero_grads(trainable);
      const T scale = T(1) / static_cast<T>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        Tape<T> t;
        Var logits = m.logits_from(t, t.constant(train_features[order[i]]), after);
        Var loss = ops::bce_with_logits(t, logits, tag_row<T>(train_tags[order[i]]));
        if (!std::isfinite(static_cast<double>(t.scalar(loss))))
          throw NumericalError("tagging: non-finite loss in epoch " + std::to_string(epoch));
        t.backward(loss, scale);
      }
      opt.step(trainable);
    }
    f1 = val_f1();
    m.val_f1_history.push_back(f1);
    if (f1 >= cfg.f1_floor && epoch + 1 >= cfg.min_epochs) break;
  }
  if (f1 < cfg.f1_floor)
    throw NumericalError("tagging model reached macro-F1 " + std::to_string(f1) + " below floor " +
                         std::to_string(cfg.f1_floor));
  set_trainable(m.params(), false);
  return m;
}

struct SupTokConfig {
  int split = 9;
  long codebook_size = 64;
  int n_layers = 1;
  int steps = 800;
  int batch = 8;
  double lr = 3e-4;
  double beta = kCommitmentBeta;
  int log_every = 25;
  long init_pool = 4096;
  std::uint64_t seed = 1;
};

// Encoder1 = tagger layers 1..split (frozen), vq module in between (trainable
// conv encoder/decoder, EMA codebooks), Encoder2 = tagger layers split+1..L
// and the tag head (frozen).
template <class T>
struct SupTokModel {
  TaggingModel<T> tagger;
  int split = 9;
  VqModule<T> vq;
  std::vector<TrainLogEntry> log;

  struct Pass {
    VqPass<T> vq;
    Var logits;
    Var probs;
  };

  Pass forward(Tape<T>& t, const Mat<T>& encoder1_out, const FrozenQuantization<T>* frozen = nullptr) {
    Pass p;
    p.vq = vq.forward(t, t.constant(encoder1_out), frozen);
    p.logits = tagger.logits_from(t, p.vq.recon, split);
    p.probs = ops::sigmoid(t, p.logits);
    return p;
  }

  // Tag probabilities through the quantized bottleneck.
  Mat<T> predict(const Mat<T>& encoder1_out) const {
    Tape<T> t(false);
    auto& self = const_cast<SupTokModel&>(*this);
    return t.value(self.forward(t, encoder1_out).probs);
  }

  Mat<T> encoder1(const Mat<T>& frames) const { return tagger.encoder.encode(frames, split); }

  ParamList<T> frozen_params() { return tagger.params(); }
};

// Encoder1 / Encoder2 must never receive gradient.
template <class T>
void assert_frozen_untouched(const ParamList<T>& frozen) {
  for (const auto* p : frozen)
    if (p->trainable || p->grad.squaredNorm() != T(0))
      throw std::logic_error("gradient reached frozen encoder parameter " + p->name);
}

template <class T>
SupTokModel<T> train_supervised_tokenizer(const TaggingModel<T>& tagger, const std::vector<Mat<T>>& encoder1_features,
                                          const std::vector<std::vector<int>>& tags, const SupTokConfig& cfg,
                                          const std::function<void(const TrainLogEntry&)>& on_log = {}) {
  if (cfg.split < 1 || cfg.split >= tagger.num_layers())
    throw ConfigError("split must be in [1, " + std::to_string(tagger.num_layers() - 1) + "], got " +
                      std::to_string(cfg.split));
  if (encoder1_features.empty() || tags.size() != encoder1_features.size())
    throw DataError("supervised tokenizer needs tagged clips");
  if (static_cast<int>(tags.front().size()) != tagger.num_classes)
    throw DataError("tag width does not match the tagging model's class count");
  Rng rng(cfg.seed);
  SupTokModel<T> m;
  m.tagger = tagger;
  m.split = cfg.split;
  const long dim = encoder1_features.front().cols();
  m.vq = VqModule<T>("suptok.vq", dim, cfg.codebook_size, cfg.n_layers, rng);
  m.vq.init_codebooks(latent_pool(m.vq, encoder1_features, cfg.init_pool, rng), rng);
  ParamList<T> frozen = m.frozen_params();
  set_trainable(frozen, false);
  zero_grads(frozen);
  ParamList<T> params = m.vq.params();
  nn::AdamW<T> opt({cfg.lr, 0.9, 0.999, 1e-8, 0.0});
  std::uniform_int_distribution<std::size_t> pick(0, encoder1_features.size() - 1);
  const T inv_batch = T(1) / static_cast<T>(cfg.batch);
  for (int step = 0; step < cfg.steps; ++step) {
    zero_grads(params);
    CodebookBatch<T> cbatch(m.vq.codebooks.size());
    TrainLogEntry e{step, 0, 0, 0, 0};
    for (int b = 0; b < cfg.batch; ++b) {
      const std::size_t i = pick(rng);
      Tape<T> t;
      auto p = m.forward(t, encoder1_features[i]);
      Var bce = ops::bce_with_logits(t, p.logits, tag_row<T>(tags[i]));
      Var loss = ops::add(t, bce, ops::scale(t, p.vq.commitment, static_cast<T>(cfg.beta)));
      const double lv = static_cast<double>(t.scalar(loss));
      if (!std::isfinite(lv)) throw NumericalError("suptok: non-finite loss at step " + std::to_string(step));
      e.loss += lv / cfg.batch;
      e.recon += static_cast<double>(t.scalar(bce)) / cfg.batch;
      e.commitment += static_cast<double>(t.scalar(p.vq.commitment)) / cfg.batch;
      t.backward(loss, inv_batch);
      cbatch.add(p.vq.rvq);
    }
    assert_frozen_untouched(frozen);
    opt.step(params);
    e.reseeded = m.vq.update_codebooks(cbatch.stacked(), cbatch.assignments, rng);
    if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
      m.log.push_back(e);
      if (on_log) on_log(e);
    }
  }
  return m;
}

// Frames -> Encoder1 -> vq encoder -> quantizer. The decoder and Encoder2 are
// not part of the exported pipeline.
template <class T>
TokenizerPipeline<T> export_tokenizer(const SupTokModel<T>& m) {
  TokenizerPipeline<T> p;
  p.kind = TokenizerKind::kSupTok;
  p.source_layer = m.split;
  p.encoder = m.tagger.encoder.truncated(m.split);
  p.pre = m.vq.encoder;
  p.codebooks = m.vq.codebooks;
  return p;
}

}  // namespace toktide
