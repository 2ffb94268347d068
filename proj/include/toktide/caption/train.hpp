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
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "toktide/caption/model.hpp"
#include "toktide/nn/optim.hpp"
#include "toktide/parallel.hpp"

namespace toktide::caption {

template <class T>
struct CaptionExample {
  std::string id;
  Mat<T> input;  // T x D: frames, continuous features or detokenized tokens
  std::vector<std::string> captions;
};

struct CaptionTrainConfig {
  int epochs = 30;
  int batch = 8;
  double lr = 3e-4;
  double weight_decay = 3e-4;
  std::uint64_t seed = 1;
};

struct TrainHistory {
  std::vector<double> train_loss;  // per epoch, mean over batches
  std::vector<double> val_loss;    // per epoch, mean over every reference caption
  double first_batch_loss = 0;
};

template <class T>
double validation_loss(Captioner<T>& model, const text::Vocab& vocab, const std::vector<CaptionExample<T>>& data) {
  std::vector<double> per(data.size(), 0.0);
  parallel_for(data.size(), [&](std::size_t i) {
    double s = 0;
    for (const auto& c : data[i].captions) {
      Tape<T> t(false);
      s += static_cast<double>(t.scalar(model.loss(t, data[i].input, vocab.encode_wrapped(c))));
    }
    per[i] = s / static_cast<double>(data[i].captions.size());
  });
  return per.empty() ? 0.0 : std::accumulate(per.begin(), per.end(), 0.0) / static_cast<double>(per.size());
}

// AdamW with a learning rate decaying linearly to 0 over all steps. Each epoch
// visits every clip once with one of its captions drawn uniformly.
template <class T>
TrainHistory train_captioner(Captioner<T>& model, const text::Vocab& vocab, const std::vector<CaptionExample<T>>& train,
                             const std::vector<CaptionExample<T>>& val, const CaptionTrainConfig& cfg,
                             const std::function<void(int, double, double)>& on_epoch = {}) {
  if (train.empty()) throw DataError("train_captioner: no training clips");
  if (cfg.batch < 1 || cfg.epochs < 1) throw ConfigError("train_captioner: epochs and batch must be >= 1");
  Rng rng(cfg.seed);
  ParamList<T> params = model.trainable_params();
  nn::AdamW<T> opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batches = (train.size() + static_cast<std::size_t>(cfg.batch) - 1) / static_cast<std::size_t>(cfg.batch);
  const double total_steps = static_cast<double>(batches) * cfg.epochs;
  TrainHistory hist;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      zero_grads(params);
      const T scale = T(1) / static_cast<T>(end - start);
      double batch_loss = 0;
      for (std::size_t i = start; i < end; ++i) {
        const auto& ex = train[order[i]];
        std::uniform_int_distribution<std::size_t> pick(0, ex.captions.size() - 1);
        const auto ids = vocab.encode_wrapped(ex.captions[pick(rng)]);
        Tape<T> t;
        Var loss = model.loss(t, ex.input, ids);
        const double lv = static_cast<double>(t.scalar(loss));
        if (!std::isfinite(lv))
          throw NumericalError("captioner: non-finite loss at epoch " + std::to_string(epoch + 1) + ", clip " + ex.id);
        batch_loss += lv;
        t.backward(loss, scale);
      }
      batch_loss /= static_cast<double>(end - start);
      if (step == 0) hist.first_batch_loss = batch_loss;
      epoch_loss += batch_loss;
      opt.set_lr(cfg.lr * (1.0 - static_cast<double>(step) / total_steps));
      opt.step(params);
      model.check_invariants();
      ++step;
    }
    hist.train_loss.push_back(epoch_loss / static_cast<double>(batches));
    hist.val_loss.push_back(val.empty() ? 0.0 : validation_loss(model, vocab, val));
    if (on_epoch) on_epoch(epoch + 1, hist.train_loss.back(), hist.val_loss.back());
  }
  return hist;
}

// Language-model pretraining on caption text, then every LM weight is frozen.
template <class T>
std::vector<double> pretrain_lm(FrozenLm<T>& lm, const text::Vocab& vocab, const std::vector<std::string>& captions,
                                const CaptionTrainConfig& cfg) {
  if (captions.empty()) throw DataError("pretrain_lm: no captions");
  Rng rng(cfg.seed);
  ParamList<T> params = lm.params();
  set_trainable(params, true);
  nn::AdamW<T> opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::vector<std::size_t> order(captions.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> losses;
  const std::size_t batches = (captions.size() + static_cast<std::size_t>(cfg.batch) - 1) / static_cast<std::size_t>(cfg.batch);
  const double total_steps = static_cast<double>(batches) * cfg.epochs;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      zero_grads(params);
      const T scale = T(1) / static_cast<T>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto ids = vocab.encode_wrapped(captions[order[i]]);
        const std::vector<int> in(ids.begin(), ids.end() - 1), target(ids.begin() + 1, ids.end());
        Tape<T> t;
        Var loss = ops::cross_entropy(t, lm.forward(t, std::nullopt, in), target);
        const double lv = static_cast<double>(t.scalar(loss));
        if (!std::isfinite(lv)) throw NumericalError("lm pretraining: non-finite loss");
        epoch_loss += lv;
        t.backward(loss, scale);
      }
      opt.set_lr(cfg.lr * (1.0 - static_cast<double>(step) / total_steps));
      opt.step(params);
      ++step;
    }
    losses.push_back(epoch_loss / static_cast<double>(captions.size()));
  }
  set_trainable(params, false);
  zero_grads(params);
  return losses;
}

struct CaptionOutput {
  std::string clip_id;
  std::string caption;
  double log_prob = 0;
};

// Beam-search captions for every input; clips are decoded in parallel.
template <class T>
std::vector<CaptionOutput> generate_captions(Captioner<T>& model, const text::Vocab& vocab,
                                             const std::vector<CaptionExample<T>>& data, int beam_size,
                                             int max_len = kDefaultMaxLen) {
  std::vector<CaptionOutput> out(data.size());
  parallel_for(data.size(), [&](std::size_t i) {
    const auto res = beam_search(model.decoder(data[i].input), text::Vocab::kEos, beam_size, max_len);
    out[i] = {data[i].id, vocab.decode(res.best.tokens), res.best.log_prob};
  });
  return out;
}

}  // namespace toktide::caption
