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

#include <vector>

#include "toktide/metrics.hpp"
#include "toktide/nn/layers.hpp"
#include "toktide/nn/optim.hpp"

namespace toktide {

struct ProbeConfig {
  int epochs = 300;
  double lr = 1e-2;
  std::uint64_t seed = 1;
};

// Logistic-regression tagger on mean-pooled sequences, trained full-batch on
// `train` and scored by macro-F1 on `test`.
template <class T>
double linear_probe_f1(const std::vector<Mat<T>>& train, const std::vector<std::vector<int>>& train_tags,
                       const std::vector<Mat<T>>& test, const std::vector<std::vector<int>>& test_tags,
                       const ProbeConfig& cfg = {}) {
  if (train.empty() || test.empty()) throw DataError("linear probe needs train and test sequences");
  auto pool = [](const std::vector<Mat<T>>& xs) {
    Mat<T> m(static_cast<long>(xs.size()), xs.front().cols());
    for (std::size_t i = 0; i < xs.size(); ++i) m.row(static_cast<long>(i)) = xs[i].colwise().mean();
    return m;
  };
  auto labels = [](const std::vector<std::vector<int>>& tags) {
    Mat<T> m(static_cast<long>(tags.size()), static_cast<long>(tags.front().size()));
    for (std::size_t i = 0; i < tags.size(); ++i)
      for (std::size_t c = 0; c < tags[i].size(); ++c) m(static_cast<long>(i), static_cast<long>(c)) = static_cast<T>(tags[i][c]);
    return m;
  };
  const Mat<T> xtr = pool(train), xte = pool(test), ytr = labels(train_tags), yte = labels(test_tags);
  // standardize with training statistics
  const RowVec<T> mu = xtr.colwise().mean();
  const RowVec<T> sd = ((xtr.rowwise() - mu).array().square().colwise().mean().sqrt() + T(1e-6)).matrix();
  auto standardize = [&](const Mat<T>& x) -> Mat<T> { return (x.rowwise() - mu).array().rowwise() / sd.array(); };
  const Mat<T> ztr = standardize(xtr), zte = standardize(xte);
  Rng rng(cfg.seed);
  nn::Linear<T> head("probe", ztr.cols(), ytr.cols(), rng);
  ParamList<T> ps;
  head.collect(ps);
  nn::AdamW<T> opt({cfg.lr, 0.9, 0.999, 1e-8, 0.0});
  for (int e = 0; e < cfg.epochs; ++e) {
    zero_grads(ps);
    Tape<T> t;
    Var loss = ops::bce_with_logits(t, head(t, t.constant(ztr)), ytr);
    t.backward(loss, T(1) / static_cast<T>(ztr.rows()));
    opt.step(ps);
  }
  Tape<T> t(false);
  const Mat<T> probs = t.value(ops::sigmoid(t, head(t, t.constant(zte))));
  return metrics::macro_f1(probs, yte);
}

}  // namespace toktide
