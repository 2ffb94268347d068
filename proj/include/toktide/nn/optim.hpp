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
#include <unordered_map>

#include "toktide/nn/tensor.hpp"

namespace toktide::nn {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// AdamW with decoupled weight decay: the decay term scales the weights
// directly and never enters the moment estimates. Frozen parameters are
// skipped entirely.
template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  long step_count() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }

  void step(const ParamList<T>& params) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (Parameter<T>* p : params) {
      if (!p->trainable) continue;
      auto& st = state_[p];
      if (st.m.size() == 0) {
        st.m = Mat<T>::Zero(p->value.rows(), p->value.cols());
        st.v = Mat<T>::Zero(p->value.rows(), p->value.cols());
      }
      const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
      st.m = b1 * st.m + (T(1) - b1) * p->grad;
      st.v = b2 * st.v + (T(1) - b2) * p->grad.cwiseProduct(p->grad);
      if (cfg_.weight_decay != 0.0) p->value *= static_cast<T>(1.0 - cfg_.lr * cfg_.weight_decay);
      const T step_size = static_cast<T>(cfg_.lr / bc1);
      const T inv_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
      const T eps = static_cast<T>(cfg_.eps);
      p->value.array() -= step_size * st.m.array() / (st.v.array().sqrt() * inv_bc2 + eps);
    }
  }

  // Moment arrays for a parameter (empty before its first update).
  std::pair<const Mat<T>*, const Mat<T>*> moments(const Parameter<T>* p) const {
    auto it = state_.find(p);
    if (it == state_.end()) return {nullptr, nullptr};
    return {&it->second.m, &it->second.v};
  }

 private:
  struct State {
    Mat<T> m, v;
  };
  AdamWConfig cfg_;
  long step_ = 0;
  std::unordered_map<const Parameter<T>*, State> state_;
};

template <class T>
double grad_norm(const ParamList<T>& params) {
  double s = 0;
  for (auto* p : params)
    if (p->trainable) s += static_cast<double>(p->grad.squaredNorm());
  return std::sqrt(s);
}

template <class T>
void clip_grad_norm(const ParamList<T>& params, double max_norm) {
  const double n = grad_norm(params);
  if (n <= max_norm || n == 0.0) return;
  const T f = static_cast<T>(max_norm / n);
  for (auto* p : params)
    if (p->trainable) p->grad *= f;
}

}  // namespace toktide::nn
