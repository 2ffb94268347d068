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
#include <random>

#include "toktide/nn/tape.hpp"

namespace toktide::nn {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  long checked = 0;
};

// Builds a fresh graph through `f` and returns its scalar loss node.
template <class T>
using ScalarFn = std::function<Var(Tape<T>&)>;

// Compares analytic gradients against central differences
// (f(p+eps) - f(p-eps)) / 2eps for every entry of every trainable parameter.
// With max_entries > 0 only that many randomly chosen entries per parameter
// are probed. Relative error is |a-n| / max(|a|, |n|, floor); the floor keeps
// structurally-zero gradients (e.g. attention key biases) from dividing noise by noise.
template <class T>
GradCheckResult grad_check(const ScalarFn<T>& f, const ParamList<T>& params, double eps = 1e-5,
                           long max_entries = 0, double floor = 1e-6, std::uint64_t seed = 7) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<T> tape;
    Var loss = f(tape);
    if (!std::isfinite(static_cast<double>(tape.scalar(loss)))) throw NumericalError("grad_check: non-finite loss");
    tape.backward(loss);
  }
  auto eval = [&]() {
    Tape<T> tape(false);
    const double v = static_cast<double>(tape.scalar(f(tape)));
    if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite loss at perturbed point");
    return v;
  };
  GradCheckResult res;
  Rng rng(seed);
  for (auto* p : params) {
    if (!p->trainable) continue;
    std::vector<long> idx(static_cast<std::size_t>(p->size()));
    for (long i = 0; i < p->size(); ++i) idx[static_cast<std::size_t>(i)] = i;
    if (max_entries > 0 && static_cast<long>(idx.size()) > max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(static_cast<std::size_t>(max_entries));
    }
    for (long i : idx) {
      T& x = p->value.data()[i];
      const T orig = x;
      x = orig + static_cast<T>(eps);
      const double fp = eval();
      x = orig - static_cast<T>(eps);
      const double fm = eval();
      x = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double analytic = static_cast<double>(p->grad.data()[i]);
      if (!std::isfinite(analytic)) throw NumericalError("grad_check: non-finite analytic gradient in " + p->name);
      const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = p->name;
      }
    }
  }
  return res;
}

}  // namespace toktide::nn
