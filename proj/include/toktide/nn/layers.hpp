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
#include <string>

#include "toktide/nn/ops.hpp"

namespace toktide::nn {

template <class T>
struct Linear {
  Parameter<T> w, b;

  Linear() = default;
  Linear(const std::string& name, long din, long dout, Rng& rng)
      : w(name + ".w", xavier_uniform<T>(din, dout, din, dout, rng)), b(name + ".b", Mat<T>::Zero(1, dout)) {}

  Var operator()(Tape<T>& t, Var x) { return ops::linear(t, x, t.param(w), t.param(b)); }
  void collect(ParamList<T>& out) { out.insert(out.end(), {&w, &b}); }
  long in_dim() const { return w.value.rows(); }
  long out_dim() const { return w.value.cols(); }
};

template <class T>
struct Conv1d {
  Parameter<T> w, b;
  long kernel = 1, stride = 1, pad = 0;

  Conv1d() = default;
  Conv1d(const std::string& name, long din, long dout, long k, long s, long p, Rng& rng)
      : w(name + ".w", xavier_uniform<T>(k * din, dout, k * din, dout, rng),
          {static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(din), static_cast<std::uint64_t>(dout)}),
        b(name + ".b", Mat<T>::Zero(1, dout)),
        kernel(k),
        stride(s),
        pad(p) {}

  Var operator()(Tape<T>& t, Var x) { return ops::conv1d(t, x, t.param(w), t.param(b), kernel, stride, pad); }
  void collect(ParamList<T>& out) { out.insert(out.end(), {&w, &b}); }
  long in_dim() const { return w.value.rows() / kernel; }
  long out_dim() const { return w.value.cols(); }
};

template <class T>
struct LayerNorm {
  Parameter<T> gamma, beta;

  LayerNorm() = default;
  LayerNorm(const std::string& name, long d)
      : gamma(name + ".gamma", Mat<T>::Ones(1, d)), beta(name + ".beta", Mat<T>::Zero(1, d)) {}

  Var operator()(Tape<T>& t, Var x) { return ops::layer_norm(t, x, t.param(gamma), t.param(beta)); }
  void collect(ParamList<T>& out) { out.insert(out.end(), {&gamma, &beta}); }
};

template <class T>
struct Embedding {
  Parameter<T> table;

  Embedding() = default;
  Embedding(const std::string& name, long n, long d, Rng& rng) : table(name + ".table", gaussian<T>(n, d, 0.02, rng)) {}

  Var operator()(Tape<T>& t, const std::vector<int>& ids) { return ops::embedding(t, t.param(table), ids); }
  void collect(ParamList<T>& out) { out.push_back(&table); }
};

template <class T>
struct MultiHeadAttention {
  Linear<T> wq, wk, wv, wo;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, long d, int h, Rng& rng)
      : wq(name + ".q", d, d, rng), wk(name + ".k", d, d, rng), wv(name + ".v", d, d, rng), wo(name + ".o", d, d, rng),
        heads(h) {
    if (h <= 0 || d % h != 0)
      throw ShapeError("attention width " + std::to_string(d) + " not divisible by " + std::to_string(h) + " heads");
  }

  Var operator()(Tape<T>& t, Var xq, Var xkv, bool causal) {
    Var q = wq(t, xq);
    Var k = wk(t, xkv);
    Var v = wv(t, xkv);
    return wo(t, ops::attention(t, q, k, v, heads, causal));
  }
  void collect(ParamList<T>& out) {
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    wo.collect(out);
  }
};

// Pre-layer-norm transformer block with GELU feed-forward and an optional
// cross-attention sub-layer.
template <class T>
struct TransformerBlock {
  LayerNorm<T> ln_self;
  MultiHeadAttention<T> self_attn;
  std::optional<LayerNorm<T>> ln_cross;
  std::optional<MultiHeadAttention<T>> cross_attn;
  LayerNorm<T> ln_ff;
  Linear<T> ff_in, ff_out;
  bool causal = false;

  TransformerBlock() = default;
  TransformerBlock(const std::string& name, long d, int heads, long ff_dim, bool is_causal, bool with_cross, Rng& rng)
      : ln_self(name + ".ln_self", d), self_attn(name + ".self", d, heads, rng), ln_ff(name + ".ln_ff", d),
        ff_in(name + ".ff_in", d, ff_dim, rng), ff_out(name + ".ff_out", ff_dim, d, rng), causal(is_causal) {
    if (with_cross) {
      ln_cross.emplace(name + ".ln_cross", d);
      cross_attn.emplace(name + ".cross", d, heads, rng);
    }
  }

  Var operator()(Tape<T>& t, Var x, std::optional<Var> memory = std::nullopt) {
    Var h = ln_self(t, x);
    x = ops::add(t, x, self_attn(t, h, h, causal));
    if (cross_attn) {
      if (!memory) throw ShapeError("cross-attention block called without memory");
      Var hc = (*ln_cross)(t, x);
      x = ops::add(t, x, (*cross_attn)(t, hc, *memory, false));
    }
    Var f = ln_ff(t, x);
    f = ff_out(t, ops::gelu(t, ff_in(t, f)));
    return ops::add(t, x, f);
  }

  void collect(ParamList<T>& out) {
    ln_self.collect(out);
    self_attn.collect(out);
    if (cross_attn) {
      ln_cross->collect(out);
      cross_attn->collect(out);
    }
    ln_ff.collect(out);
    ff_in.collect(out);
    ff_out.collect(out);
  }
};

}  // namespace toktide::nn
