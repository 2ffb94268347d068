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

#include <nlohmann/json.hpp>
#include <vector>

#include "toktide/nn/layers.hpp"

namespace toktide::synth {

struct EncoderConfig {
  int layers = 12;
  long dim = 64;
  int heads = 4;
  long ff_mult = 4;
  long window = 5;  // temporal extent of the input projection (patch analogue)
  double branch_scale = 0.2;  // init scale of each layer's attention/feed-forward output weights
  std::uint64_t seed = 1234;
};

inline void validate(const EncoderConfig& c) {
  if (c.layers < 1) throw ConfigError("encoder needs at least one layer");
  if (c.heads < 1 || c.dim % c.heads != 0) throw ConfigError("encoder dim must be divisible by heads");
  if (c.window < 1 || c.window % 2 == 0) throw ConfigError("encoder window must be a positive odd number");
}

inline nlohmann::ordered_json encoder_config_to_json(const EncoderConfig& c) {
  return {{"layers", c.layers}, {"dim", c.dim}, {"heads", c.heads}, {"ff_mult", c.ff_mult}, {"window", c.window},
          {"branch_scale", c.branch_scale}, {"seed", c.seed}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  try {
    c.layers = j.value("layers", c.layers);
    c.dim = j.value("dim", c.dim);
    c.heads = j.value("heads", c.heads);
    c.ff_mult = j.value("ff_mult", c.ff_mult);
    c.window = j.value("window", c.window);
    c.branch_scale = j.value("branch_scale", c.branch_scale);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("encoder config: ") + e.what());
  }
  validate(c);
  return c;
}

// Stand-in for a pretrained audio encoder: a windowed input projection, a
// parameter-free layer norm and a stack of pre-LN transformer layers, all with
// seeded random weights that never train. Order information enters only
// through the windowed projection; there is no absolute position signal.
template <class T>
class FrozenEncoder {
 public:
  FrozenEncoder() = default;
  FrozenEncoder(const EncoderConfig& cfg, long input_dim) : cfg_(cfg), input_dim_(input_dim) {
    validate(cfg);
    Rng rng(cfg.seed);
    proj_ = nn::Conv1d<T>("enc.proj", input_dim, cfg.dim, cfg.window, 1, cfg.window / 2, rng);
    for (int l = 0; l < cfg.layers; ++l)
      blocks_.emplace_back("enc.layer" + std::to_string(l + 1), cfg.dim, cfg.heads, cfg.dim * cfg.ff_mult, false, false,
                           rng);
    for (auto& b : blocks_) {
      b.self_attn.wo.w.value *= static_cast<T>(cfg.branch_scale);
      b.ff_out.w.value *= static_cast<T>(cfg.branch_scale);
    }
    set_trainable(params(), false);
  }

  const EncoderConfig& config() const { return cfg_; }
  int num_layers() const { return static_cast<int>(blocks_.size()); }
  long dim() const { return cfg_.dim; }
  long input_dim() const { return input_dim_; }

  // Residual stream after `layer` transformer layers (1-based).
  Mat<T> encode(const Mat<T>& frames, int layer) const {
    check_layer(layer);
    Tape<T> tape(false);
    Var x = embed(tape, frames);
    x = run_blocks(tape, x, 0, layer);
    return tape.value(x);
  }

  // Input embedding (windowed projection + layer norm), i.e. the state before
  // layer 1.
  Mat<T> embedded(const Mat<T>& frames) const {
    Tape<T> tape(false);
    return tape.value(embed(tape, frames));
  }

  // Outputs after every layer 1..L (index l-1 holds layer l).
  std::vector<Mat<T>> encode_all(const Mat<T>& frames) const {
    Tape<T> tape(false);
    Var x = embed(tape, frames);
    std::vector<Mat<T>> out;
    for (int l = 0; l < num_layers(); ++l) {
      x = run_blocks(tape, x, l, l + 1);
      out.push_back(tape.value(x));
    }
    return out;
  }

  Var embed(Tape<T>& tape, const Mat<T>& frames) const {
    if (frames.cols() != input_dim_)
      throw ShapeError("encoder expects " + std::to_string(input_dim_) + "-dim frames, got " +
                       shape_str(frames.rows(), frames.cols()));
    auto& self = const_cast<FrozenEncoder&>(*this);
    Var x = self.proj_(tape, tape.constant(frames));
    return ops::layer_norm(tape, x, Var{}, Var{});
  }

  // Applies layers (from, to] in 1-based terms, i.e. block indices [from, to).
  Var run_blocks(Tape<T>& tape, Var x, int from, int to) const {
    auto& self = const_cast<FrozenEncoder&>(*this);
    for (int l = from; l < to; ++l) x = self.blocks_[static_cast<std::size_t>(l)](tape, x);
    return x;
  }

  const std::vector<nn::TransformerBlock<T>>& blocks() const { return blocks_; }

  // Copy holding only the first `layers` layers.
  FrozenEncoder truncated(int layers) const {
    check_layer(layers);
    FrozenEncoder out = *this;
    out.blocks_.resize(static_cast<std::size_t>(layers));
    out.cfg_.layers = layers;
    return out;
  }

  ParamList<T> params() {
    ParamList<T> ps;
    proj_.collect(ps);
    for (auto& b : blocks_) b.collect(ps);
    return ps;
  }

 private:
  void check_layer(int layer) const {
    if (layer < 1 || layer > num_layers())
      throw ConfigError("encoder layer " + std::to_string(layer) + " outside [1, " + std::to_string(num_layers()) + "]");
  }

  EncoderConfig cfg_;
  long input_dim_ = 0;
  nn::Conv1d<T> proj_;
  std::vector<nn::TransformerBlock<T>> blocks_;
};

}  // namespace toktide::synth
