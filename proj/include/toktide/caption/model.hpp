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

#include <memory>
#include <nlohmann/json.hpp>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "toktide/caption/beam.hpp"
#include "toktide/caption/text.hpp"
#include "toktide/nn/layers.hpp"

namespace toktide::caption {

enum class CaptionerKind { kEncDec, kPrefix };

inline std::string to_string(CaptionerKind k) { return k == CaptionerKind::kEncDec ? "encdec" : "prefix"; }

inline CaptionerKind captioner_kind_from(const std::string& s) {
  if (s == "encdec") return CaptionerKind::kEncDec;
  if (s == "prefix") return CaptionerKind::kPrefix;
  throw ConfigError("unknown captioner kind: " + s);
}

inline constexpr long kConvKernel = 3, kConvStride = 3;
inline constexpr int kDefaultMaxLen = 30;

struct CaptionerConfig {
  CaptionerKind kind = CaptionerKind::kEncDec;
  long input_dim = 64;
  long width = 128;
  int heads = 4;
  int layers = 2;  // decoder layers (encdec) / LM layers (prefix)
  long ff_dim = 512;
  int max_tokens = 40;    // bos + caption + eos positions
  long max_frames = 1536;  // longest accepted input sequence
  int k_prefix = 50;
  int map_heads = 8;
  std::uint64_t seed = 1;
};

inline nlohmann::ordered_json captioner_config_to_json(const CaptionerConfig& c) {
  return {{"kind", to_string(c.kind)}, {"input_dim", c.input_dim}, {"width", c.width},   {"heads", c.heads},
          {"layers", c.layers},         {"ff_dim", c.ff_dim},       {"max_tokens", c.max_tokens},
          {"max_frames", c.max_frames}, {"k_prefix", c.k_prefix},   {"map_heads", c.map_heads},
          {"seed", c.seed}};
}

inline CaptionerConfig captioner_config_from_json(const nlohmann::json& j) {
  CaptionerConfig c;
  try {
    c.kind = captioner_kind_from(j.value("kind", std::string("encdec")));
    c.input_dim = j.value("input_dim", c.input_dim);
    c.width = j.value("width", c.width);
    c.heads = j.value("heads", c.heads);
    c.layers = j.value("layers", c.layers);
    c.ff_dim = j.value("ff_dim", c.ff_dim);
    c.max_tokens = j.value("max_tokens", c.max_tokens);
    c.max_frames = j.value("max_frames", c.max_frames);
    c.k_prefix = j.value("k_prefix", c.k_prefix);
    c.map_heads = j.value("map_heads", c.map_heads);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("captioner config: ") + e.what());
  }
  return c;
}

inline long downsampled_length(long frames) {
  if (frames < kConvKernel)
    throw DataError("captioner input needs at least " + std::to_string(kConvKernel) + " frames, got " +
                    std::to_string(frames));
  return ops::conv_out_len(frames, kConvKernel, kConvStride, 0);
}

inline std::vector<int> iota_ids(int start, long n) {
  std::vector<int> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), start);
  return ids;
}

template <class T>
class Captioner {
 public:
  virtual ~Captioner() = default;
  virtual CaptionerKind kind() const = 0;
  virtual const CaptionerConfig& config() const = 0;
  virtual int vocab_size() const = 0;
  // Mean next-token cross-entropy over the caption positions of a
  // bos ... eos sequence, teacher-forced.
  virtual Var loss(Tape<T>& t, const Mat<T>& x, const std::vector<int>& wrapped) = 0;
  // Next-token log-probabilities for one input, as used by beam search.
  virtual NextLogProbs decoder(const Mat<T>& x) = 0;
  virtual ParamList<T> trainable_params() = 0;
  virtual ParamList<T> params() = 0;
  // Called after every optimizer step; frozen-weight contracts live here.
  virtual void check_invariants() const {}
};

namespace detail {

inline void check_wrapped(const std::vector<int>& wrapped, int max_tokens) {
  if (wrapped.size() < 2) throw DataError("caption must contain at least one token besides bos");
  if (static_cast<int>(wrapped.size()) > max_tokens)
    throw DataError("caption of " + std::to_string(wrapped.size()) + " tokens exceeds max_tokens " +
                    std::to_string(max_tokens));
}

template <class T>
std::vector<double> last_row_log_softmax(const Mat<T>& logits) {
  const auto lp = log_softmax(logits.row(logits.rows() - 1).data(), logits.cols());
  return std::vector<double>(lp.begin(), lp.end());
}

}  // namespace detail

// Conv front end (kernel 3, stride 3) + sinusoidal positions + layer norm as
// the encoder; causal transformer decoder with cross-attention over it.
template <class T>
class EncDecCaptioner final : public Captioner<T> {
 public:
  EncDecCaptioner(const CaptionerConfig& cfg, int vocab) : cfg_(cfg), vocab_(vocab) {
    Rng rng(cfg.seed);
    conv_ = nn::Conv1d<T>("encdec.conv", cfg.input_dim, cfg.width, kConvKernel, kConvStride, 0, rng);
    enc_ln_ = nn::LayerNorm<T>("encdec.enc_ln", cfg.width);
    tok_ = nn::Embedding<T>("encdec.tok", vocab, cfg.width, rng);
    pos_ = nn::Embedding<T>("encdec.pos", cfg.max_tokens, cfg.width, rng);
    for (int l = 0; l < cfg.layers; ++l)
      blocks_.emplace_back("encdec.dec" + std::to_string(l), cfg.width, cfg.heads, cfg.ff_dim, true, true, rng);
    ln_f_ = nn::LayerNorm<T>("encdec.ln_f", cfg.width);
    out_ = nn::Linear<T>("encdec.out", cfg.width, vocab, rng);
  }

  CaptionerKind kind() const override { return CaptionerKind::kEncDec; }
  const CaptionerConfig& config() const override { return cfg_; }
  int vocab_size() const override { return vocab_; }

  Var memory(Tape<T>& t, const Mat<T>& x) {
    const long n = downsampled_length(x.rows());
    Var c = conv_(t, t.constant(x));
    c = ops::add(t, c, t.constant(sinusoidal_positions<T>(n, cfg_.width)));
    return enc_ln_(t, c);
  }

  Var logits(Tape<T>& t, Var memory, const std::vector<int>& ids) {
    if (static_cast<int>(ids.size()) > cfg_.max_tokens) throw DataError("decoder input longer than max_tokens");
    Var h = ops::add(t, tok_(t, ids), pos_(t, iota_ids(0, static_cast<long>(ids.size()))));
    for (auto& b : blocks_) h = b(t, h, memory);
    return out_(t, ln_f_(t, h));
  }

  Var loss(Tape<T>& t, const Mat<T>& x, const std::vector<int>& wrapped) override {
    detail::check_wrapped(wrapped, cfg_.max_tokens);
    const std::vector<int> in(wrapped.begin(), wrapped.end() - 1), target(wrapped.begin() + 1, wrapped.end());
    return ops::cross_entropy(t, logits(t, memory(t, x), in), target);
  }

  NextLogProbs decoder(const Mat<T>& x) override {
    Tape<T> mt(false);
    auto mem = std::make_shared<Mat<T>>(mt.value(memory(mt, x)));
    return [this, mem](const std::vector<int>& prefix) {
      std::vector<int> ids{text::Vocab::kBos};
      ids.insert(ids.end(), prefix.begin(), prefix.end());
      Tape<T> t(false);
      return detail::last_row_log_softmax(t.value(logits(t, t.constant(*mem), ids)));
    };
  }

  ParamList<T> trainable_params() override { return params(); }
  ParamList<T> params() override {
    ParamList<T> ps;
    conv_.collect(ps);
    enc_ln_.collect(ps);
    tok_.collect(ps);
    pos_.collect(ps);
    for (auto& b : blocks_) b.collect(ps);
    ln_f_.collect(ps);
    out_.collect(ps);
    return ps;
  }

  nn::Linear<T>& output_layer() { return out_; }

 private:
  CaptionerConfig cfg_;
  int vocab_;
  nn::Conv1d<T> conv_;
  nn::LayerNorm<T> enc_ln_;
  nn::Embedding<T> tok_, pos_;
  std::vector<nn::TransformerBlock<T>> blocks_;
  nn::LayerNorm<T> ln_f_;
  nn::Linear<T> out_;
};

// Small decoder-only language model. Token positions start at `offset` so the
// same embedding rows serve both plain pretraining and prefix conditioning.
template <class T>
struct FrozenLm {
  nn::Embedding<T> tok, pos;
  std::vector<nn::TransformerBlock<T>> blocks;
  nn::LayerNorm<T> ln_f;
  nn::Linear<T> out;
  int offset = 0;

  FrozenLm() = default;
  FrozenLm(const CaptionerConfig& cfg, int vocab, Rng& rng)
      : tok("lm.tok", vocab, cfg.width, rng), pos("lm.pos", cfg.k_prefix + cfg.max_tokens, cfg.width, rng),
        ln_f("lm.ln_f", cfg.width), out("lm.out", cfg.width, vocab, rng), offset(cfg.k_prefix) {
    for (int l = 0; l < cfg.layers; ++l)
      blocks.emplace(blocks.end(), "lm.layer" + std::to_string(l), cfg.width, cfg.heads, cfg.ff_dim, true, false, rng);
  }

  // Logits for every position of [prefix; tokens]; positions of the prefix
  // rows are offset - k .. offset - 1.
  Var forward(Tape<T>& t, std::optional<Var> prefix, const std::vector<int>& ids) {
    Var h = tok(t, ids);
    long start = offset;
    if (prefix) {
      const long k = t.value(*prefix).rows();
      start -= k;
      h = ops::concat_rows(t, *prefix, h);
    }
    if (start < 0) throw ShapeError("prefix longer than the LM's prefix slots");
    h = ops::add(t, h, pos(t, iota_ids(static_cast<int>(start), t.value(h).rows())));
    for (auto& b : blocks) h = b(t, h);
    return out(t, ln_f(t, h));
  }

  ParamList<T> params() {
    ParamList<T> ps;
    tok.collect(ps);
    pos.collect(ps);
    for (auto& b : blocks) b.collect(ps);
    ln_f.collect(ps);
    out.collect(ps);
    return ps;
  }
};

// Conv front end + k learnable prefix rows through a one-layer mapping
// network with learned positions; the last k outputs condition a frozen LM.
template <class T>
class PrefixCaptioner final : public Captioner<T> {
 public:
  PrefixCaptioner(const CaptionerConfig& cfg, FrozenLm<T> lm) : cfg_(cfg), lm_(std::move(lm)) {
    if (cfg.k_prefix < 1) throw ConfigError("k_prefix must be >= 1");
    Rng rng(mix_seed(cfg.seed, 0x9E));
    conv_ = nn::Conv1d<T>("prefix.conv", cfg.input_dim, cfg.width, kConvKernel, kConvStride, 0, rng);
    prefix_ = Parameter<T>("prefix.embeddings", gaussian<T>(cfg.k_prefix, cfg.width, 1.0, rng));
    map_pos_ = nn::Embedding<T>("prefix.map_pos", cfg.max_frames / kConvStride + cfg.k_prefix, cfg.width, rng);
    mapping_ = nn::TransformerBlock<T>("prefix.map", cfg.width, cfg.map_heads, cfg.ff_dim, false, false, rng);
    set_trainable(lm_.params(), false);
  }

  CaptionerKind kind() const override { return CaptionerKind::kPrefix; }
  const CaptionerConfig& config() const override { return cfg_; }
  int vocab_size() const override { return static_cast<int>(lm_.tok.table.value.rows()); }

  // k x width prefix vectors; the downsampled-feature part of the mapping
  // output is discarded.
  Var prefix_forward(Tape<T>& t, const Mat<T>& x) {
    const long n = downsampled_length(x.rows());
    if (n + cfg_.k_prefix > map_pos_.table.value.rows())
      throw DataError("input of " + std::to_string(x.rows()) + " frames exceeds max_frames");
    Var c = conv_(t, t.constant(x));
    Var seq = ops::concat_rows(t, c, t.param(prefix_));
    seq = ops::add(t, seq, map_pos_(t, iota_ids(0, n + cfg_.k_prefix)));
    return ops::slice_rows(t, mapping_(t, seq), n, cfg_.k_prefix);
  }

  Var loss(Tape<T>& t, const Mat<T>& x, const std::vector<int>& wrapped) override {
    detail::check_wrapped(wrapped, cfg_.max_tokens);
    const std::vector<int> in(wrapped.begin(), wrapped.end() - 1), target(wrapped.begin() + 1, wrapped.end());
    Var all = lm_.forward(t, prefix_forward(t, x), in);
    Var caption_rows = ops::slice_rows(t, all, cfg_.k_prefix, static_cast<long>(in.size()));
    return ops::cross_entropy(t, caption_rows, target);
  }

  NextLogProbs decoder(const Mat<T>& x) override {
    Tape<T> pt(false);
    auto p = std::make_shared<Mat<T>>(pt.value(prefix_forward(pt, x)));
    return [this, p](const std::vector<int>& prefix) {
      std::vector<int> ids{text::Vocab::kBos};
      ids.insert(ids.end(), prefix.begin(), prefix.end());
      Tape<T> t(false);
      return detail::last_row_log_softmax(t.value(lm_.forward(t, t.constant(*p), ids)));
    };
  }

  ParamList<T> trainable_params() override {
    ParamList<T> ps;
    conv_.collect(ps);
    ps.push_back(&prefix_);
    map_pos_.collect(ps);
    mapping_.collect(ps);
    return ps;
  }

  ParamList<T> params() override {
    ParamList<T> ps = trainable_params();
    for (auto* p : lm_.params()) ps.push_back(p);
    return ps;
  }

  void check_invariants() const override {
    auto& lm = const_cast<FrozenLm<T>&>(lm_);
    for (const auto* p : lm.params())
      if (p->trainable || p->grad.squaredNorm() != T(0))
        throw std::logic_error("gradient reached frozen language-model parameter " + p->name);
  }

  FrozenLm<T>& lm() { return lm_; }

 private:
  CaptionerConfig cfg_;
  FrozenLm<T> lm_;
  nn::Conv1d<T> conv_;
  Parameter<T> prefix_;
  nn::Embedding<T> map_pos_;
  nn::TransformerBlock<T> mapping_;
};

}  // namespace toktide::caption
