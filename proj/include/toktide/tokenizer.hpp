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

#include "toktide/repcodec.hpp"
#include "toktide/synth/encoder.hpp"

namespace toktide {

enum class TokenizerKind { kKMeans, kRepCodec, kSupTok, kAcousticProxy };

inline std::string to_string(TokenizerKind k) {
  switch (k) {
    case TokenizerKind::kKMeans: return "kmeans";
    case TokenizerKind::kRepCodec: return "repcodec";
    case TokenizerKind::kSupTok: return "suptok";
    case TokenizerKind::kAcousticProxy: return "acoustic-proxy";
  }
  return "?";
}

inline TokenizerKind tokenizer_kind_from(const std::string& s) {
  if (s == "kmeans") return TokenizerKind::kKMeans;
  if (s == "repcodec") return TokenizerKind::kRepCodec;
  if (s == "suptok") return TokenizerKind::kSupTok;
  if (s == "acoustic-proxy") return TokenizerKind::kAcousticProxy;
  throw ConfigError("unknown tokenizer kind: " + s);
}

// Frames -> [frozen encoder up to source_layer] -> [conv encoder] -> quantizer.
// source_layer 0 means the raw frames are quantized (acoustic proxy).
template <class T>
class TokenizerPipeline {
 public:
  TokenizerKind kind = TokenizerKind::kKMeans;
  int source_layer = 0;
  std::optional<synth::FrozenEncoder<T>> encoder;  // truncated to source_layer layers
  std::optional<VqEncoder<T>> pre;
  std::vector<quant::Codebook<T>> codebooks;

  long input_dim() const {
    if (pre) return pre->in.in_dim();
    return codebooks.front().dim();
  }
  long output_dim() const { return codebooks.front().dim(); }
  int n_layers() const { return static_cast<int>(codebooks.size()); }

  // Features at source_layer (or raw frames) -> tokens.
  quant::TokenSequence tokenize_features(const Mat<T>& features) const {
    if (features.cols() != input_dim())
      throw ShapeError("tokenizer expects " + std::to_string(input_dim()) + "-dim features, got " +
                       shape_str(features.rows(), features.cols()));
    Mat<T> z = features;
    if (pre) {
      Tape<T> t(false);
      auto& p = const_cast<VqEncoder<T>&>(*pre);
      z = t.value(p(t, t.constant(features)));
    }
    return quant::to_tokens(quant::rvq_forward(codebooks, z).indices, codebooks);
  }

  // Raw frames -> tokens, running the frozen encoder when source_layer > 0.
  quant::TokenSequence tokenize_frames(const Mat<T>& frames) const {
    if (source_layer == 0) return tokenize_features(frames);
    if (!encoder) throw ConfigError("tokenizer has no encoder for layer " + std::to_string(source_layer));
    return tokenize_features(encoder->encode(frames, source_layer));
  }

  Mat<T> detokenize(const quant::TokenSequence& tokens) const { return quant::detokenize(codebooks, tokens); }
};

template <class T>
TokenizerPipeline<T> kmeans_tokenizer(const quant::KMeansModel<T>& km, int layer,
                                      const std::optional<synth::FrozenEncoder<T>>& enc) {
  TokenizerPipeline<T> p;
  p.kind = TokenizerKind::kKMeans;
  p.source_layer = layer;
  if (enc && layer > 0) p.encoder = enc->truncated(layer);
  p.codebooks = {km.codebook()};
  return p;
}

template <class T>
TokenizerPipeline<T> repcodec_tokenizer(const RepCodecModel<T>& m, const std::optional<synth::FrozenEncoder<T>>& enc) {
  TokenizerPipeline<T> p;
  p.kind = m.source == "acoustic-proxy" ? TokenizerKind::kAcousticProxy : TokenizerKind::kRepCodec;
  p.source_layer = m.source_layer;
  if (enc && m.source_layer > 0) p.encoder = enc->truncated(m.source_layer);
  p.pre = m.vq.encoder;
  p.codebooks = m.vq.codebooks;
  return p;
}

}  // namespace toktide
