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
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "toktide/io.hpp"
#include "toktide/nn/checkpoint.hpp"
#include "toktide/nn/tensor.hpp"

namespace toktide::quant {

inline constexpr double kDefaultDecay = 0.99;
inline constexpr double kDefaultSmoothing = 1e-5;
inline constexpr double kDeadCodeThreshold = 1e-3;

template <class T>
struct Codebook {
  Mat<T> vectors;    // K x D
  Mat<T> ema_count;  // 1 x K
  Mat<T> ema_sum;    // K x D
  double decay = kDefaultDecay;
  double smoothing = kDefaultSmoothing;

  Codebook() = default;
  explicit Codebook(Mat<T> v, double gamma = kDefaultDecay, double eps = kDefaultSmoothing)
      : vectors(std::move(v)), decay(gamma), smoothing(eps) {
    if (vectors.rows() < 1) throw ConfigError("codebook needs at least one code vector");
    ema_count = Mat<T>::Ones(1, vectors.rows());
    ema_sum = vectors;
  }

  long size() const { return vectors.rows(); }
  long dim() const { return vectors.cols(); }
};

struct Nearest {
  int index = 0;
  double dist2 = 0;
};

// Exhaustive squared-Euclidean search; ties go to the lowest index.
template <class T>
Nearest nearest_code(const Mat<T>& vectors, const T* x, long dim) {
  if (vectors.cols() != dim)
    throw ShapeError("nearest_code: vector of width " + std::to_string(dim) + " vs codebook " +
                     shape_str(vectors.rows(), vectors.cols()));
  Nearest best{0, std::numeric_limits<double>::infinity()};
  for (long k = 0; k < vectors.rows(); ++k) {
    const T* c = vectors.row(k).data();
    T d = 0;
    for (long i = 0; i < dim; ++i) {
      const T diff = x[i] - c[i];
      d += diff * diff;
    }
    if (static_cast<double>(d) < best.dist2) best = {static_cast<int>(k), static_cast<double>(d)};
  }
  return best;
}

template <class T>
Nearest nearest_code(const Mat<T>& vectors, const Mat<T>& x_row) {
  return nearest_code(vectors, x_row.data(), x_row.size());
}

template <class T>
struct VqResult {
  std::vector<int> indices;       // T
  Mat<T> quantized;               // T x D
  std::vector<double> residual2;  // per frame ||x - q||^2
};

template <class T>
VqResult<T> vq_forward(const Codebook<T>& cb, const Mat<T>& x) {
  if (x.cols() != cb.dim())
    throw ShapeError("vq_forward: input " + shape_str(x.rows(), x.cols()) + " vs codebook " +
                     shape_str(cb.size(), cb.dim()));
  VqResult<T> r;
  r.quantized.resize(x.rows(), x.cols());
  for (long t = 0; t < x.rows(); ++t) {
    const Nearest n = nearest_code(cb.vectors, x.row(t).data(), x.cols());
    r.indices.push_back(n.index);
    r.residual2.push_back(n.dist2);
    r.quantized.row(t) = cb.vectors.row(n.index);
  }
  return r;
}

template <class T>
struct RvqResult {
  std::vector<std::vector<int>> indices;  // L x T
  Mat<T> quantized;                       // T x D, sum over stages
  std::vector<Mat<T>> stage_inputs;       // residual entering each stage
  std::vector<std::vector<double>> stage_residual2;  // per stage, per frame
  std::vector<double> residual2;          // after the last stage
};

// Stage i quantizes what stages < i left over. With a single stage this is
// exactly vq_forward.
template <class T>
RvqResult<T> rvq_forward(const std::vector<Codebook<T>>& cbs, const Mat<T>& x) {
  if (cbs.empty()) throw ConfigError("rvq_forward: no codebooks");
  RvqResult<T> r;
  Mat<T> residual = x;
  r.quantized = Mat<T>::Zero(x.rows(), x.cols());
  for (const auto& cb : cbs) {
    VqResult<T> s = vq_forward(cb, residual);
    r.stage_inputs.push_back(residual);
    residual -= s.quantized;
    r.quantized += s.quantized;
    r.indices.push_back(std::move(s.indices));
    r.stage_residual2.push_back(s.residual2);
    r.residual2 = std::move(s.residual2);
  }
  return r;
}

// Exponential-moving-average codebook update:
//   count_k <- g*count_k + (1-g)*n_k
//   sum_k   <- g*sum_k   + (1-g)*sum of assigned x
//   vec_k   <- sum_k / ((count_k + eps) / (N + K*eps) * N),  N = sum_k count_k
template <class T>
void ema_update(Codebook<T>& cb, const Mat<T>& x, const std::vector<int>& assignments) {
  if (static_cast<long>(assignments.size()) != x.rows()) throw ShapeError("ema_update: assignment count mismatch");
  if (x.cols() != cb.dim()) throw ShapeError("ema_update: width mismatch");
  const long k = cb.size();
  std::vector<double> counts(static_cast<std::size_t>(k), 0.0);
  Mat<double> sums = Mat<double>::Zero(k, cb.dim());
  for (long t = 0; t < x.rows(); ++t) {
    const int a = assignments[static_cast<std::size_t>(t)];
    if (a < 0 || a >= k) throw ShapeError("ema_update: assignment " + std::to_string(a) + " out of range");
    counts[static_cast<std::size_t>(a)] += 1.0;
    sums.row(a) += x.row(t).template cast<double>();
  }
  const double g = cb.decay;
  double total = 0;
  for (long i = 0; i < k; ++i) {
    const double c = g * static_cast<double>(cb.ema_count(0, i)) + (1.0 - g) * counts[static_cast<std::size_t>(i)];
    cb.ema_count(0, i) = static_cast<T>(c);
    total += c;
    cb.ema_sum.row(i) = (g * cb.ema_sum.row(i).template cast<double>() + (1.0 - g) * sums.row(i)).template cast<T>();
  }
  const double eps = cb.smoothing;
  for (long i = 0; i < k; ++i) {
    const double smoothed = (static_cast<double>(cb.ema_count(0, i)) + eps) / (total + static_cast<double>(k) * eps) * total;
    cb.vectors.row(i) = (cb.ema_sum.row(i).template cast<double>() / smoothed).template cast<T>();
  }
}

// Reassigns codes whose EMA count fell below the threshold to random rows of
// the current batch. Returns how many codes were reseeded.
template <class T>
int reseed_dead_codes(Codebook<T>& cb, const Mat<T>& batch, Rng& rng, double threshold = kDeadCodeThreshold) {
  if (batch.rows() == 0) return 0;
  std::uniform_int_distribution<long> pick(0, batch.rows() - 1);
  int n = 0;
  for (long i = 0; i < cb.size(); ++i) {
    if (static_cast<double>(cb.ema_count(0, i)) >= threshold) continue;
    cb.vectors.row(i) = batch.row(pick(rng));
    cb.ema_sum.row(i) = cb.vectors.row(i);
    cb.ema_count(0, i) = T(1);
    ++n;
  }
  return n;
}

// ---- token sequences ----

struct TokenSequence {
  std::vector<std::vector<std::uint32_t>> indices;  // layers x T
  std::vector<std::uint32_t> codebook_sizes;       // K per layer

  std::size_t layers() const { return indices.size(); }
  std::size_t frames() const { return indices.empty() ? 0 : indices.front().size(); }

  void validate() const {
    if (indices.empty()) throw DataError("token sequence has no layers");
    if (codebook_sizes.size() != indices.size()) throw DataError("token sequence: one codebook size per layer required");
    for (std::size_t l = 0; l < indices.size(); ++l) {
      if (indices[l].size() != frames()) throw DataError("token sequence: ragged layers");
      for (auto v : indices[l])
        if (v >= codebook_sizes[l])
          throw DataError("token " + std::to_string(v) + " >= K=" + std::to_string(codebook_sizes[l]) + " in layer " +
                          std::to_string(l));
    }
  }
};

template <class T>
TokenSequence to_tokens(const std::vector<std::vector<int>>& idx, const std::vector<Codebook<T>>& cbs) {
  TokenSequence ts;
  for (std::size_t l = 0; l < idx.size(); ++l) {
    ts.indices.emplace_back(idx[l].begin(), idx[l].end());
    ts.codebook_sizes.push_back(static_cast<std::uint32_t>(cbs[l].size()));
  }
  return ts;
}

// Per frame, the sum over layers of the selected code vectors.
template <class T>
Mat<T> detokenize(const std::vector<Codebook<T>>& cbs, const TokenSequence& tokens) {
  if (tokens.layers() != cbs.size())
    throw DataError("detokenize: " + std::to_string(tokens.layers()) + " token layers vs " + std::to_string(cbs.size()) +
                    " codebooks");
  const long frames = static_cast<long>(tokens.frames());
  Mat<T> out = Mat<T>::Zero(frames, cbs.front().dim());
  for (std::size_t l = 0; l < cbs.size(); ++l) {
    const auto& row = tokens.indices[l];
    if (static_cast<long>(row.size()) != frames) throw DataError("detokenize: ragged token layers");
    for (long t = 0; t < frames; ++t) {
      const auto v = row[static_cast<std::size_t>(t)];
      if (static_cast<long>(v) >= cbs[l].size())
        throw DataError("detokenize: index " + std::to_string(v) + " >= K=" + std::to_string(cbs[l].size()));
      out.row(t) += cbs[l].vectors.row(static_cast<long>(v));
    }
  }
  return out;
}

struct CodebookStats {
  double utilization = 0;
  double perplexity = 0;
};

// utilization = fraction of codes used at least once;
// perplexity = exp(entropy of the empirical code distribution).
inline CodebookStats codebook_stats(const std::vector<std::uint32_t>& indices, std::uint32_t k) {
  if (indices.empty()) throw DataError("codebook_stats: no indices");
  if (k == 0) throw DataError("codebook_stats: K must be positive");
  std::vector<double> counts(k, 0.0);
  for (auto v : indices) {
    if (v >= k) throw DataError("codebook_stats: index out of range");
    counts[v] += 1.0;
  }
  const double n = static_cast<double>(indices.size());
  double h = 0;
  long used = 0;
  for (double c : counts) {
    if (c == 0) continue;
    ++used;
    const double p = c / n;
    h -= p * std::log(p);
  }
  return {static_cast<double>(used) / static_cast<double>(k), std::exp(h)};
}

// ---- "ATOK" token files: magic, u32 version, u32 n_layers, u32 T,
// n_layers x u32 K, then n_layers x T u32 indices. ----

inline constexpr std::uint32_t kTokenVersion = 1;

inline std::vector<char> encode_tokens(const TokenSequence& ts) {
  ts.validate();
  io::Writer w;
  w.magic("ATOK");
  w.u32(kTokenVersion);
  w.u32(static_cast<std::uint32_t>(ts.layers()));
  w.u32(static_cast<std::uint32_t>(ts.frames()));
  for (auto k : ts.codebook_sizes) w.u32(k);
  for (const auto& layer : ts.indices)
    for (auto v : layer) w.u32(v);
  return w.buffer();
}

inline TokenSequence decode_tokens(std::vector<char> bytes, const std::string& origin) {
  io::Reader r(std::move(bytes), origin);
  r.expect_magic("ATOK");
  const auto v = r.u32();
  if (v != kTokenVersion) throw DataError(origin + ": unsupported ATOK version " + std::to_string(v));
  TokenSequence ts;
  const auto layers = r.u32(), frames = r.u32();
  for (std::uint32_t l = 0; l < layers; ++l) ts.codebook_sizes.push_back(r.u32());
  ts.indices.assign(layers, std::vector<std::uint32_t>(frames));
  for (auto& layer : ts.indices)
    for (auto& x : layer) x = r.u32();
  if (!r.done()) throw DataError(origin + ": trailing bytes in token file");
  ts.validate();
  return ts;
}

inline void write_tokens(const std::filesystem::path& p, const TokenSequence& ts) { io::write_file_atomic(p, encode_tokens(ts)); }
inline TokenSequence read_tokens(const std::filesystem::path& p) { return decode_tokens(io::read_file(p), p.string()); }

// Codebooks travel in TTWT checkpoints as cb<i>.vectors / ema_count / ema_sum.
template <class T>
std::vector<std::pair<std::string, nn::TensorRecord>> codebook_records(const std::vector<Codebook<T>>& cbs,
                                                                       const std::string& prefix = "cb") {
  std::vector<std::pair<std::string, nn::TensorRecord>> recs;
  for (std::size_t i = 0; i < cbs.size(); ++i) {
    const std::string p = prefix + std::to_string(i);
    recs.emplace_back(p + ".vectors", nn::to_record(cbs[i].vectors));
    recs.emplace_back(p + ".ema_count", nn::to_record(cbs[i].ema_count));
    recs.emplace_back(p + ".ema_sum", nn::to_record(cbs[i].ema_sum));
  }
  return recs;
}

template <class T>
std::vector<Codebook<T>> codebooks_from(const nn::TensorMap& tensors, const std::string& prefix = "cb") {
  std::vector<Codebook<T>> out;
  for (std::size_t i = 0;; ++i) {
    const std::string p = prefix + std::to_string(i);
    auto it = tensors.find(p + ".vectors");
    if (it == tensors.end()) break;
    const auto& shape = it->second.shape;
    if (shape.size() != 2) throw DataError("codebook tensor " + p + " must be rank 2");
    Mat<T> v(static_cast<long>(shape[0]), static_cast<long>(shape[1]));
    nn::from_record(it->second, v, p + ".vectors");
    Codebook<T> cb(v);
    if (auto c = tensors.find(p + ".ema_count"); c != tensors.end()) nn::from_record(c->second, cb.ema_count, p);
    if (auto s = tensors.find(p + ".ema_sum"); s != tensors.end()) nn::from_record(s->second, cb.ema_sum, p);
    out.push_back(std::move(cb));
  }
  if (out.empty()) throw DataError("checkpoint holds no codebooks with prefix " + prefix);
  return out;
}

}  // namespace toktide::quant
