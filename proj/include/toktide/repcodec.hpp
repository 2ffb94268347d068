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
#include <optional>
#include <random>
#include <vector>

#include "toktide/nn/layers.hpp"
#include "toktide/nn/optim.hpp"
#include "toktide/quant/codebook.hpp"
#include "toktide/quant/kmeans.hpp"

namespace toktide {

inline constexpr double kCommitmentBeta = 0.25;

// Width-preserving stack of residual conv blocks (kernel 3, stride 1, same
// padding): x <- x + conv(gelu(x)).
template <class T>
struct ConvStack {
  std::vector<nn::Conv1d<T>> blocks;

  ConvStack() = default;
  ConvStack(const std::string& name, long dim, int n_blocks, Rng& rng) {
    for (int i = 0; i < n_blocks; ++i) blocks.emplace_back(name + ".block" + std::to_string(i), dim, dim, 3, 1, 1, rng);
  }

  Var operator()(Tape<T>& t, Var x) {
    for (auto& b : blocks) x = ops::add(t, x, b(t, ops::gelu(t, x)));
    return x;
  }
  void collect(ParamList<T>& out) {
    for (auto& b : blocks) b.collect(out);
  }
};

// Encoder half: input conv followed by residual blocks.
template <class T>
struct VqEncoder {
  nn::Conv1d<T> in;
  ConvStack<T> stack;

  VqEncoder() = default;
  VqEncoder(const std::string& name, long dim, int n_blocks, Rng& rng)
      : in(name + ".in", dim, dim, 3, 1, 1, rng), stack(name, dim, n_blocks, rng) {}

  Var operator()(Tape<T>& t, Var x) { return stack(t, in(t, x)); }
  void collect(ParamList<T>& out) {
    in.collect(out);
    stack.collect(out);
  }
};

// Decoder half: residual blocks followed by an output conv.
template <class T>
struct VqDecoder {
  ConvStack<T> stack;
  nn::Conv1d<T> out;

  VqDecoder() = default;
  VqDecoder(const std::string& name, long dim, int n_blocks, Rng& rng)
      : stack(name, dim, n_blocks, rng), out(name + ".out", dim, dim, 3, 1, 1, rng) {}

  Var operator()(Tape<T>& t, Var x) { return out(t, stack(t, x)); }
  void collect(ParamList<T>& o) {
    stack.collect(o);
    out.collect(o);
  }
};

// Freezes the quantization offset at a base point: the quantized value becomes
// z + (q0 - z0) and the commitment target is the constant q0. At the base point
// this reproduces the straight-through forward value and gradient exactly, but
// stays differentiable nearby, which is what finite-difference checks need.
template <class T>
struct FrozenQuantization {
  Mat<T> z0, q0;
};

template <class T>
struct VqPass {
  Var z;          // encoder output
  Var quantized;  // straight-through quantized latent
  Var recon;      // decoder output
  Var commitment; // mean ||z - sg(q)||^2
  quant::RvqResult<T> rvq;
};

// Encoder -> (R)VQ with EMA codebooks -> decoder.
template <class T>
struct VqModule {
  VqEncoder<T> encoder;
  std::vector<quant::Codebook<T>> codebooks;
  VqDecoder<T> decoder;
  long dim = 0;

  VqModule() = default;
  VqModule(const std::string& name, long d, long k, int n_layers, Rng& rng, int n_blocks = 3)
      : encoder(name + ".enc", d, n_blocks, rng), decoder(name + ".dec", d, n_blocks, rng), dim(d) {
    if (n_layers < 1 || n_layers > 2) throw ConfigError("quantizer layer count must be 1 or 2");
    if (k < 1) throw ConfigError("codebook size must be positive");
    for (int l = 0; l < n_layers; ++l) codebooks.emplace_back(Mat<T>::Zero(k, d));
  }

  int n_layers() const { return static_cast<int>(codebooks.size()); }
  long codebook_size() const { return codebooks.front().size(); }

  VqPass<T> forward(Tape<T>& t, Var x, const FrozenQuantization<T>* frozen = nullptr) {
    VqPass<T> p;
    p.z = encoder(t, x);
    if (frozen) {
      p.quantized = ops::add(t, p.z, t.constant(frozen->q0 - frozen->z0));
      p.commitment = ops::mse(t, p.z, frozen->q0);
    } else {
      p.rvq = quant::rvq_forward(codebooks, t.value(p.z));
      p.quantized = ops::straight_through(t, p.z, p.rvq.quantized);
      p.commitment = ops::mse(t, p.z, p.rvq.quantized);
    }
    p.recon = decoder(t, p.quantized);
    return p;
  }

  Mat<T> encode(const Mat<T>& x) const {
    Tape<T> t(false);
    auto& self = const_cast<VqModule&>(*this);
    return t.value(self.encoder(t, t.constant(x)));
  }

  Mat<T> decode(const Mat<T>& q) const {
    Tape<T> t(false);
    auto& self = const_cast<VqModule&>(*this);
    return t.value(self.decoder(t, t.constant(q)));
  }

  // Seeds every stage with k-means++ over a pool of latents (stage i sees the
  // residual left by stages < i).
  void init_codebooks(const Mat<T>& latents, Rng& rng) {
    Mat<T> residual = latents;
    for (auto& cb : codebooks) {
      const long k = cb.size();
      Mat<T> init = residual.rows() >= k ? quant::kmeans_plus_plus(residual, k, rng) : Mat<T>(residual);
      if (init.rows() < k) {
        std::uniform_int_distribution<long> pick(0, residual.rows() - 1);
        Mat<T> full(k, dim);
        for (long i = 0; i < k; ++i) full.row(i) = i < init.rows() ? init.row(i) : residual.row(pick(rng));
        init = full;
      }
      const double g = cb.decay, e = cb.smoothing;
      cb = quant::Codebook<T>(init, g, e);
      residual -= quant::vq_forward(cb, residual).quantized;
    }
  }

  // EMA update from the stage inputs/assignments gathered over a batch, then
  // dead-code reseeding.
  int update_codebooks(const std::vector<Mat<T>>& stage_inputs, const std::vector<std::vector<int>>& assignments,
                       Rng& rng) {
    int reseeded = 0;
    for (std::size_t l = 0; l < codebooks.size(); ++l) {
      quant::ema_update(codebooks[l], stage_inputs[l], assignments[l]);
      reseeded += quant::reseed_dead_codes(codebooks[l], stage_inputs[l], rng);
    }
    return reseeded;
  }

  ParamList<T> params() {
    ParamList<T> ps;
    encoder.collect(ps);
    decoder.collect(ps);
    return ps;
  }
  ParamList<T> encoder_params() {
    ParamList<T> ps;
    encoder.collect(ps);
    return ps;
  }
};

// Accumulates stage inputs and assignments over the sequences of one batch.
template <class T>
struct CodebookBatch {
  std::vector<std::vector<Mat<T>>> inputs;
  std::vector<std::vector<int>> assignments;

  explicit CodebookBatch(std::size_t layers) : inputs(layers), assignments(layers) {}

  void add(const quant::RvqResult<T>& r) {
    for (std::size_t l = 0; l < inputs.size(); ++l) {
      inputs[l].push_back(r.stage_inputs[l]);
      assignments[l].insert(assignments[l].end(), r.indices[l].begin(), r.indices[l].end());
    }
  }

  std::vector<Mat<T>> stacked() const {
    std::vector<Mat<T>> out;
    for (const auto& parts : inputs) {
      long rows = 0;
      for (const auto& m : parts) rows += m.rows();
      Mat<T> s(rows, parts.front().cols());
      long r = 0;
      for (const auto& m : parts) {
        s.middleRows(r, m.rows()) = m;
        r += m.rows();
      }
      out.push_back(std::move(s));
    }
    return out;
  }
};

// ---- representation codec ----

struct RepCodecConfig {
  long codebook_size = 64;
  int n_layers = 1;
  int steps = 1000;
  int batch = 16;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta = kCommitmentBeta;
  long crop = 32;  // training window in frames; 0 = whole sequence
  int log_every = 50;
  long init_pool = 4096;  // latent rows used to seed the codebooks
  std::uint64_t seed = 1;
};

struct TrainLogEntry {
  int step = 0;
  double loss = 0;
  double recon = 0;
  double commitment = 0;
  int reseeded = 0;
};

template <class T>
struct RepCodecModel {
  VqModule<T> vq;
  long input_dim = 0;
  std::string source = "semantic";  // or "acoustic-proxy"
  int source_layer = 0;
  std::vector<TrainLogEntry> log;
};

template <class T>
Mat<T> random_crop(const Mat<T>& x, long crop, Rng& rng) {
  if (crop <= 0 || crop >= x.rows()) return x;
  std::uniform_int_distribution<long> start(0, x.rows() - crop);
  return x.middleRows(start(rng), crop);
}

template <class T>
Mat<T> latent_pool(VqModule<T>& vq, const std::vector<Mat<T>>& data, long rows, Rng& rng) {
  std::vector<Mat<T>> parts;
  long have = 0;
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (std::size_t guard = 0; have < rows && guard < data.size() * 4; ++guard) {
    Mat<T> z = vq.encode(data[pick(rng)]);
    have += z.rows();
    parts.push_back(std::move(z));
  }
  Mat<T> pool(have, vq.dim);
  long r = 0;
  for (const auto& p : parts) {
    pool.middleRows(r, p.rows()) = p;
    r += p.rows();
  }
  return pool;
}

template <class T>
RepCodecModel<T> train_repcodec(const std::vector<Mat<T>>& data, const RepCodecConfig& cfg,
                                const std::function<void(const TrainLogEntry&)>& on_log = {}) {
  if (data.empty()) throw DataError("train_repcodec: empty corpus");
  const long dim = data.front().cols();
  for (const auto& x : data)
    if (x.cols() != dim) throw DataError("train_repcodec: inconsistent feature widths");
  Rng rng(cfg.seed);
  RepCodecModel<T> m;
  m.input_dim = dim;
  m.vq = VqModule<T>("repcodec", dim, cfg.codebook_size, cfg.n_layers, rng);
  m.vq.init_codebooks(latent_pool(m.vq, data, cfg.init_pool, rng), rng);
  ParamList<T> params = m.vq.params();
  nn::AdamW<T> opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  const T inv_batch = T(1) / static_cast<T>(cfg.batch);
  for (int step = 0; step < cfg.steps; ++step) {
    zero_grads(params);
    CodebookBatch<T> cbatch(m.vq.codebooks.size());
    TrainLogEntry e{step, 0, 0, 0, 0};
    for (int b = 0; b < cfg.batch; ++b) {
      Mat<T> x = random_crop(data[pick(rng)], cfg.crop, rng);
      Tape<T> t;
      Var xin = t.constant(x);
      VqPass<T> p = m.vq.forward(t, xin);
      Var rec = ops::mse(t, p.recon, x);
      Var loss = ops::add(t, rec, ops::scale(t, p.commitment, static_cast<T>(cfg.beta)));
      const double lv = static_cast<double>(t.scalar(loss));
      if (!std::isfinite(lv)) throw NumericalError("repcodec: non-finite loss at step " + std::to_string(step));
      e.loss += lv / cfg.batch;
      e.recon += static_cast<double>(t.scalar(rec)) / cfg.batch;
      e.commitment += static_cast<double>(t.scalar(p.commitment)) / cfg.batch;
      t.backward(loss, inv_batch);
      cbatch.add(p.rvq);
    }
    opt.step(params);
    e.reseeded = m.vq.update_codebooks(cbatch.stacked(), cbatch.assignments, rng);
    if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
      m.log.push_back(e);
      if (on_log) on_log(e);
    }
  }
  return m;
}

template <class T>
struct Reconstruction {
  Mat<T> output;
  double mse = 0;
};

// decoder(detokenized encoder output) and its MSE against the input.
template <class T>
Reconstruction<T> reconstruct(const RepCodecModel<T>& m, const Mat<T>& x) {
  if (x.cols() != m.input_dim)
    throw ShapeError("reconstruct: expected " + std::to_string(m.input_dim) + "-dim input, got " +
                     shape_str(x.rows(), x.cols()));
  const Mat<T> z = m.vq.encode(x);
  const auto rvq = quant::rvq_forward(m.vq.codebooks, z);
  Reconstruction<T> r;
  r.output = m.vq.decode(quant::detokenize(m.vq.codebooks, quant::to_tokens(rvq.indices, m.vq.codebooks)));
  r.mse = static_cast<double>((r.output - x).squaredNorm()) / static_cast<double>(x.size());
  return r;
}

}  // namespace toktide
