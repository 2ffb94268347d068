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

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "toktide/error.hpp"

namespace toktide {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

using Rng = std::mt19937_64;

// Mixes a base seed with a stream index so that independent streams
// (clips, sweep cells, seeds) never share generator state.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

template <class T>
Mat<T> xavier_uniform(long rows, long cols, long fan_in, long fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Mat<T> m(rows, cols);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return m;
}

template <class T>
Mat<T> gaussian(long rows, long cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat<T> m(rows, cols);
  for (long i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return m;
}

// A learned tensor. Storage is always a 2-D row-major matrix; `shape` keeps the
// logical dimensions (e.g. k x Din x Dout for a convolution kernel) for
// checkpointing.
template <class T>
struct Parameter {
  std::string name;
  std::vector<std::uint64_t> shape;
  Mat<T> value;
  Mat<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Mat<T> v, std::vector<std::uint64_t> s = {})
      : name(std::move(n)), shape(std::move(s)), value(std::move(v)) {
    if (shape.empty()) {
      shape = {static_cast<std::uint64_t>(value.rows()),
               static_cast<std::uint64_t>(value.cols())};
    }
    grad = Mat<T>::Zero(value.rows(), value.cols());
  }

  void zero_grad() { grad.setZero(); }
  long size() const { return value.size(); }
};

template <class T>
using ParamList = std::vector<Parameter<T>*>;

template <class T>
void zero_grads(const ParamList<T>& params) {
  for (auto* p : params) p->zero_grad();
}

template <class T>
void set_trainable(const ParamList<T>& params, bool trainable) {
  for (auto* p : params) p->trainable = trainable;
}

// Numerically stable row-wise softmax.
template <class T>
Mat<T> softmax_rows(const Mat<T>& x) {
  Mat<T> out(x.rows(), x.cols());
  for (long r = 0; r < x.rows(); ++r) {
    const T mx = x.row(r).maxCoeff();
    T sum = 0;
    for (long c = 0; c < x.cols(); ++c) {
      const T e = std::isinf(x(r, c)) && x(r, c) < 0 ? T(0) : std::exp(x(r, c) - mx);
      out(r, c) = e;
      sum += e;
    }
    out.row(r) /= sum;
  }
  return out;
}

template <class T>
std::vector<T> log_softmax(const T* logits, long n) {
  T mx = logits[0];
  for (long i = 1; i < n; ++i) mx = std::max(mx, logits[i]);
  T sum = 0;
  for (long i = 0; i < n; ++i) sum += std::exp(logits[i] - mx);
  const T lse = mx + std::log(sum);
  std::vector<T> out(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = logits[i] - lse;
  return out;
}

// Sinusoidal position table (rows = positions).
template <class T>
Mat<T> sinusoidal_positions(long n, long dim) {
  Mat<T> pe(n, dim);
  for (long p = 0; p < n; ++p) {
    for (long i = 0; i < dim; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      pe(p, i) = static_cast<T>(i % 2 == 0 ? std::sin(p * rate) : std::cos(p * rate));
    }
  }
  return pe;
}

template <class To, class From>
Mat<To> cast_mat(const Mat<From>& m) {
  return m.template cast<To>();
}

}  // namespace toktide
