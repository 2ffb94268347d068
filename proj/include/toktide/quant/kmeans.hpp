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

#include <random>
#include <vector>

#include "toktide/quant/codebook.hpp"

namespace toktide::quant {

template <class T>
struct KMeansModel {
  Mat<T> centroids;                     // K x D
  std::vector<double> inertia_history;  // one entry per Lloyd iteration
  int iterations = 0;
  bool converged = false;

  Codebook<T> codebook() const { return Codebook<T>(centroids); }
};

// k-means++ seeding: first centroid uniform, then each next one sampled with
// probability proportional to squared distance from the nearest chosen one.
template <class T>
Mat<T> kmeans_plus_plus(const Mat<T>& x, long k, Rng& rng) {
  const long n = x.rows();
  Mat<T> c(k, x.cols());
  std::uniform_int_distribution<long> first(0, n - 1);
  c.row(0) = x.row(first(rng));
  std::vector<double> d2(static_cast<std::size_t>(n));
  for (long i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = static_cast<double>((x.row(i) - c.row(0)).squaredNorm());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (long j = 1; j < k; ++j) {
    double total = 0;
    for (double v : d2) total += v;
    long pick = 0;
    if (total <= 0) {
      pick = first(rng);
    } else {
      double r = u(rng) * total;
      for (pick = 0; pick < n - 1; ++pick) {
        r -= d2[static_cast<std::size_t>(pick)];
        if (r < 0) break;
      }
    }
    c.row(j) = x.row(pick);
    for (long i = 0; i < n; ++i)
      d2[static_cast<std::size_t>(i)] =
          std::min(d2[static_cast<std::size_t>(i)], static_cast<double>((x.row(i) - c.row(j)).squaredNorm()));
  }
  return c;
}

// Lloyd's algorithm. Each iteration assigns every point to its nearest
// centroid (recording the objective), then moves centroids to the mean of
// their points; empty clusters keep their previous centroid, so the objective
// never increases.
template <class T>
KMeansModel<T> kmeans_fit(const Mat<T>& x, long k, int max_iters, std::uint64_t seed) {
  if (k < 1) throw ConfigError("kmeans: K must be >= 1");
  if (x.rows() < k)
    throw DataError("kmeans: " + std::to_string(x.rows()) + " points cannot seed K=" + std::to_string(k) + " clusters");
  Rng rng(seed);
  KMeansModel<T> m;
  m.centroids = kmeans_plus_plus(x, k, rng);
  std::vector<int> assign(static_cast<std::size_t>(x.rows()), -1);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    double inertia = 0;
    for (long i = 0; i < x.rows(); ++i) {
      const Nearest nn = nearest_code(m.centroids, x.row(i).data(), x.cols());
      if (nn.index != assign[static_cast<std::size_t>(i)]) changed = true;
      assign[static_cast<std::size_t>(i)] = nn.index;
      inertia += nn.dist2;
    }
    m.inertia_history.push_back(inertia);
    m.iterations = it + 1;
    if (!changed) {
      m.converged = true;
      break;
    }
    Mat<double> sums = Mat<double>::Zero(k, x.cols());
    std::vector<long> counts(static_cast<std::size_t>(k), 0);
    for (long i = 0; i < x.rows(); ++i) {
      sums.row(assign[static_cast<std::size_t>(i)]) += x.row(i).template cast<double>();
      ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(i)])];
    }
    for (long j = 0; j < k; ++j)
      if (counts[static_cast<std::size_t>(j)] > 0)
        m.centroids.row(j) = (sums.row(j) / static_cast<double>(counts[static_cast<std::size_t>(j)])).template cast<T>();
  }
  return m;
}

}  // namespace toktide::quant
