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

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "toktide/caption/text.hpp"

namespace toktide::metrics {

inline constexpr int kMaxN = 4;
inline constexpr double kLengthSigma = 6.0;

using NGram = std::vector<std::string>;
using NGramCounts = std::map<NGram, double>;

// Term frequencies of all 1..4-grams of a word sequence.
struct NGramStats {
  std::array<NGramCounts, kMaxN> counts;
  std::size_t length = 0;

  static NGramStats of(const std::vector<std::string>& words) {
    NGramStats s;
    s.length = words.size();
    for (int n = 1; n <= kMaxN; ++n)
      for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= words.size(); ++i)
        s.counts[static_cast<std::size_t>(n - 1)][NGram(words.begin() + static_cast<long>(i),
                                                        words.begin() + static_cast<long>(i) + n)] += 1.0;
    return s;
  }
};

struct CiderResult {
  double corpus = 0;
  std::vector<double> per_clip;
};

namespace detail {

struct Weighted {
  std::array<NGramCounts, kMaxN> vec;
  std::array<double, kMaxN> norm{};
  std::size_t length = 0;
};

inline Weighted tfidf(const NGramStats& s, const std::array<std::map<NGram, double>, kMaxN>& df, double log_n) {
  Weighted w;
  w.length = s.length;
  for (std::size_t n = 0; n < kMaxN; ++n) {
    for (const auto& [g, tf] : s.counts[n]) {
      auto it = df.at(n).find(g);
      const double d = it == df.at(n).end() ? 0.0 : it->second;
      const double v = tf * (log_n - std::log(std::max(1.0, d)));
      w.vec[n][g] = v;
      w.norm[n] += v * v;
    }
    w.norm[n] = std::sqrt(w.norm[n]);
  }
  return w;
}

inline double similarity(const Weighted& c, const Weighted& r, std::size_t n) {
  double dot = 0;
  for (const auto& [g, vc] : c.vec[n]) {
    auto it = r.vec[n].find(g);
    if (it != r.vec[n].end()) dot += std::min(vc, it->second) * it->second;
  }
  if (c.norm[n] == 0 || r.norm[n] == 0) return 0;
  const double delta = static_cast<double>(c.length) - static_cast<double>(r.length);
  return dot / (c.norm[n] * r.norm[n]) * std::exp(-(delta * delta) / (2 * kLengthSigma * kLengthSigma));
}

}  // namespace detail

// CIDEr-D over a corpus. Document frequencies come from the reference sets;
// captions are normalized with the captioner's text rules.
inline CiderResult cider_d(const std::vector<std::string>& candidates,
                           const std::vector<std::vector<std::string>>& references) {
  if (candidates.size() != references.size())
    throw DataError("cider_d: " + std::to_string(candidates.size()) + " candidates vs " +
                    std::to_string(references.size()) + " reference sets");
  CiderResult res;
  if (candidates.empty()) return res;
  std::vector<std::vector<NGramStats>> ref_stats(references.size());
  std::array<std::map<NGram, double>, kMaxN> df;
  for (std::size_t i = 0; i < references.size(); ++i) {
    if (references[i].empty()) throw DataError("cider_d: clip " + std::to_string(i) + " has no references");
    std::array<std::set<NGram>, kMaxN> seen;
    for (const auto& r : references[i]) {
      ref_stats[i].push_back(NGramStats::of(text::normalize_words(r)));
      for (std::size_t n = 0; n < kMaxN; ++n)
        for (const auto& kv : ref_stats[i].back().counts[n]) seen[n].insert(kv.first);
    }
    for (std::size_t n = 0; n < kMaxN; ++n)
      for (const auto& g : seen[n]) df[n][g] += 1.0;
  }
  const double log_n = std::log(static_cast<double>(references.size()));
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto words = text::normalize_words(candidates[i]);
    if (words.empty()) {
      std::cerr << "warning: empty candidate caption for clip " << i << ", scored 0\n";
      res.per_clip.push_back(0.0);
      continue;
    }
    const auto c = detail::tfidf(NGramStats::of(words), df, log_n);
    double score = 0;
    for (std::size_t n = 0; n < kMaxN; ++n) {
      double sum = 0;
      for (const auto& rs : ref_stats[i]) sum += detail::similarity(c, detail::tfidf(rs, df, log_n), n);
      score += sum / static_cast<double>(ref_stats[i].size());
    }
    res.per_clip.push_back(score / kMaxN * 10.0);
  }
  double total = 0;
  for (double s : res.per_clip) total += s;
  res.corpus = total / static_cast<double>(res.per_clip.size());
  return res;
}

// Number of distinct normalized words across all captions.
inline std::size_t unique_words(const std::vector<std::string>& captions) {
  std::set<std::string> seen;
  for (const auto& c : captions)
    for (auto& w : text::normalize_words(c)) seen.insert(std::move(w));
  return seen.size();
}

// Per-class F1 with predictions thresholded at `threshold`, averaged with equal
// class weight. A class absent from both predictions and labels scores 1.
template <class Derived1, class Derived2>
double macro_f1(const Eigen::MatrixBase<Derived1>& probs, const Eigen::MatrixBase<Derived2>& labels,
                double threshold = 0.5) {
  if (probs.rows() != labels.rows() || probs.cols() != labels.cols())
    throw ShapeError("macro_f1: probs " + shape_str(probs.rows(), probs.cols()) + " vs labels " +
                     shape_str(labels.rows(), labels.cols()));
  if (probs.cols() == 0) return 0;
  double total = 0;
  for (long c = 0; c < probs.cols(); ++c) {
    double tp = 0, fp = 0, fn = 0;
    for (long i = 0; i < probs.rows(); ++i) {
      const bool p = static_cast<double>(probs(i, c)) >= threshold;
      const bool l = static_cast<double>(labels(i, c)) >= 0.5;
      tp += p && l;
      fp += p && !l;
      fn += !p && l;
    }
    total += tp + fp + fn == 0 ? 1.0 : 2 * tp / (2 * tp + fp + fn);
  }
  return total / static_cast<double>(probs.cols());
}

}  // namespace toktide::metrics
