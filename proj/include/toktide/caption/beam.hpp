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
#include <functional>
#include <limits>
#include <vector>

#include "toktide/error.hpp"

namespace toktide::caption {

struct BeamHypothesis {
  std::vector<int> tokens;  // generated ids (no bos); ends with eos iff finished
  double log_prob = 0;
  bool finished = false;
};

struct BeamResult {
  BeamHypothesis best;
  std::vector<BeamHypothesis> retired;  // every finished hypothesis set aside, in retirement order
  int steps = 0;
};

// Log-probabilities of the next token given bos + `prefix`.
using NextLogProbs = std::function<std::vector<double>(const std::vector<int>& prefix)>;

// Beam search without length normalization. At each step the `beam_size` best
// extensions are kept; extensions ending in eos are retired, so the live beam
// shrinks as hypotheses finish. Ties are broken by parent rank, then by lower
// token id. Search stops when no live hypothesis remains, when the best
// retired score is at least the best live score (scores only decrease), or at
// max_len.
inline BeamResult beam_search(const NextLogProbs& next, int eos, int beam_size, int max_len) {
  if (beam_size < 1) throw ConfigError("beam_size must be >= 1");
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  struct Candidate {
    double score;
    std::size_t parent;
    int token;
  };
  BeamResult res;
  std::vector<BeamHypothesis> live{BeamHypothesis{}};
  auto best_retired = [&] {
    double b = -std::numeric_limits<double>::infinity();
    for (const auto& h : res.retired) b = std::max(b, h.log_prob);
    return b;
  };
  for (int step = 0; step < max_len && !live.empty(); ++step) {
    res.steps = step + 1;
    std::vector<Candidate> cands;
    for (std::size_t r = 0; r < live.size(); ++r) {
      const auto lp = next(live[r].tokens);
      for (std::size_t v = 0; v < lp.size(); ++v)
        if (lp[v] > -std::numeric_limits<double>::infinity())
          cands.push_back({live[r].log_prob + lp[v], r, static_cast<int>(v)});
    }
    const std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(beam_size));
    std::partial_sort(cands.begin(), cands.begin() + static_cast<long>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<BeamHypothesis> next_live;
    for (std::size_t i = 0; i < keep; ++i) {
      BeamHypothesis h = live[cands[i].parent];
      h.tokens.push_back(cands[i].token);
      h.log_prob = cands[i].score;
      if (cands[i].token == eos) {
        h.finished = true;
        res.retired.push_back(std::move(h));
      } else {
        next_live.push_back(std::move(h));
      }
    }
    live = std::move(next_live);
    if (!live.empty() && !res.retired.empty() && best_retired() >= live.front().log_prob) break;
  }
  if (!res.retired.empty()) {
    // stable: the earliest-retired hypothesis wins ties
    res.best = *std::max_element(res.retired.begin(), res.retired.end(),
                                 [](const BeamHypothesis& a, const BeamHypothesis& b) { return a.log_prob < b.log_prob; });
  } else if (!live.empty()) {
    res.best = live.front();
  }
  return res;
}

// Argmax decoding with the same lowest-id tie-break.
inline BeamHypothesis greedy_decode(const NextLogProbs& next, int eos, int max_len) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  BeamHypothesis h;
  for (int step = 0; step < max_len; ++step) {
    const auto lp = next(h.tokens);
    const auto it = std::max_element(lp.begin(), lp.end());
    h.tokens.push_back(static_cast<int>(it - lp.begin()));
    h.log_prob += *it;
    if (h.tokens.back() == eos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

}  // namespace toktide::caption
