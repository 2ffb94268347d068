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
#include <cctype>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "toktide/error.hpp"

namespace toktide::text {

inline constexpr std::string_view kStripChars = ".,!?;:'\"()-";

// Lowercases, drops the characters in kStripChars and splits on whitespace.
inline std::vector<std::string> normalize_words(std::string_view s) {
  std::string clean;
  clean.reserve(s.size());
  for (char c : s) {
    if (kStripChars.find(c) != std::string_view::npos) continue;
    clean.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  std::istringstream in(clean);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

inline std::string normalize(std::string_view s) { return join_words(normalize_words(s)); }

class Vocab {
 public:
  static constexpr int kPad = 0, kBos = 1, kEos = 2, kUnk = 3;
  static constexpr int kNumSpecial = 4;

  Vocab() : words_{"<pad>", "<bos>", "<eos>", "<unk>"} {}

  // Specials first, then the distinct normalized words in sorted order.
  static Vocab build(const std::vector<std::string>& captions) {
    std::set<std::string> seen;
    for (const auto& c : captions)
      for (auto& w : normalize_words(c)) seen.insert(std::move(w));
    return from_words(std::vector<std::string>(seen.begin(), seen.end()));
  }

  static Vocab from_words(const std::vector<std::string>& words) {
    Vocab v;
    for (const auto& w : words) {
      if (v.ids_.count(w)) throw DataError("duplicate vocabulary word: " + w);
      v.ids_[w] = static_cast<int>(v.words_.size());
      v.words_.push_back(w);
    }
    return v;
  }

  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }
  // Non-special words in id order.
  std::vector<std::string> content_words() const { return {words_.begin() + kNumSpecial, words_.end()}; }

  int id(const std::string& w) const {
    auto it = ids_.find(w);
    return it == ids_.end() ? kUnk : it->second;
  }
  const std::string& word(int id) const {
    if (id < 0 || id >= size()) throw DataError("token id " + std::to_string(id) + " outside vocabulary");
    return words_[static_cast<std::size_t>(id)];
  }

  // Normalized word ids, without bos/eos.
  std::vector<int> encode(std::string_view caption) const {
    auto words = normalize_words(caption);
    if (words.empty()) throw DataError("caption is empty after normalization: \"" + std::string(caption) + "\"");
    std::vector<int> ids;
    for (const auto& w : words) ids.push_back(id(w));
    return ids;
  }

  // bos + words + eos.
  std::vector<int> encode_wrapped(std::string_view caption) const {
    std::vector<int> ids{kBos};
    for (int i : encode(caption)) ids.push_back(i);
    ids.push_back(kEos);
    return ids;
  }

  // Stops at eos; skips pad and bos.
  std::string decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    for (int i : ids) {
      if (i == kEos) break;
      if (i == kPad || i == kBos) continue;
      out.push_back(word(i));
    }
    return join_words(out);
  }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
};

}  // namespace toktide::text
