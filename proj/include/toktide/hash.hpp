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

#include <openssl/evp.h>

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "toktide/io.hpp"

// Content hashes for run records (requires linking OpenSSL::Crypto).
namespace toktide::hash {

inline std::string hex_digest(const EVP_MD* md, const std::string& data) {
  unsigned char out[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  if (EVP_Digest(data.data(), data.size(), out, &n, md, nullptr) != 1) throw Error("digest computation failed");
  static const char* digits = "0123456789abcdef";
  std::string hex;
  for (unsigned int i = 0; i < n; ++i) {
    hex += digits[out[i] >> 4];
    hex += digits[out[i] & 15];
  }
  return hex;
}

inline std::string sha256(const std::string& data) { return hex_digest(EVP_sha256(), data); }

// Same digest git assigns to a blob with these contents.
inline std::string git_blob_sha1(const std::string& content) {
  return hex_digest(EVP_sha1(), "blob " + std::to_string(content.size()) + std::string(1, '\0') + content);
}

// Hash over a set of files, in the spirit of a git tree: each file
// contributes "<relative path> <blob sha1>\n", sorted by path.
inline std::string tree_hash(const std::vector<std::filesystem::path>& roots) {
  std::vector<std::string> lines;
  for (const auto& root : roots) {
    if (std::filesystem::is_regular_file(root)) {
      lines.push_back(root.filename().string() + " " + git_blob_sha1(io::read_text(root)));
      continue;
    }
    if (!std::filesystem::is_directory(root)) throw DataError("cannot hash missing input " + root.string());
    for (const auto& e : std::filesystem::recursive_directory_iterator(root))
      if (e.is_regular_file() && e.path().extension() != ".partial")
        lines.push_back(std::filesystem::relative(e.path(), root.parent_path()).generic_string() + " " +
                        git_blob_sha1(io::read_text(e.path())));
  }
  std::sort(lines.begin(), lines.end());
  std::string all;
  for (const auto& l : lines) all += l + "\n";
  return git_blob_sha1(all);
}

}  // namespace toktide::hash
