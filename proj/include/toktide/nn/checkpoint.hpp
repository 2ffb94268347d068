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

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "toktide/io.hpp"
#include "toktide/nn/tensor.hpp"

// "TTWT" weight checkpoints: magic, u32 version, then one record per tensor
// until end of file: u32 name length, name bytes, u32 rank, rank x u64 dims,
// prod(dims) x f32 little-endian values.
namespace toktide::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::vector<std::uint64_t> shape;
  std::vector<float> values;
};

using TensorMap = std::map<std::string, TensorRecord>;

template <class T>
TensorRecord to_record(const Mat<T>& m, std::vector<std::uint64_t> shape = {}) {
  if (shape.empty()) shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  TensorRecord r{std::move(shape), {}};
  r.values.resize(static_cast<std::size_t>(m.size()));
  for (long i = 0; i < m.size(); ++i) r.values[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return r;
}

template <class T>
void from_record(const TensorRecord& r, Mat<T>& m, const std::string& name) {
  if (r.values.size() != static_cast<std::size_t>(m.size()))
    throw DataError("checkpoint tensor " + name + " has " + std::to_string(r.values.size()) + " values, expected " +
                    std::to_string(m.size()));
  for (long i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(r.values[static_cast<std::size_t>(i)]);
}

inline std::vector<char> encode_tensors(const std::vector<std::pair<std::string, TensorRecord>>& records) {
  io::Writer w;
  w.magic("TTWT");
  w.u32(kCheckpointVersion);
  for (const auto& [name, rec] : records) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(rec.shape.size()));
    for (auto d : rec.shape) w.u64(d);
    for (float v : rec.values) w.f32(v);
  }
  return w.buffer();
}

inline TensorMap decode_tensors(std::vector<char> bytes, const std::string& origin) {
  io::Reader r(std::move(bytes), origin);
  r.expect_magic("TTWT");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw DataError(origin + ": unsupported TTWT version " + std::to_string(version));
  TensorMap out;
  while (!r.done()) {
    std::string name = r.str();
    TensorRecord rec;
    const auto rank = r.u32();
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      rec.shape.push_back(r.u64());
      count *= rec.shape.back();
    }
    rec.values.resize(count);
    for (auto& v : rec.values) v = r.f32();
    out.emplace(std::move(name), std::move(rec));
  }
  return out;
}

template <class T>
std::vector<std::pair<std::string, TensorRecord>> param_records(const ParamList<T>& params) {
  std::vector<std::pair<std::string, TensorRecord>> recs;
  for (auto* p : params) recs.emplace_back(p->name, to_record(p->value, p->shape));
  return recs;
}

template <class T>
void load_params(const TensorMap& tensors, const ParamList<T>& params, const std::string& origin) {
  for (auto* p : params) {
    auto it = tensors.find(p->name);
    if (it == tensors.end()) throw DataError(origin + ": missing tensor " + p->name);
    if (it->second.shape != p->shape) throw DataError(origin + ": shape mismatch for " + p->name);
    from_record(it->second, p->value, p->name);
  }
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const ParamList<T>& params) {
  io::write_file_atomic(path, encode_tensors(param_records(params)));
}

template <class T>
void load_checkpoint(const std::filesystem::path& path, const ParamList<T>& params) {
  load_params(decode_tensors(io::read_file(path), path.string()), params, path.string());
}

}  // namespace toktide::nn
