// Copyright 2026 The pprune Authors.
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

#include "pprune/archive.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "pprune/error.hpp"

namespace pprune {
namespace {

using nlohmann::json;

constexpr std::size_t kPrefixBytes = sizeof(kArchiveMagic) + sizeof(std::uint64_t);

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_f32(std::uint8_t* p, float value) {
  const auto bits = std::bit_cast<std::uint32_t>(value);
  for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(bits >> (8 * i));
}

float get_f32(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

std::uint64_t header_u64(const json& entry, const char* key, const std::string& name) {
  const auto it = entry.find(key);
  if (it == entry.end() || !it->is_number_unsigned()) {
    throw FormatError("archive header: tensor '" + name + "' lacks unsigned field '" +
                      key + "'");
  }
  return it->get<std::uint64_t>();
}

}  // namespace

void TensorArchive::add(std::string name, Matrix matrix) {
  if (name.empty()) throw ValidationError("tensor name must be non-empty");
  if (contains(name)) throw ValidationError("duplicate tensor name '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(matrix));
}

void TensorArchive::set(const std::string& name, Matrix matrix) {
  for (auto& [n, m] : entries_) {
    if (n == name) {
      m = std::move(matrix);
      return;
    }
  }
  add(name, std::move(matrix));
}

bool TensorArchive::contains(std::string_view name) const { return find(name) != nullptr; }

const Matrix* TensorArchive::find(std::string_view name) const {
  for (const auto& [n, m] : entries_) {
    if (n == name) return &m;
  }
  return nullptr;
}

const Matrix& TensorArchive::at(std::string_view name) const {
  if (const Matrix* m = find(name)) return *m;
  throw ValidationError("missing tensor '" + std::string(name) + "'");
}

std::string TensorArchive::meta_or(const std::string& key, std::string fallback) const {
  const auto it = meta_.find(key);
  return it == meta_.end() ? std::move(fallback) : it->second;
}

void validate_archive(const TensorArchive& archive, bool allow_nonfinite) {
  std::vector<std::string_view> names;
  names.reserve(archive.size());
  for (const auto& [name, m] : archive.entries()) {
    if (name.empty()) throw ValidationError("tensor with empty name");
    names.push_back(name);
    if (m.rows() == 0 || m.cols() == 0) {
      throw ValidationError("tensor '" + name + "' has a zero dimension");
    }
    if (m.data().size() != m.rows() * m.cols()) {
      throw ValidationError("tensor '" + name + "' data length does not match shape");
    }
    if (!allow_nonfinite) {
      const auto bad = std::find_if(m.data().begin(), m.data().end(),
                                    [](float v) { return !std::isfinite(v); });
      if (bad != m.data().end()) {
        throw ValidationError("tensor '" + name + "' has a non-finite value at index " +
                              std::to_string(bad - m.data().begin()));
      }
    }
  }
  std::sort(names.begin(), names.end());
  const auto dup = std::adjacent_find(names.begin(), names.end());
  if (dup != names.end()) {
    throw ValidationError("duplicate tensor name '" + std::string(*dup) + "'");
  }
}

std::vector<std::uint8_t> encode_archive(const TensorArchive& archive) {
  validate_archive(archive, /*allow_nonfinite=*/true);

  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : archive.entries()) {
    const std::uint64_t nbytes = m.size() * sizeof(float);
    tensors.push_back({{"name", name},
                       {"rows", m.rows()},
                       {"cols", m.cols()},
                       {"offset", offset},
                       {"nbytes", nbytes}});
    offset += nbytes;
  }
  json header = {{"meta", archive.meta()}, {"tensors", std::move(tensors)}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(kPrefixBytes + text.size() + offset);
  out.insert(out.end(), std::begin(kArchiveMagic), std::end(kArchiveMagic));
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  const std::size_t payload_start = out.size();
  out.resize(payload_start + offset);
  std::uint8_t* p = out.data() + payload_start;
  for (const auto& entry : archive.entries()) {
    for (float v : entry.second.data()) {
      put_f32(p, v);
      p += sizeof(float);
    }
  }
  return out;
}

TensorArchive decode_archive(std::span<const std::uint8_t> bytes,
                             const ReadOptions& options) {
  if (bytes.size() < kPrefixBytes ||
      !std::equal(std::begin(kArchiveMagic), std::end(kArchiveMagic), bytes.begin())) {
    throw FormatError("bad magic: not a PPT1 archive");
  }
  const std::uint64_t header_len = get_u64(bytes.data() + sizeof(kArchiveMagic));
  if (header_len > bytes.size() - kPrefixBytes) {
    throw FormatError("archive header length " + std::to_string(header_len) +
                      " exceeds file size");
  }
  const auto header_begin = reinterpret_cast<const char*>(bytes.data() + kPrefixBytes);
  json header;
  try {
    header = json::parse(header_begin, header_begin + header_len);
  } catch (const json::exception& e) {
    throw FormatError(std::string("archive header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("tensors") ||
      !header["tensors"].is_array()) {
    throw FormatError("archive header lacks a 'tensors' array");
  }

  TensorArchive archive;
  if (auto it = header.find("meta"); it != header.end()) {
    if (!it->is_object()) throw FormatError("archive header 'meta' is not an object");
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) throw FormatError("archive meta value for '" + k + "' is not a string");
      archive.meta()[k] = v.get<std::string>();
    }
  }

  const std::span<const std::uint8_t> payload = bytes.subspan(kPrefixBytes + header_len);
  std::uint64_t declared = 0;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  for (const auto& entry : header["tensors"]) {
    if (!entry.is_object() || !entry.contains("name") || !entry["name"].is_string()) {
      throw FormatError("archive header: tensor entry without a name");
    }
    const std::string name = entry["name"].get<std::string>();
    const std::uint64_t rows = header_u64(entry, "rows", name);
    const std::uint64_t cols = header_u64(entry, "cols", name);
    const std::uint64_t offset = header_u64(entry, "offset", name);
    const std::uint64_t nbytes = header_u64(entry, "nbytes", name);
    if (nbytes != rows * cols * sizeof(float)) {
      throw FormatError("tensor '" + name + "': nbytes does not match " +
                        std::to_string(rows) + "x" + std::to_string(cols));
    }
    if (offset > payload.size() || nbytes > payload.size() - offset) {
      throw FormatError("truncated payload for tensor '" + name + "': needs bytes [" +
                        std::to_string(offset) + ", " + std::to_string(offset + nbytes) +
                        ") but payload has " + std::to_string(payload.size()));
    }
    std::vector<float> data(rows * cols);
    const std::uint8_t* p = payload.data() + offset;
    for (auto& v : data) {
      v = get_f32(p);
      p += sizeof(float);
    }
    Matrix m;
    try {
      m = Matrix(rows, cols, std::move(data));
    } catch (const ShapeError& e) {
      throw FormatError("tensor '" + name + "': " + e.what());
    }
    archive.add(name, std::move(m));
    declared += nbytes;
    ranges.emplace_back(offset, offset + nbytes);
  }
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) {
      throw FormatError("archive tensors have overlapping payload ranges");
    }
  }
  if (declared != payload.size()) {
    throw FormatError("archive payload is " + std::to_string(payload.size()) +
                      " bytes but the header declares " + std::to_string(declared));
  }
  validate_archive(archive, options.allow_nonfinite);
  return archive;
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  const auto bytes = encode_archive(archive);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

TensorArchive read_archive(const std::filesystem::path& path, const ReadOptions& options) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_archive(bytes, options);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string format_number(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

double parse_number(std::string_view text, std::string_view what) {
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ValidationError("invalid number '" + std::string(text) + "' for " +
                          std::string(what));
  }
  return value;
}

std::uint64_t parse_count(std::string_view text, std::string_view what) {
  std::uint64_t value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ValidationError("invalid count '" + std::string(text) + "' for " +
                          std::string(what));
  }
  return value;
}

}  // namespace pprune
