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

#ifndef PPRUNE_ARCHIVE_HPP_
#define PPRUNE_ARCHIVE_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pprune/matrix.hpp"

namespace pprune {

inline constexpr char kArchiveMagic[4] = {'P', 'P', 'T', '1'};

// Values for the `kind` metadata key.
inline constexpr std::string_view kKindWeights = "weights";
inline constexpr std::string_view kKindMask = "mask";
inline constexpr std::string_view kKindStats = "stats";
inline constexpr std::string_view kKindScores = "scores";

inline constexpr std::string_view kToolVersion = "pprune 0.1.0";

/// Ordered collection of named float matrices plus string metadata. This is
/// the on-disk container for weights, masks, statistics and score dumps.
class TensorArchive {
 public:
  using Entry = std::pair<std::string, Matrix>;

  /// Appends a tensor. Throws ValidationError on an empty or duplicate name.
  void add(std::string name, Matrix matrix);

  /// Replaces an existing tensor or appends a new one.
  void set(const std::string& name, Matrix matrix);

  bool contains(std::string_view name) const;
  const Matrix* find(std::string_view name) const;
  /// Throws ValidationError naming the tensor when absent.
  const Matrix& at(std::string_view name) const;

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::map<std::string, std::string>& meta() { return meta_; }
  const std::map<std::string, std::string>& meta() const { return meta_; }
  std::string meta_or(const std::string& key, std::string fallback) const;

  friend bool operator==(const TensorArchive&, const TensorArchive&) = default;

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::string> meta_;
};

struct ReadOptions {
  bool allow_nonfinite = false;
};

/// Checks every archive invariant: unique non-empty names, non-degenerate
/// shapes, consistent data length, and (unless allowed) finite values.
/// Throws ValidationError naming the first offending tensor.
void validate_archive(const TensorArchive& archive, bool allow_nonfinite = false);

/// Serializes to a byte buffer: magic, u64 LE header length, JSON header,
/// little-endian float payloads in header order.
std::vector<std::uint8_t> encode_archive(const TensorArchive& archive);
TensorArchive decode_archive(std::span<const std::uint8_t> bytes,
                             const ReadOptions& options = {});

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path,
                           const ReadOptions& options = {});

/// Shortest round-trip decimal rendering, used for numeric metadata.
std::string format_number(double value);
double parse_number(std::string_view text, std::string_view what);
std::uint64_t parse_count(std::string_view text, std::string_view what);

}  // namespace pprune

#endif  // PPRUNE_ARCHIVE_HPP_
