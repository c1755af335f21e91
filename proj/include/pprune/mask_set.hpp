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

#ifndef PPRUNE_MASK_SET_HPP_
#define PPRUNE_MASK_SET_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pprune/archive.hpp"
#include "pprune/matrix.hpp"
#include "pprune/module_address.hpp"

namespace pprune {

struct MaskProvenance {
  std::string method;
  double rho = 0.0;
  std::string overrides;        // rendered SparsityPlan overrides, "" if none
  std::string persona;
  std::string counter_persona;  // set for contrastive pairs
  std::string sources;          // identifiers of the statistics used
  std::uint64_t seed = 42;
  std::vector<std::string> restored;  // modules re-densified by restore_layer

  friend bool operator==(const MaskProvenance&, const MaskProvenance&) = default;
};

/// Binary masks keyed by module, i.e. one persona subnetwork. Entries are
/// 0.0 or 1.0 floats so masks share the weight container. Embedding and
/// LM-head tensors never appear here.
class MaskSet {
 public:
  /// Inserts or replaces a module mask. Throws ValidationError on a
  /// non-binary entry or an empty matrix.
  void set(const ModuleAddress& addr, Matrix mask);

  const Matrix* find(const ModuleAddress& addr) const;
  const Matrix& at(const ModuleAddress& addr) const;
  bool contains(const ModuleAddress& addr) const { return masks_.contains(addr); }

  const std::map<ModuleAddress, Matrix>& masks() const { return masks_; }
  std::size_t size() const { return masks_.size(); }

  MaskProvenance& provenance() { return provenance_; }
  const MaskProvenance& provenance() const { return provenance_; }

  /// Every mask entry set to one, same shapes as `like`.
  static MaskSet all_ones_like(const MaskSet& like);

  friend bool operator==(const MaskSet&, const MaskSet&) = default;

 private:
  std::map<ModuleAddress, Matrix> masks_;
  MaskProvenance provenance_;
};

using MaskRef = std::shared_ptr<const MaskSet>;

/// Throws ShapeError naming the first module whose set or shape differs.
void require_same_layout(const MaskSet& a, const MaskSet& b);

TensorArchive maskset_to_archive(const MaskSet& masks);
MaskSet maskset_from_archive(const TensorArchive& archive);

void write_maskset(const std::filesystem::path& path, const MaskSet& masks);
MaskSet read_maskset(const std::filesystem::path& path);

}  // namespace pprune

#endif  // PPRUNE_MASK_SET_HPP_
