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

#ifndef PPRUNE_MASKING_HPP_
#define PPRUNE_MASKING_HPP_

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pprune/archive.hpp"
#include "pprune/mask_set.hpp"
#include "pprune/matrix.hpp"
#include "pprune/module_address.hpp"
#include "pprune/scoring.hpp"

namespace pprune {

/// K = floor((1 - rho) * n), with a 1e-9 guard so that e.g. rho = 0.8,
/// n = 5 gives 1 rather than 0 after binary rounding.
std::size_t keep_count(double rho, std::size_t n);

/// Row-wise Top-K. Per row the K largest scores are kept, ties going to the
/// lowest column. Throws ValidationError if rho is outside (0, 1) or K = 0.
Matrix topk_mask(const ScoreMatrix& scores, double rho);

/// Module selector used by SparsityPlan overrides:
///   mlp | attention | q_proj ... down_proj | mlp.up_proj
///   layers.3 | layers.0-5 | layers.0-5.mlp | layers.2.mlp.down_proj
struct ModulePattern {
  std::optional<std::pair<std::size_t, std::size_t>> layers;  // inclusive
  std::optional<Block> block;
  std::optional<Slot> slot;

  static ModulePattern parse(std::string_view text);
  bool matches(const ModuleAddress& addr) const;
  /// Number of constrained fields; the larger value wins.
  int specificity() const;
  std::string str() const;

  friend bool operator==(const ModulePattern&, const ModulePattern&) = default;
};

class SparsityPlan {
 public:
  struct Override {
    ModulePattern pattern;
    double rho;
  };

  explicit SparsityPlan(double global_rho = 0.5);

  /// Adds `pattern=rho`. Throws ValidationError on rho outside (0, 1) or a
  /// repeated pattern.
  void add_override(const ModulePattern& pattern, double rho);
  void add_override(std::string_view spec);

  /// Most specific matching override, else the global ratio. Throws
  /// ValidationError when two equally specific overrides disagree.
  double resolve(const ModuleAddress& addr) const;

  double global_rho() const { return global_rho_; }
  const std::vector<Override>& overrides() const { return overrides_; }
  std::string describe_overrides() const;

 private:
  double global_rho_;
  std::vector<Override> overrides_;
};

/// Top-K mask per scored module at its resolved ratio.
MaskSet build_maskset(const ImportanceScores& scores, const SparsityPlan& plan,
                      unsigned threads = 1);

/// Disjoint pair for one module. The plus mask is Top-K with positions whose
/// winner is negative ranked last (ties resolved by linear-index parity:
/// even to plus, odd to minus). The minus mask is Top-K over minus scores
/// with every plus position excluded. Without exclusion both are plain
/// Top-K of their own scores.
std::pair<Matrix, Matrix> contrastive_pair(const ScoreMatrix& plus,
                                           const ScoreMatrix& minus,
                                           const WinnerMatrix& winner,
                                           double rho, bool exclusion);

std::pair<MaskSet, MaskSet> contrastive_masksets(
    const ImportanceScores& plus, const ImportanceScores& minus,
    const std::map<ModuleAddress, WinnerMatrix>& winner,
    const SparsityPlan& plan, bool exclusion = true, unsigned threads = 1);

/// Convenience over contrastive_masksets: the exclusive pair from the
/// contrastive scores, or each persona's baseline Top-K without exclusion.
std::pair<MaskSet, MaskSet> contrastive_masksets(const ContrastiveScores& scores,
                                                 const SparsityPlan& plan,
                                                 bool exclusion = true,
                                                 unsigned threads = 1);

struct MaskMix {
  MaskSet masks;
  double fraction;  // in (0, 1]
};

/// Per module and source, keeps floor(fraction * selected) of the source's
/// selected positions with the largest |W| (ties: lowest linear index) and
/// unions the kept positions.
MaskSet compose_masks(const std::vector<MaskMix>& entries,
                      const TensorArchive& base_weights);

/// Copy of `masks` with `addr` all ones. Throws ValidationError when absent.
MaskSet restore_layer(const MaskSet& masks, const ModuleAddress& addr);

struct DensityReport {
  std::vector<std::pair<ModuleAddress, double>> per_module;
  double aggregate = 0.0;
};

DensityReport mask_density(const MaskSet& masks);

}  // namespace pprune

#endif  // PPRUNE_MASKING_HPP_
