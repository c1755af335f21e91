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

#ifndef PPRUNE_SCORING_HPP_
#define PPRUNE_SCORING_HPP_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>

#include "pprune/archive.hpp"
#include "pprune/calibration.hpp"
#include "pprune/matrix.hpp"
#include "pprune/module_address.hpp"

namespace pprune {

enum class ScoreMethod { kWanda, kRefined, kWandaContrast, kSparseContrast };
ScoreMethod parse_score_method(std::string_view text);
std::string_view score_method_name(ScoreMethod method);
bool is_contrastive(ScoreMethod method);

enum class Phi { kRelu, kSoftplus };
Phi parse_phi(std::string_view text);
std::string_view phi_name(Phi phi);
double apply_phi(Phi phi, double z);

enum class Target { kPlus, kMinus };

struct ContrastParams {
  Phi phi = Phi::kRelu;
  double epsilon = 1e-8;
};

/// +1 / -1 / 0 per position: which persona holds the larger score.
using WinnerMatrix = BasicMatrix<std::int8_t>;

/// S_ij = |W_ij| * A[j].
ScoreMatrix score_wanda(const Matrix& weight, std::span<const double> abs_mean);

/// S_ij = |W_ij| * sqrt(hdiag[j]). Throws ValidationError on hdiag <= 0.
ScoreMatrix score_refined(const Matrix& weight, std::span<const double> hdiag);

/// Per-column standardized mean difference
///   z[j] = (mu+[j] - mu-[j]) / (sqrt(var+[j] + var-[j]) + eps)
/// (numerator negated for Target::kMinus).
std::vector<double> standardized_difference(const ModuleStats& plus,
                                            const ModuleStats& minus,
                                            double epsilon, Target target);

/// S_ij = |W_ij| * phi(z[j]).
ScoreMatrix score_contrastive_wanda(const Matrix& weight, const ModuleStats& plus,
                                    const ModuleStats& minus,
                                    const ContrastParams& params, Target target);

/// Each row divided by its sum; all-zero rows become uniform 1/n.
/// Throws ValidationError on a negative entry.
ScoreMatrix normalize_rows(const ScoreMatrix& scores);

struct ContrastiveSparse {
  ScoreMatrix contrast;  // |norm(S+) - norm(S-)|
  WinnerMatrix winner;
};

ContrastiveSparse score_contrastive_sparse(const ScoreMatrix& plus,
                                          const ScoreMatrix& minus);

/// sign(plus - minus) elementwise.
WinnerMatrix winner_of(const ScoreMatrix& plus, const ScoreMatrix& minus);

struct ImportanceScores {
  std::map<ModuleAddress, ScoreMatrix> modules;
  ScoreMethod method = ScoreMethod::kWanda;
  std::string persona;
  std::string counter_persona;
  ContrastParams params;
  double lambda = 0.0;
  std::uint64_t seed = 42;

  const ScoreMatrix& at(const ModuleAddress& addr) const;
};

/// Scores every module present in `stats` (wanda or refined).
ImportanceScores score_model(const TensorArchive& weights,
                             const ActivationStats& stats, ScoreMethod method,
                             unsigned threads = 1);

/// Inputs for a contrastive mask pair.
///   plus/minus: ranking scores for each side (both equal the contrast
///               matrix for kSparseContrast).
///   winner:     allocation of contested positions.
///   baseline_*: each persona's own Wanda scores, for the non-exclusive
///               ablation.
struct ContrastiveScores {
  ImportanceScores plus;
  ImportanceScores minus;
  std::map<ModuleAddress, WinnerMatrix> winner;
  ImportanceScores baseline_plus;
  ImportanceScores baseline_minus;
};

/// Throws ShapeError when the two stats do not share a layout.
ContrastiveScores score_contrastive(const TensorArchive& weights,
                                    const ActivationStats& plus,
                                    const ActivationStats& minus,
                                    ScoreMethod method,
                                    const ContrastParams& params,
                                    unsigned threads = 1);

/// Debug dump, kind=scores. Values are rounded to float.
TensorArchive scores_to_archive(const ImportanceScores& scores);

}  // namespace pprune

#endif  // PPRUNE_SCORING_HPP_
