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

#ifndef PPRUNE_ANALYSIS_HPP_
#define PPRUNE_ANALYSIS_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pprune/mask_set.hpp"
#include "pprune/model.hpp"
#include "pprune/module_address.hpp"
#include "pprune/report.hpp"
#include "pprune/tokens.hpp"

namespace pprune {

enum class Grouping { kAll, kByBlock, kByLayer };
Grouping parse_grouping(std::string_view text);

struct GroupRatio {
  std::string group;
  std::uint64_t differing = 0;
  std::uint64_t total = 0;
  double ratio = 0.0;  // percent
};

struct ModuleOverlap {
  ModuleAddress addr;
  std::uint64_t intersection = 0;
  std::uint64_t union_count = 0;
  double jaccard = 1.0;
};

struct JaccardResult {
  std::vector<ModuleOverlap> per_module;
  std::uint64_t intersection = 0;
  std::uint64_t union_count = 0;
  double aggregate = 1.0;
};

struct SeparationReport {
  std::vector<GroupRatio> ratios;
  JaccardResult jaccard;
  std::map<std::string, std::string> meta;
};

/// Percentage of positions where the two masks disagree, per group. The
/// Jaccard part of the report is filled as well.
SeparationReport differential_ratio(const MaskSet& a, const MaskSet& b,
                                    Grouping grouping);

/// |a ∩ b| / |a ∪ b| over kept positions, per module and pooled. An empty
/// union counts as 1.
JaccardResult jaccard_overlap(const MaskSet& a, const MaskSet& b);

/// Cosine of two vectors; 1 when both are zero, 0 when only one is.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Hidden vector at `layer` pooled per probe and averaged over probes.
std::vector<double> pooled_hidden(const Model& model,
                                  const std::vector<TokenSequence>& probes,
                                  std::size_t layer, Pooling pooling);

/// Cosine between the pooled hidden vectors of `model` under masks a and b
/// (nullptr = dense) at one layer. The model's gamma is used for both.
double layer_cosine(const Model& model, const MaskRef& a, const MaskRef& b,
                    const std::vector<TokenSequence>& probes, std::size_t layer,
                    Pooling pooling);

struct RepresentationReport {
  std::vector<double> per_layer;
  Pooling pooling = Pooling::kLastToken;
  std::size_t probe_count = 0;
};

RepresentationReport representation_similarity(
    const Model& model, const MaskRef& a, const MaskRef& b,
    const std::vector<TokenSequence>& probes, Pooling pooling);

/// Jeffreys divergence KL(p||q) + KL(q||p) with both sides floored at `floor`.
double symmetric_kl(std::span<const double> p, std::span<const double> q,
                    double floor = 1e-12);

struct DivergenceResult {
  std::vector<double> per_probe;
  double mean = 0.0;
};

DivergenceResult behavioral_divergence(const Model& model, const MaskRef& a,
                                       const MaskRef& b,
                                       const std::vector<TokenSequence>& probes,
                                       unsigned threads = 1);

enum class RestoreMetric { kDivergenceToBase, kDivergenceToMasked };
RestoreMetric parse_restore_metric(std::string_view text);

struct RestorationRow {
  ModuleAddress addr;
  double value = 0.0;   // metric of the restored variant
  double effect = 0.0;  // ranking key, larger first
};

/// Re-densifies each module in turn. For kDivergenceToBase the value is the
/// divergence between the restored variant and the dense model and the
/// effect is how much restoring reduced it; for kDivergenceToMasked both are
/// the divergence between the restored variant and the masked model. Rows
/// are sorted by effect, descending, module order breaking ties.
std::vector<RestorationRow> restoration_sweep(
    const Model& model, const MaskSet& masks,
    const std::vector<TokenSequence>& probes, RestoreMetric metric,
    unsigned threads = 1);

ReportTable separation_table(const SeparationReport& report);
ReportTable jaccard_table(const JaccardResult& result);
ReportTable representation_table(const RepresentationReport& report);
ReportTable divergence_table(const DivergenceResult& result);
ReportTable restoration_table(const std::vector<RestorationRow>& rows,
                              RestoreMetric metric);

}  // namespace pprune

#endif  // PPRUNE_ANALYSIS_HPP_
