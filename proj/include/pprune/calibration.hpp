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

#ifndef PPRUNE_CALIBRATION_HPP_
#define PPRUNE_CALIBRATION_HPP_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pprune/archive.hpp"
#include "pprune/matrix.hpp"
#include "pprune/model.hpp"
#include "pprune/module_address.hpp"
#include "pprune/tokens.hpp"

namespace pprune {

/// Running per-column sums for one module's input vectors.
struct ColumnSums {
  std::uint64_t n_obs = 0;
  std::vector<double> sum_abs;
  std::vector<double> sum;
  std::vector<double> sum_sq;

  std::size_t dim() const { return sum.size(); }
  friend bool operator==(const ColumnSums&, const ColumnSums&) = default;
};

/// Streams Linear-input observations. Single writer; shard across several
/// accumulators and merge() for parallel calibration.
class StatsAccumulator : public LinearObserver {
 public:
  StatsAccumulator() = default;
  /// Throws ValidationError on an empty map or a zero dimension.
  explicit StatsAccumulator(const std::map<ModuleAddress, std::size_t>& dims);

  /// Adds one observation. Throws ShapeError on a length mismatch and
  /// ValidationError on a non-finite value (the accumulator is unchanged).
  void observe(const ModuleAddress& addr, std::span<const float> input);
  /// Adds every row of `batch` as an observation.
  void observe(const ModuleAddress& addr, const Matrix& batch);

  /// Componentwise sum. Throws ShapeError if the layouts differ.
  void merge(const StatsAccumulator& other);

  bool same_layout(const StatsAccumulator& other) const;
  const std::map<ModuleAddress, ColumnSums>& modules() const { return modules_; }
  const ColumnSums& at(const ModuleAddress& addr) const;

  void on_linear_input(const ModuleAddress& addr,
                       std::span<const float> input) override {
    observe(addr, input);
  }

  friend bool operator==(const StatsAccumulator& a, const StatsAccumulator& b) {
    return a.modules_ == b.modules_;
  }

 private:
  std::map<ModuleAddress, ColumnSums> modules_;
};

StatsAccumulator init_stats(const std::map<ModuleAddress, std::size_t>& dims);
StatsAccumulator merge(const StatsAccumulator& a, const StatsAccumulator& b);

/// Finalized statistics of one module's inputs, per column j:
///   abs_mean[j] = E|h_j|, mean[j] = E h_j, variance[j] = E h_j^2 - mean^2
///   (population, clamped at 0), hdiag[j] = E h_j^2 + lambda.
struct ModuleStats {
  std::uint64_t n_obs = 0;
  std::vector<double> abs_mean;
  std::vector<double> mean;
  std::vector<double> variance;
  std::vector<double> hdiag;

  std::size_t dim() const { return mean.size(); }
};

struct ActivationStats {
  std::map<ModuleAddress, ModuleStats> modules;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  std::string label;  // persona or dataset identifier, free-form

  const ModuleStats& at(const ModuleAddress& addr) const;
  bool same_layout(const ActivationStats& other) const;
};

/// Throws ValidationError if any module has zero observations or lambda < 0.
ActivationStats finalize(const StatsAccumulator& acc, double lambda);

/// Runs a forward pass and feeds every Linear input into `sink`.
/// Throws ShapeError when the sink layout does not match the model.
void observe_forward(const Model& model, std::span<const Token> tokens,
                     StatsAccumulator& sink);

struct CalibrationOptions {
  double lambda = 0.01;
  std::size_t max_samples = 128;
  std::size_t max_len = 512;
  std::uint64_t seed = 42;
  unsigned threads = 1;
};

/// Samples min(max_samples, |dataset|) sequences without replacement,
/// truncates each to min(max_len, max_seq) tokens, observes every position
/// and finalizes. Sequences are reduced in fixed shards so the result does
/// not depend on the thread count.
ActivationStats collect_stats(const Model& model,
                              const std::vector<TokenSequence>& dataset,
                              const CalibrationOptions& options);

/// Stats container: one 4 x n tensor per module (rows: abs_mean, mean,
/// variance, hdiag), kind=stats, lambda/seed/n_obs in metadata.
TensorArchive stats_to_archive(const ActivationStats& stats);
ActivationStats stats_from_archive(const TensorArchive& archive);

}  // namespace pprune

#endif  // PPRUNE_CALIBRATION_HPP_
