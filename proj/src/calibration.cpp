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

#include "pprune/calibration.hpp"

#include <algorithm>
#include <cmath>

#include "pprune/error.hpp"
#include "pprune/parallel.hpp"
#include "pprune/random.hpp"

namespace pprune {
namespace {

// Sequences per calibration shard. Fixed so that the reduction tree, and
// therefore every rounding, is independent of the thread count.
constexpr std::size_t kShardSize = 8;

const std::string kNObsPrefix = "n_obs.";

}  // namespace

StatsAccumulator::StatsAccumulator(const std::map<ModuleAddress, std::size_t>& dims) {
  if (dims.empty()) throw ValidationError("stats layout must name at least one module");
  for (const auto& [addr, n] : dims) {
    if (n == 0) throw ValidationError("module " + addr.name() + " has input dimension 0");
    ColumnSums& c = modules_[addr];
    c.sum_abs.assign(n, 0.0);
    c.sum.assign(n, 0.0);
    c.sum_sq.assign(n, 0.0);
  }
}

const ColumnSums& StatsAccumulator::at(const ModuleAddress& addr) const {
  const auto it = modules_.find(addr);
  if (it == modules_.end()) {
    throw ValidationError("stats accumulator has no module " + addr.name());
  }
  return it->second;
}

void StatsAccumulator::observe(const ModuleAddress& addr, std::span<const float> input) {
  const auto it = modules_.find(addr);
  if (it == modules_.end()) {
    throw ShapeError("stats accumulator has no module " + addr.name());
  }
  ColumnSums& c = it->second;
  if (input.size() != c.dim()) {
    throw ShapeError("observation for " + addr.name() + " has length " +
                     std::to_string(input.size()) + ", expected " +
                     std::to_string(c.dim()));
  }
  for (std::size_t j = 0; j < input.size(); ++j) {
    if (!std::isfinite(input[j])) {
      throw ValidationError("non-finite activation in column " + std::to_string(j) +
                            " of " + addr.name());
    }
  }
  for (std::size_t j = 0; j < input.size(); ++j) {
    const double h = input[j];
    c.sum_abs[j] += std::abs(h);
    c.sum[j] += h;
    c.sum_sq[j] += h * h;
  }
  ++c.n_obs;
}

void StatsAccumulator::observe(const ModuleAddress& addr, const Matrix& batch) {
  const ColumnSums& c = at(addr);
  if (batch.cols() != c.dim()) {
    throw ShapeError("batch for " + addr.name() + " has " + std::to_string(batch.cols()) +
                     " columns, expected " + std::to_string(c.dim()));
  }
  const auto bad = std::find_if(batch.data().begin(), batch.data().end(),
                                [](float v) { return !std::isfinite(v); });
  if (bad != batch.data().end()) {
    throw ValidationError("non-finite activation in batch for " + addr.name());
  }
  for (std::size_t r = 0; r < batch.rows(); ++r) observe(addr, batch.row(r));
}

bool StatsAccumulator::same_layout(const StatsAccumulator& other) const {
  if (modules_.size() != other.modules_.size()) return false;
  return std::equal(modules_.begin(), modules_.end(), other.modules_.begin(),
                    [](const auto& a, const auto& b) {
                      return a.first == b.first && a.second.dim() == b.second.dim();
                    });
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
  if (!same_layout(other)) throw ShapeError("cannot merge accumulators with different layouts");
  auto it = other.modules_.begin();
  for (auto& [addr, c] : modules_) {
    const ColumnSums& o = (it++)->second;
    c.n_obs += o.n_obs;
    for (std::size_t j = 0; j < c.dim(); ++j) {
      c.sum_abs[j] += o.sum_abs[j];
      c.sum[j] += o.sum[j];
      c.sum_sq[j] += o.sum_sq[j];
    }
  }
}

StatsAccumulator init_stats(const std::map<ModuleAddress, std::size_t>& dims) {
  return StatsAccumulator(dims);
}

StatsAccumulator merge(const StatsAccumulator& a, const StatsAccumulator& b) {
  StatsAccumulator out = a;
  out.merge(b);
  return out;
}

const ModuleStats& ActivationStats::at(const ModuleAddress& addr) const {
  const auto it = modules.find(addr);
  if (it == modules.end()) throw ValidationError("statistics lack module " + addr.name());
  return it->second;
}

bool ActivationStats::same_layout(const ActivationStats& other) const {
  if (modules.size() != other.modules.size()) return false;
  return std::equal(modules.begin(), modules.end(), other.modules.begin(),
                    [](const auto& a, const auto& b) {
                      return a.first == b.first && a.second.dim() == b.second.dim();
                    });
}

ActivationStats finalize(const StatsAccumulator& acc, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ValidationError("damping lambda must be finite and >= 0");
  }
  if (acc.modules().empty()) throw ValidationError("cannot finalize an empty accumulator");
  ActivationStats out;
  out.lambda = lambda;
  for (const auto& [addr, c] : acc.modules()) {
    if (c.n_obs == 0) {
      throw ValidationError("module " + addr.name() + " has zero observations");
    }
    const double n = static_cast<double>(c.n_obs);
    ModuleStats s;
    s.n_obs = c.n_obs;
    s.abs_mean.resize(c.dim());
    s.mean.resize(c.dim());
    s.variance.resize(c.dim());
    s.hdiag.resize(c.dim());
    for (std::size_t j = 0; j < c.dim(); ++j) {
      const double mean = c.sum[j] / n;
      const double second = c.sum_sq[j] / n;
      s.abs_mean[j] = c.sum_abs[j] / n;
      s.mean[j] = mean;
      s.variance[j] = std::max(0.0, second - mean * mean);
      s.hdiag[j] = second + lambda;
    }
    out.modules.emplace(addr, std::move(s));
  }
  return out;
}

void observe_forward(const Model& model, std::span<const Token> tokens,
                     StatsAccumulator& sink) {
  const auto dims = model.config().input_dims();
  if (sink.modules().size() != dims.size()) {
    throw ShapeError("stats accumulator covers " + std::to_string(sink.modules().size()) +
                     " modules, model has " + std::to_string(dims.size()));
  }
  for (const auto& [addr, n] : dims) {
    const auto it = sink.modules().find(addr);
    if (it == sink.modules().end() || it->second.dim() != n) {
      throw ShapeError("stats accumulator layout does not match module " + addr.name());
    }
  }
  model.forward(tokens, &sink);
}

ActivationStats collect_stats(const Model& model, const std::vector<TokenSequence>& dataset,
                              const CalibrationOptions& options) {
  if (dataset.empty()) throw ValidationError("calibration dataset is empty");
  if (options.max_samples == 0) throw ValidationError("max_samples must be >= 1");
  if (options.max_len == 0) throw ValidationError("max_len must be >= 1");
  const auto picks =
      sample_without_replacement(dataset.size(), options.max_samples, options.seed);
  const std::size_t max_len = std::min(options.max_len, model.config().max_seq);
  const auto dims = model.config().input_dims();

  const std::size_t shard_count = (picks.size() + kShardSize - 1) / kShardSize;
  std::vector<StatsAccumulator> shards(shard_count);
  parallel_for(shard_count, options.threads, [&](std::size_t s) {
    StatsAccumulator acc(dims);
    const std::size_t end = std::min(picks.size(), (s + 1) * kShardSize);
    for (std::size_t i = s * kShardSize; i < end; ++i) {
      const std::size_t index = picks[i];
      const TokenSequence& seq = dataset[index];
      const std::span<const Token> view(seq.data(), std::min(seq.size(), max_len));
      try {
        observe_forward(model, view, acc);
      } catch (const Error& e) {
        throw ValidationError("calibration sequence " + std::to_string(index) + ": " +
                              e.what());
      }
    }
    shards[s] = std::move(acc);
  });

  StatsAccumulator total = std::move(shards.front());
  for (std::size_t s = 1; s < shards.size(); ++s) total.merge(shards[s]);
  ActivationStats stats = finalize(total, options.lambda);
  stats.seed = options.seed;
  return stats;
}

TensorArchive stats_to_archive(const ActivationStats& stats) {
  TensorArchive archive;
  auto& meta = archive.meta();
  meta["kind"] = std::string(kKindStats);
  meta["lambda"] = format_number(stats.lambda);
  meta["seed"] = std::to_string(stats.seed);
  meta["tool_version"] = std::string(kToolVersion);
  if (!stats.label.empty()) meta["persona"] = stats.label;
  std::uint64_t min_obs = UINT64_MAX;
  for (const auto& [addr, s] : stats.modules) {
    const std::size_t n = s.dim();
    Matrix m(4, n);
    for (std::size_t j = 0; j < n; ++j) {
      m(0, j) = static_cast<float>(s.abs_mean[j]);
      m(1, j) = static_cast<float>(s.mean[j]);
      m(2, j) = static_cast<float>(s.variance[j]);
      m(3, j) = static_cast<float>(s.hdiag[j]);
    }
    archive.add(addr.name(), std::move(m));
    meta[kNObsPrefix + addr.name()] = std::to_string(s.n_obs);
    min_obs = std::min(min_obs, s.n_obs);
  }
  meta["n_obs"] = std::to_string(stats.modules.empty() ? 0 : min_obs);
  return archive;
}

ActivationStats stats_from_archive(const TensorArchive& archive) {
  const std::string kind = archive.meta_or("kind", "");
  if (kind != kKindStats) {
    throw ValidationError("archive kind is '" + kind + "', expected 'stats'");
  }
  const auto& meta = archive.meta();
  ActivationStats stats;
  stats.lambda = meta.contains("lambda") ? parse_number(meta.at("lambda"), "lambda") : 0.0;
  stats.seed = meta.contains("seed") ? parse_count(meta.at("seed"), "seed") : 0;
  stats.label = archive.meta_or("persona", "");
  if (archive.size() == 0) throw ValidationError("stats archive has no modules");
  for (const auto& [name, m] : archive.entries()) {
    const ModuleAddress addr = parse_module_address(name);
    if (m.rows() != 4) {
      throw ValidationError("stats tensor '" + name + "' must have 4 rows, has " +
                            std::to_string(m.rows()));
    }
    ModuleStats s;
    const auto obs = meta.find(kNObsPrefix + name);
    if (obs == meta.end()) throw ValidationError("stats metadata lacks n_obs for " + name);
    s.n_obs = parse_count(obs->second, "n_obs");
    const auto widen = [](std::span<const float> r) {
      return std::vector<double>(r.begin(), r.end());
    };
    s.abs_mean = widen(m.row(0));
    s.mean = widen(m.row(1));
    s.variance = widen(m.row(2));
    s.hdiag = widen(m.row(3));
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (s.abs_mean[j] < 0.0 || s.variance[j] < 0.0 || s.hdiag[j] < 0.0) {
        throw ValidationError("stats tensor '" + name + "' violates A>=0, var>=0, hdiag>=0 at column " +
                              std::to_string(j));
      }
    }
    stats.modules.emplace(addr, std::move(s));
  }
  return stats;
}

}  // namespace pprune
