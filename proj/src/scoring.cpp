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

#include "pprune/scoring.hpp"

#include <cmath>

#include "pprune/error.hpp"
#include "pprune/parallel.hpp"

namespace pprune {
namespace {

void require_columns(const Matrix& weight, std::size_t n, const char* what) {
  if (weight.cols() != n) {
    throw ShapeError(std::string(what) + " has length " + std::to_string(n) +
                     " but the weight has " + std::to_string(weight.cols()) + " columns");
  }
}

// |W_ij| * column_scale[j]
ScoreMatrix scale_columns(const Matrix& weight, std::span<const double> column_scale) {
  ScoreMatrix s(weight.rows(), weight.cols());
  for (std::size_t i = 0; i < weight.rows(); ++i) {
    const auto w = weight.row(i);
    auto out = s.row(i);
    for (std::size_t j = 0; j < w.size(); ++j) {
      out[j] = std::abs(static_cast<double>(w[j])) * column_scale[j];
    }
  }
  return s;
}

std::vector<ModuleAddress> module_list(const ActivationStats& stats) {
  std::vector<ModuleAddress> out;
  out.reserve(stats.modules.size());
  for (const auto& entry : stats.modules) out.push_back(entry.first);
  return out;
}

const Matrix& module_weight(const TensorArchive& weights, const ModuleAddress& addr,
                            std::size_t dim) {
  const Matrix& w = weights.at(addr.name());
  if (w.cols() != dim) {
    throw ShapeError("statistics for " + addr.name() + " cover " + std::to_string(dim) +
                     " columns, weight has " + std::to_string(w.cols()));
  }
  return w;
}

ImportanceScores make_scores(ScoreMethod method, const ActivationStats& stats) {
  ImportanceScores out;
  out.method = method;
  out.persona = stats.label;
  out.lambda = stats.lambda;
  out.seed = stats.seed;
  return out;
}

}  // namespace

ScoreMethod parse_score_method(std::string_view text) {
  if (text == "wanda") return ScoreMethod::kWanda;
  if (text == "refined") return ScoreMethod::kRefined;
  if (text == "wanda-contrast") return ScoreMethod::kWandaContrast;
  if (text == "sparse-contrast") return ScoreMethod::kSparseContrast;
  throw ValidationError("unknown method '" + std::string(text) +
                        "' (expected wanda, refined, wanda-contrast or sparse-contrast)");
}

std::string_view score_method_name(ScoreMethod method) {
  switch (method) {
    case ScoreMethod::kWanda: return "wanda";
    case ScoreMethod::kRefined: return "refined";
    case ScoreMethod::kWandaContrast: return "wanda-contrast";
    case ScoreMethod::kSparseContrast: return "sparse-contrast";
  }
  return "?";
}

bool is_contrastive(ScoreMethod method) {
  return method == ScoreMethod::kWandaContrast || method == ScoreMethod::kSparseContrast;
}

Phi parse_phi(std::string_view text) {
  if (text == "relu") return Phi::kRelu;
  if (text == "softplus") return Phi::kSoftplus;
  throw ValidationError("unknown phi '" + std::string(text) + "' (expected relu or softplus)");
}

std::string_view phi_name(Phi phi) { return phi == Phi::kRelu ? "relu" : "softplus"; }

double apply_phi(Phi phi, double z) {
  if (phi == Phi::kRelu) return z > 0.0 ? z : 0.0;
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

ScoreMatrix score_wanda(const Matrix& weight, std::span<const double> abs_mean) {
  require_columns(weight, abs_mean.size(), "activation vector");
  for (std::size_t j = 0; j < abs_mean.size(); ++j) {
    if (!(abs_mean[j] >= 0.0)) {
      throw ValidationError("mean absolute activation must be >= 0 (column " +
                            std::to_string(j) + ")");
    }
  }
  return scale_columns(weight, abs_mean);
}

ScoreMatrix score_refined(const Matrix& weight, std::span<const double> hdiag) {
  require_columns(weight, hdiag.size(), "second-moment vector");
  std::vector<double> root(hdiag.size());
  for (std::size_t j = 0; j < hdiag.size(); ++j) {
    if (!(hdiag[j] > 0.0)) {
      throw ValidationError("damped second moment must be > 0 (column " +
                            std::to_string(j) + "); use lambda > 0");
    }
    root[j] = std::sqrt(hdiag[j]);
  }
  return scale_columns(weight, root);
}

std::vector<double> standardized_difference(const ModuleStats& plus, const ModuleStats& minus,
                                            double epsilon, Target target) {
  if (plus.dim() != minus.dim()) {
    throw ShapeError("contrast statistics have different widths " +
                     std::to_string(plus.dim()) + " and " + std::to_string(minus.dim()));
  }
  if (!(epsilon > 0.0)) throw ValidationError("epsilon must be > 0");
  std::vector<double> z(plus.dim());
  for (std::size_t j = 0; j < z.size(); ++j) {
    const double diff = target == Target::kPlus ? plus.mean[j] - minus.mean[j]
                                                : minus.mean[j] - plus.mean[j];
    z[j] = diff / (std::sqrt(plus.variance[j] + minus.variance[j]) + epsilon);
  }
  return z;
}

ScoreMatrix score_contrastive_wanda(const Matrix& weight, const ModuleStats& plus,
                                    const ModuleStats& minus, const ContrastParams& params,
                                    Target target) {
  auto z = standardized_difference(plus, minus, params.epsilon, target);
  require_columns(weight, z.size(), "contrast statistics");
  for (double& v : z) v = apply_phi(params.phi, v);
  return scale_columns(weight, z);
}

ScoreMatrix normalize_rows(const ScoreMatrix& scores) {
  ScoreMatrix out(scores.rows(), scores.cols());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    const auto row = scores.row(i);
    double total = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (!(row[j] >= 0.0)) {
        throw ValidationError("cannot normalize negative score at (" + std::to_string(i) +
                              ", " + std::to_string(j) + ")");
      }
      total += row[j];
    }
    auto o = out.row(i);
    if (total == 0.0) {
      std::fill(o.begin(), o.end(), 1.0 / static_cast<double>(row.size()));
    } else {
      for (std::size_t j = 0; j < row.size(); ++j) o[j] = row[j] / total;
    }
  }
  return out;
}

WinnerMatrix winner_of(const ScoreMatrix& plus, const ScoreMatrix& minus) {
  if (!plus.same_shape(minus)) throw ShapeError("score matrices differ in shape");
  WinnerMatrix w(plus.rows(), plus.cols());
  for (std::size_t k = 0; k < plus.size(); ++k) {
    const double a = plus.data()[k];
    const double b = minus.data()[k];
    w.data()[k] = a > b ? 1 : (a < b ? -1 : 0);
  }
  return w;
}

ContrastiveSparse score_contrastive_sparse(const ScoreMatrix& plus, const ScoreMatrix& minus) {
  if (!plus.same_shape(minus)) throw ShapeError("score matrices differ in shape");
  const ScoreMatrix np = normalize_rows(plus);
  const ScoreMatrix nm = normalize_rows(minus);
  ContrastiveSparse out{ScoreMatrix(plus.rows(), plus.cols()), winner_of(np, nm)};
  for (std::size_t k = 0; k < np.size(); ++k) {
    out.contrast.data()[k] = std::abs(np.data()[k] - nm.data()[k]);
  }
  return out;
}

const ScoreMatrix& ImportanceScores::at(const ModuleAddress& addr) const {
  const auto it = modules.find(addr);
  if (it == modules.end()) throw ValidationError("scores lack module " + addr.name());
  return it->second;
}

ImportanceScores score_model(const TensorArchive& weights, const ActivationStats& stats,
                             ScoreMethod method, unsigned threads) {
  if (is_contrastive(method)) {
    throw ValidationError("score_model handles wanda/refined; use score_contrastive for " +
                          std::string(score_method_name(method)));
  }
  const auto addrs = module_list(stats);
  std::vector<ScoreMatrix> results(addrs.size());
  parallel_for(addrs.size(), threads, [&](std::size_t k) {
    const ModuleStats& s = stats.at(addrs[k]);
    const Matrix& w = module_weight(weights, addrs[k], s.dim());
    results[k] = method == ScoreMethod::kWanda ? score_wanda(w, s.abs_mean)
                                               : score_refined(w, s.hdiag);
  });
  ImportanceScores out = make_scores(method, stats);
  for (std::size_t k = 0; k < addrs.size(); ++k) {
    out.modules.emplace(addrs[k], std::move(results[k]));
  }
  return out;
}

ContrastiveScores score_contrastive(const TensorArchive& weights, const ActivationStats& plus,
                                    const ActivationStats& minus, ScoreMethod method,
                                    const ContrastParams& params, unsigned threads) {
  if (!is_contrastive(method)) {
    throw ValidationError("score_contrastive needs wanda-contrast or sparse-contrast");
  }
  if (!plus.same_layout(minus)) {
    for (const auto& [addr, s] : plus.modules) {
      const auto it = minus.modules.find(addr);
      if (it == minus.modules.end() || it->second.dim() != s.dim()) {
        throw ShapeError("plus and minus statistics disagree at module " + addr.name());
      }
    }
    throw ShapeError("plus and minus statistics cover different modules");
  }
  const auto addrs = module_list(plus);
  const std::size_t n = addrs.size();
  std::vector<ScoreMatrix> rank_plus(n), rank_minus(n), base_plus(n), base_minus(n);
  std::vector<WinnerMatrix> winners(n);
  parallel_for(n, threads, [&](std::size_t k) {
    const ModuleStats& sp = plus.at(addrs[k]);
    const ModuleStats& sm = minus.at(addrs[k]);
    const Matrix& w = module_weight(weights, addrs[k], sp.dim());
    if (method == ScoreMethod::kWandaContrast) {
      rank_plus[k] = score_contrastive_wanda(w, sp, sm, params, Target::kPlus);
      rank_minus[k] = score_contrastive_wanda(w, sp, sm, params, Target::kMinus);
      winners[k] = winner_of(rank_plus[k], rank_minus[k]);
      base_plus[k] = score_wanda(w, sp.abs_mean);
      base_minus[k] = score_wanda(w, sm.abs_mean);
    } else {
      base_plus[k] = score_refined(w, sp.hdiag);
      base_minus[k] = score_refined(w, sm.hdiag);
      auto cs = score_contrastive_sparse(base_plus[k], base_minus[k]);
      rank_plus[k] = cs.contrast;
      rank_minus[k] = std::move(cs.contrast);
      winners[k] = std::move(cs.winner);
    }
  });

  ContrastiveScores out;
  out.plus = make_scores(method, plus);
  out.plus.counter_persona = minus.label;
  out.plus.params = params;
  out.minus = make_scores(method, minus);
  out.minus.counter_persona = plus.label;
  out.minus.params = params;
  const ScoreMethod base_method =
      method == ScoreMethod::kWandaContrast ? ScoreMethod::kWanda : ScoreMethod::kRefined;
  out.baseline_plus = make_scores(base_method, plus);
  out.baseline_minus = make_scores(base_method, minus);
  for (std::size_t k = 0; k < n; ++k) {
    out.plus.modules.emplace(addrs[k], std::move(rank_plus[k]));
    out.minus.modules.emplace(addrs[k], std::move(rank_minus[k]));
    out.winner.emplace(addrs[k], std::move(winners[k]));
    out.baseline_plus.modules.emplace(addrs[k], std::move(base_plus[k]));
    out.baseline_minus.modules.emplace(addrs[k], std::move(base_minus[k]));
  }
  return out;
}

TensorArchive scores_to_archive(const ImportanceScores& scores) {
  TensorArchive archive;
  for (const auto& [addr, s] : scores.modules) {
    Matrix m(s.rows(), s.cols());
    for (std::size_t k = 0; k < s.size(); ++k) m.data()[k] = static_cast<float>(s.data()[k]);
    archive.add(addr.name(), std::move(m));
  }
  auto& meta = archive.meta();
  meta["kind"] = std::string(kKindScores);
  meta["method"] = std::string(score_method_name(scores.method));
  meta["persona"] = scores.persona;
  if (!scores.counter_persona.empty()) meta["counter_persona"] = scores.counter_persona;
  meta["phi"] = std::string(phi_name(scores.params.phi));
  meta["epsilon"] = format_number(scores.params.epsilon);
  meta["lambda"] = format_number(scores.lambda);
  meta["tool_version"] = std::string(kToolVersion);
  return archive;
}

}  // namespace pprune
