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

#include "pprune/masking.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "pprune/error.hpp"
#include "pprune/parallel.hpp"

namespace pprune {
namespace {

void check_rho(double rho) {
  if (!(rho > 0.0 && rho < 1.0)) {
    throw ValidationError("sparsity ratio must lie in (0, 1), got " + format_number(rho));
  }
}

void check_finite(const ScoreMatrix& scores) {
  for (double v : scores.data()) {
    if (!std::isfinite(v)) throw ValidationError("scores must be finite");
  }
}

std::size_t checked_keep(double rho, std::size_t n) {
  check_rho(rho);
  const std::size_t k = keep_count(rho, n);
  if (k == 0) {
    throw ValidationError("row would be fully pruned: rho " + format_number(rho) +
                          " keeps 0 of " + std::to_string(n) + " columns");
  }
  return k;
}

// Column order: larger tier first, then larger score, then lower column.
template <typename TierFn>
void select_row(std::span<const double> scores, std::size_t k, TierFn tier,
                std::span<float> out) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      const int ta = tier(a);
                      const int tb = tier(b);
                      if (ta != tb) return ta > tb;
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  std::fill(out.begin(), out.end(), 0.0f);
  for (std::size_t r = 0; r < k; ++r) out[order[r]] = 1.0f;
}

std::vector<ModuleAddress> keys_of(const ImportanceScores& scores) {
  std::vector<ModuleAddress> out;
  for (const auto& entry : scores.modules) out.push_back(entry.first);
  return out;
}

std::size_t parse_index(std::string_view text, std::string_view pattern) {
  std::size_t value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ValidationError("bad layer index '" + std::string(text) + "' in pattern '" +
                          std::string(pattern) + "'");
  }
  return value;
}

}  // namespace

std::size_t keep_count(double rho, std::size_t n) {
  const double k = std::floor((1.0 - rho) * static_cast<double>(n) + 1e-9);
  return k <= 0.0 ? 0 : std::min(n, static_cast<std::size_t>(k));
}

Matrix topk_mask(const ScoreMatrix& scores, double rho) {
  if (scores.cols() == 0 || scores.rows() == 0) throw ValidationError("empty score matrix");
  check_finite(scores);
  const std::size_t k = checked_keep(rho, scores.cols());
  Matrix mask(scores.rows(), scores.cols());
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    select_row(scores.row(i), k, [](std::size_t) { return 0; }, mask.row(i));
  }
  return mask;
}

ModulePattern ModulePattern::parse(std::string_view text) {
  auto fail = [&](const std::string& why) {
    return ValidationError("bad module pattern '" + std::string(text) + "': " + why);
  };
  std::vector<std::string_view> parts;
  for (std::size_t start = 0;;) {
    const auto dot = text.find('.', start);
    parts.push_back(text.substr(start, dot == std::string_view::npos ? dot : dot - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  ModulePattern p;
  std::size_t i = 0;
  if (parts[0] == "layers") {
    if (parts.size() < 2) throw fail("missing layer index or range");
    const std::string_view range = parts[1];
    const auto dash = range.find('-');
    const std::size_t lo = parse_index(range.substr(0, dash), text);
    const std::size_t hi =
        dash == std::string_view::npos ? lo : parse_index(range.substr(dash + 1), text);
    if (hi < lo) throw fail("layer range is reversed");
    p.layers = std::make_pair(lo, hi);
    i = 2;
  }
  if (i < parts.size()) {
    Block block;
    Slot slot;
    if (parse_block(parts[i], block)) {
      p.block = block;
      ++i;
      if (i < parts.size()) {
        if (!parse_slot(parts[i], slot)) throw fail("unknown slot '" + std::string(parts[i]) + "'");
        if (block_of(slot) != block) throw fail("slot does not belong to block");
        p.slot = slot;
        ++i;
      }
    } else if (parse_slot(parts[i], slot)) {
      p.slot = slot;
      p.block = block_of(slot);
      ++i;
    } else {
      throw fail("unknown block or slot '" + std::string(parts[i]) + "'");
    }
  }
  if (i != parts.size()) throw fail("trailing components");
  if (!p.layers && !p.block) throw fail("empty pattern");
  return p;
}

bool ModulePattern::matches(const ModuleAddress& addr) const {
  if (layers && (addr.layer < layers->first || addr.layer > layers->second)) return false;
  if (block && addr.block() != *block) return false;
  if (slot && addr.slot != *slot) return false;
  return true;
}

int ModulePattern::specificity() const {
  return (layers ? 1 : 0) + (block ? 1 : 0) + (slot ? 1 : 0);
}

std::string ModulePattern::str() const {
  std::string out;
  if (layers) {
    out = "layers." + std::to_string(layers->first);
    if (layers->second != layers->first) out += "-" + std::to_string(layers->second);
  }
  if (block) {
    if (!out.empty()) out += '.';
    out += block_name(*block);
  }
  if (slot) {
    out += '.';
    out += slot_name(*slot);
  }
  return out;
}

SparsityPlan::SparsityPlan(double global_rho) : global_rho_(global_rho) {
  check_rho(global_rho);
}

void SparsityPlan::add_override(const ModulePattern& pattern, double rho) {
  check_rho(rho);
  for (const auto& o : overrides_) {
    if (o.pattern == pattern) {
      throw ValidationError("pattern '" + pattern.str() + "' is overridden twice");
    }
  }
  overrides_.push_back({pattern, rho});
}

void SparsityPlan::add_override(std::string_view spec) {
  const auto eq = spec.find('=');
  if (eq == std::string_view::npos) {
    throw ValidationError("override '" + std::string(spec) + "' must look like pattern=rho");
  }
  add_override(ModulePattern::parse(spec.substr(0, eq)),
               parse_number(spec.substr(eq + 1), "override ratio"));
}

double SparsityPlan::resolve(const ModuleAddress& addr) const {
  const Override* best = nullptr;
  for (const auto& o : overrides_) {
    if (!o.pattern.matches(addr)) continue;
    if (best == nullptr || o.pattern.specificity() > best->pattern.specificity()) {
      best = &o;
    } else if (o.pattern.specificity() == best->pattern.specificity() && o.rho != best->rho) {
      throw ValidationError("overrides '" + best->pattern.str() + "' and '" + o.pattern.str() +
                            "' conflict at " + addr.name() + " with equal specificity");
    }
  }
  return best ? best->rho : global_rho_;
}

std::string SparsityPlan::describe_overrides() const {
  std::string out;
  for (const auto& o : overrides_) {
    if (!out.empty()) out += ';';
    out += o.pattern.str() + "=" + format_number(o.rho);
  }
  return out;
}

MaskSet build_maskset(const ImportanceScores& scores, const SparsityPlan& plan,
                      unsigned threads) {
  const auto addrs = keys_of(scores);
  std::vector<Matrix> masks(addrs.size());
  parallel_for(addrs.size(), threads, [&](std::size_t k) {
    try {
      masks[k] = topk_mask(scores.at(addrs[k]), plan.resolve(addrs[k]));
    } catch (const ValidationError& e) {
      throw ValidationError(addrs[k].name() + ": " + e.what());
    }
  });
  MaskSet out;
  for (std::size_t k = 0; k < addrs.size(); ++k) out.set(addrs[k], std::move(masks[k]));
  auto& p = out.provenance();
  p.method = score_method_name(scores.method);
  p.rho = plan.global_rho();
  p.overrides = plan.describe_overrides();
  p.persona = scores.persona;
  p.counter_persona = scores.counter_persona;
  p.sources = scores.persona;
  p.seed = scores.seed;
  return out;
}

std::pair<Matrix, Matrix> contrastive_pair(const ScoreMatrix& plus, const ScoreMatrix& minus,
                                           const WinnerMatrix& winner, double rho,
                                           bool exclusion) {
  if (!plus.same_shape(minus) || !plus.same_shape(winner)) {
    throw ShapeError("contrastive inputs differ in shape");
  }
  if (!exclusion) return {topk_mask(plus, rho), topk_mask(minus, rho)};
  check_finite(plus);
  check_finite(minus);
  const std::size_t n = plus.cols();
  const std::size_t k = checked_keep(rho, n);
  if (n - k < k) {
    throw ValidationError("exclusion infeasible: keeping " + std::to_string(k) + " of " +
                          std::to_string(n) + " columns leaves only " +
                          std::to_string(n - k) + " for the opposing mask (row 0)");
  }
  Matrix mp(plus.rows(), n);
  Matrix mm(plus.rows(), n);
  for (std::size_t i = 0; i < plus.rows(); ++i) {
    const auto w = winner.row(i);
    // Exact ties are settled by linear-index parity: even to plus, odd to minus.
    auto resolved = [&](std::size_t j) {
      return w[j] != 0 ? int{w[j]} : (((i * n + j) % 2 == 0) ? 1 : -1);
    };
    select_row(plus.row(i), k, [&](std::size_t j) { return resolved(j) > 0 ? 1 : 0; },
               mp.row(i));
    const auto taken = mp.row(i);
    select_row(minus.row(i), k,
               [&](std::size_t j) {
                 if (taken[j] != 0.0f) return 0;
                 return resolved(j) < 0 ? 2 : 1;
               },
               mm.row(i));
  }
  return {std::move(mp), std::move(mm)};
}

std::pair<MaskSet, MaskSet> contrastive_masksets(
    const ImportanceScores& plus, const ImportanceScores& minus,
    const std::map<ModuleAddress, WinnerMatrix>& winner, const SparsityPlan& plan,
    bool exclusion, unsigned threads) {
  const auto addrs = keys_of(plus);
  if (keys_of(minus) != addrs) throw ShapeError("plus and minus scores cover different modules");
  std::vector<std::pair<Matrix, Matrix>> pairs(addrs.size());
  parallel_for(addrs.size(), threads, [&](std::size_t k) {
    const auto w = winner.find(addrs[k]);
    if (w == winner.end()) throw ShapeError("no winner matrix for " + addrs[k].name());
    try {
      pairs[k] = contrastive_pair(plus.at(addrs[k]), minus.at(addrs[k]), w->second,
                                  plan.resolve(addrs[k]), exclusion);
    } catch (const Error& e) {
      throw ValidationError(addrs[k].name() + ": " + e.what());
    }
  });
  MaskSet mp;
  MaskSet mm;
  for (std::size_t k = 0; k < addrs.size(); ++k) {
    mp.set(addrs[k], std::move(pairs[k].first));
    mm.set(addrs[k], std::move(pairs[k].second));
  }
  const std::string method =
      std::string(score_method_name(plus.method)) + (exclusion ? "" : "+no-exclusion");
  for (auto* side : {&mp, &mm}) {
    auto& p = side->provenance();
    p.method = method;
    p.rho = plan.global_rho();
    p.overrides = plan.describe_overrides();
    p.seed = plus.seed;
    p.sources = plus.persona + "," + minus.persona;
  }
  mp.provenance().persona = plus.persona;
  mp.provenance().counter_persona = minus.persona;
  mm.provenance().persona = minus.persona;
  mm.provenance().counter_persona = plus.persona;
  return {std::move(mp), std::move(mm)};
}

std::pair<MaskSet, MaskSet> contrastive_masksets(const ContrastiveScores& scores,
                                                 const SparsityPlan& plan, bool exclusion,
                                                 unsigned threads) {
  if (exclusion) {
    return contrastive_masksets(scores.plus, scores.minus, scores.winner, plan, true, threads);
  }
  auto result = contrastive_masksets(scores.baseline_plus, scores.baseline_minus,
                                     scores.winner, plan, false, threads);
  for (auto* side : {&result.first, &result.second}) {
    side->provenance().method =
        std::string(score_method_name(scores.plus.method)) + "+no-exclusion";
  }
  return result;
}

MaskSet compose_masks(const std::vector<MaskMix>& entries, const TensorArchive& base_weights) {
  if (entries.empty()) throw ValidationError("compose needs at least one mask");
  double total_fraction = 0.0;
  for (const auto& e : entries) {
    if (!(e.fraction > 0.0 && e.fraction <= 1.0)) {
      throw ValidationError("compose fraction must lie in (0, 1], got " +
                            format_number(e.fraction));
    }
    total_fraction += e.fraction;
    require_same_layout(entries.front().masks, e.masks);
  }
  if (total_fraction > 1.0 + 1e-9) {
    throw ValidationError("compose fractions sum to " + format_number(total_fraction) +
                          " > 1");
  }

  MaskSet out;
  std::size_t kept_total = 0;
  for (const auto& [addr, first] : entries.front().masks.masks()) {
    const Matrix& w = base_weights.at(addr.name());
    if (!w.same_shape(first)) throw ShapeError("weight shape differs from mask at " + addr.name());
    Matrix combined(first.rows(), first.cols());
    for (const auto& e : entries) {
      const Matrix& m = e.masks.at(addr);
      std::vector<std::size_t> selected;
      for (std::size_t k = 0; k < m.size(); ++k) {
        if (m.data()[k] != 0.0f) selected.push_back(k);
      }
      const auto keep = static_cast<std::size_t>(
          std::floor(e.fraction * static_cast<double>(selected.size()) + 1e-9));
      std::partial_sort(selected.begin(), selected.begin() + static_cast<std::ptrdiff_t>(keep),
                        selected.end(), [&](std::size_t a, std::size_t b) {
                          const float ma = std::abs(w.data()[a]);
                          const float mb = std::abs(w.data()[b]);
                          if (ma != mb) return ma > mb;
                          return a < b;
                        });
      for (std::size_t r = 0; r < keep; ++r) combined.data()[selected[r]] = 1.0f;
    }
    kept_total += static_cast<std::size_t>(
        std::count(combined.data().begin(), combined.data().end(), 1.0f));
    out.set(addr, std::move(combined));
  }
  if (kept_total == 0) throw ValidationError("composed mask selects no positions");

  auto& p = out.provenance();
  p.method = "compose";
  p.rho = 0.0;
  std::string persona;
  for (const auto& e : entries) {
    if (!persona.empty()) persona += '+';
    persona += format_number(e.fraction) + "*" +
               (e.masks.provenance().persona.empty() ? std::string("mask")
                                                     : e.masks.provenance().persona);
  }
  p.persona = persona;
  p.seed = entries.front().masks.provenance().seed;
  return out;
}

MaskSet restore_layer(const MaskSet& masks, const ModuleAddress& addr) {
  const Matrix& m = masks.at(addr);
  MaskSet out = masks;
  out.set(addr, Matrix(m.rows(), m.cols(), 1.0f));
  out.provenance().restored.push_back(addr.name());
  return out;
}

DensityReport mask_density(const MaskSet& masks) {
  DensityReport report;
  std::size_t ones = 0;
  std::size_t total = 0;
  for (const auto& [addr, m] : masks.masks()) {
    const auto count =
        static_cast<std::size_t>(std::count(m.data().begin(), m.data().end(), 1.0f));
    report.per_module.emplace_back(addr, static_cast<double>(count) /
                                             static_cast<double>(m.size()));
    ones += count;
    total += m.size();
  }
  report.aggregate = total == 0 ? 0.0 : static_cast<double>(ones) / static_cast<double>(total);
  return report;
}

}  // namespace pprune
