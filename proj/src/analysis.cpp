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

#include "pprune/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "pprune/error.hpp"
#include "pprune/masking.hpp"
#include "pprune/parallel.hpp"

namespace pprune {
namespace {

double mean_of(const std::vector<double>& values) {
  double total = 0.0;
  for (double v : values) total += v;
  return values.empty() ? 0.0 : total / static_cast<double>(values.size());
}

void require_probes(const std::vector<TokenSequence>& probes) {
  if (probes.empty()) throw ValidationError("probe set is empty");
}

std::vector<std::vector<double>> distributions(const Model& model,
                                               const std::vector<TokenSequence>& probes,
                                               unsigned threads) {
  std::vector<std::vector<double>> out(probes.size());
  parallel_for(probes.size(), threads, [&](std::size_t i) {
    try {
      out[i] = model.next_token_distribution(probes[i]);
    } catch (const Error& e) {
      throw ValidationError("probe " + std::to_string(i) + ": " + e.what());
    }
  });
  return out;
}

double mean_divergence(const std::vector<std::vector<double>>& a,
                       const std::vector<std::vector<double>>& b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += symmetric_kl(a[i], b[i]);
  return total / static_cast<double>(a.size());
}

}  // namespace

Grouping parse_grouping(std::string_view text) {
  if (text == "all") return Grouping::kAll;
  if (text == "by_block" || text == "block") return Grouping::kByBlock;
  if (text == "by_layer" || text == "layer") return Grouping::kByLayer;
  throw ValidationError("unknown grouping '" + std::string(text) +
                        "' (expected all, by_block or by_layer)");
}

JaccardResult jaccard_overlap(const MaskSet& a, const MaskSet& b) {
  require_same_layout(a, b);
  JaccardResult result;
  for (const auto& [addr, ma] : a.masks()) {
    const Matrix& mb = b.at(addr);
    ModuleOverlap o;
    o.addr = addr;
    for (std::size_t k = 0; k < ma.size(); ++k) {
      const bool x = ma.data()[k] != 0.0f;
      const bool y = mb.data()[k] != 0.0f;
      o.intersection += (x && y) ? 1 : 0;
      o.union_count += (x || y) ? 1 : 0;
    }
    o.jaccard = o.union_count == 0 ? 1.0
                                   : static_cast<double>(o.intersection) /
                                         static_cast<double>(o.union_count);
    result.intersection += o.intersection;
    result.union_count += o.union_count;
    result.per_module.push_back(o);
  }
  result.aggregate = result.union_count == 0 ? 1.0
                                             : static_cast<double>(result.intersection) /
                                                   static_cast<double>(result.union_count);
  return result;
}

SeparationReport differential_ratio(const MaskSet& a, const MaskSet& b, Grouping grouping) {
  require_same_layout(a, b);
  SeparationReport report;
  std::map<std::string, GroupRatio> groups;
  std::vector<std::string> order;
  for (const auto& [addr, ma] : a.masks()) {
    const Matrix& mb = b.at(addr);
    std::string key;
    switch (grouping) {
      case Grouping::kAll: key = "all"; break;
      case Grouping::kByBlock: key = std::string(block_name(addr.block())); break;
      case Grouping::kByLayer: key = "layers." + std::to_string(addr.layer); break;
    }
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) {
      it->second.group = key;
      order.push_back(key);
    }
    for (std::size_t k = 0; k < ma.size(); ++k) {
      it->second.differing += ma.data()[k] != mb.data()[k] ? 1 : 0;
    }
    it->second.total += ma.size();
  }
  if (grouping == Grouping::kByBlock) std::sort(order.begin(), order.end());
  for (const auto& key : order) {
    GroupRatio g = groups.at(key);
    g.ratio = g.total == 0 ? 0.0
                           : 100.0 * static_cast<double>(g.differing) /
                                 static_cast<double>(g.total);
    report.ratios.push_back(std::move(g));
  }
  report.jaccard = jaccard_overlap(a, b);
  report.meta["a.method"] = a.provenance().method;
  report.meta["a.persona"] = a.provenance().persona;
  report.meta["b.method"] = b.provenance().method;
  report.meta["b.persona"] = b.provenance().persona;
  return report;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("cosine of vectors with different lengths");
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 && nb == 0.0) return 1.0;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::vector<double> pooled_hidden(const Model& model, const std::vector<TokenSequence>& probes,
                                  std::size_t layer, Pooling pooling) {
  require_probes(probes);
  if (layer >= model.config().n_layers) {
    throw ValidationError("layer " + std::to_string(layer) + " out of range (model has " +
                          std::to_string(model.config().n_layers) + ")");
  }
  std::vector<double> total(model.config().d_model, 0.0);
  for (std::size_t i = 0; i < probes.size(); ++i) {
    ForwardResult fr;
    try {
      fr = model.forward(probes[i]);
    } catch (const Error& e) {
      throw ValidationError("probe " + std::to_string(i) + ": " + e.what());
    }
    const auto pooled = fr.trace.pooled(layer, pooling);
    for (std::size_t j = 0; j < total.size(); ++j) total[j] += pooled[j];
  }
  for (double& v : total) v /= static_cast<double>(probes.size());
  return total;
}

double layer_cosine(const Model& model, const MaskRef& a, const MaskRef& b,
                    const std::vector<TokenSequence>& probes, std::size_t layer,
                    Pooling pooling) {
  const auto va = pooled_hidden(model.with_masks(a, model.gamma()), probes, layer, pooling);
  const auto vb = pooled_hidden(model.with_masks(b, model.gamma()), probes, layer, pooling);
  return cosine_similarity(va, vb);
}

RepresentationReport representation_similarity(const Model& model, const MaskRef& a,
                                               const MaskRef& b,
                                               const std::vector<TokenSequence>& probes,
                                               Pooling pooling) {
  require_probes(probes);
  const std::size_t layers = model.config().n_layers;
  const std::size_t d = model.config().d_model;
  const Model ma = model.with_masks(a, model.gamma());
  const Model mb = model.with_masks(b, model.gamma());
  std::vector<std::vector<double>> sum_a(layers, std::vector<double>(d, 0.0));
  std::vector<std::vector<double>> sum_b = sum_a;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    ForwardResult fa;
    ForwardResult fb;
    try {
      fa = ma.forward(probes[i]);
      fb = mb.forward(probes[i]);
    } catch (const Error& e) {
      throw ValidationError("probe " + std::to_string(i) + ": " + e.what());
    }
    for (std::size_t l = 0; l < layers; ++l) {
      const auto pa = fa.trace.pooled(l, pooling);
      const auto pb = fb.trace.pooled(l, pooling);
      for (std::size_t j = 0; j < d; ++j) {
        sum_a[l][j] += pa[j];
        sum_b[l][j] += pb[j];
      }
    }
  }
  RepresentationReport report;
  report.pooling = pooling;
  report.probe_count = probes.size();
  const double n = static_cast<double>(probes.size());
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t j = 0; j < d; ++j) {
      sum_a[l][j] /= n;
      sum_b[l][j] /= n;
    }
    report.per_layer.push_back(cosine_similarity(sum_a[l], sum_b[l]));
  }
  return report;
}

double symmetric_kl(std::span<const double> p, std::span<const double> q, double floor) {
  if (p.size() != q.size()) throw ShapeError("distributions have different lengths");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = std::max(p[i], floor);
    const double b = std::max(q[i], floor);
    total += (a - b) * (std::log(a) - std::log(b));
  }
  return total;
}

DivergenceResult behavioral_divergence(const Model& model, const MaskRef& a, const MaskRef& b,
                                       const std::vector<TokenSequence>& probes,
                                       unsigned threads) {
  require_probes(probes);
  const auto da = distributions(model.with_masks(a, model.gamma()), probes, threads);
  const auto db = distributions(model.with_masks(b, model.gamma()), probes, threads);
  DivergenceResult result;
  result.per_probe.reserve(probes.size());
  for (std::size_t i = 0; i < probes.size(); ++i) {
    result.per_probe.push_back(symmetric_kl(da[i], db[i]));
  }
  result.mean = mean_of(result.per_probe);
  return result;
}

RestoreMetric parse_restore_metric(std::string_view text) {
  if (text == "divergence_to_base" || text == "base") return RestoreMetric::kDivergenceToBase;
  if (text == "divergence_to_masked" || text == "masked") {
    return RestoreMetric::kDivergenceToMasked;
  }
  throw ValidationError("unknown restore metric '" + std::string(text) +
                        "' (expected divergence_to_base or divergence_to_masked)");
}

std::vector<RestorationRow> restoration_sweep(const Model& model, const MaskSet& masks,
                                              const std::vector<TokenSequence>& probes,
                                              RestoreMetric metric, unsigned threads) {
  require_probes(probes);
  const double gamma = model.gamma();
  const auto masked_ref = std::make_shared<const MaskSet>(masks);
  const auto reference =
      metric == RestoreMetric::kDivergenceToBase
          ? distributions(model.with_masks(nullptr, gamma), probes, threads)
          : distributions(model.with_masks(masked_ref, gamma), probes, threads);
  double baseline = 0.0;
  if (metric == RestoreMetric::kDivergenceToBase) {
    baseline = mean_divergence(
        distributions(model.with_masks(masked_ref, gamma), probes, threads), reference);
  }

  std::vector<ModuleAddress> addrs;
  for (const auto& entry : masks.masks()) addrs.push_back(entry.first);
  std::vector<RestorationRow> rows(addrs.size());
  parallel_for(addrs.size(), threads, [&](std::size_t k) {
    const auto restored = std::make_shared<const MaskSet>(restore_layer(masks, addrs[k]));
    const double value =
        mean_divergence(distributions(model.with_masks(restored, gamma), probes, 1), reference);
    rows[k] = {addrs[k], value,
               metric == RestoreMetric::kDivergenceToBase ? baseline - value : value};
  });
  std::stable_sort(rows.begin(), rows.end(), [](const RestorationRow& a, const RestorationRow& b) {
    return a.effect > b.effect;
  });
  return rows;
}

ReportTable separation_table(const SeparationReport& report) {
  ReportTable t;
  t.title = "Differential mask ratio";
  t.label_header = "group";
  t.columns = {"differing", "total", "ratio_pct"};
  for (const auto& g : report.ratios) {
    t.rows.push_back({g.group,
                      {static_cast<double>(g.differing), static_cast<double>(g.total), g.ratio}});
  }
  t.meta = report.meta;
  t.meta["jaccard_aggregate"] = format_number(report.jaccard.aggregate);
  return t;
}

ReportTable jaccard_table(const JaccardResult& result) {
  ReportTable t;
  t.title = "Jaccard overlap";
  t.label_header = "module";
  t.columns = {"intersection", "union", "jaccard"};
  for (const auto& o : result.per_module) {
    t.rows.push_back({o.addr.name(),
                      {static_cast<double>(o.intersection), static_cast<double>(o.union_count),
                       o.jaccard}});
  }
  t.rows.push_back({"aggregate",
                    {static_cast<double>(result.intersection),
                     static_cast<double>(result.union_count), result.aggregate}});
  return t;
}

ReportTable representation_table(const RepresentationReport& report) {
  ReportTable t;
  t.title = "Layer-wise cosine similarity";
  t.label_header = "layer";
  t.columns = {"cosine"};
  for (std::size_t l = 0; l < report.per_layer.size(); ++l) {
    t.rows.push_back({"layers." + std::to_string(l), {report.per_layer[l]}});
  }
  t.meta["pooling"] = std::string(pooling_name(report.pooling));
  t.meta["probes"] = std::to_string(report.probe_count);
  return t;
}

ReportTable divergence_table(const DivergenceResult& result) {
  ReportTable t;
  t.title = "Behavioral divergence (symmetric KL)";
  t.label_header = "probe";
  t.columns = {"sym_kl"};
  for (std::size_t i = 0; i < result.per_probe.size(); ++i) {
    t.rows.push_back({"probe." + std::to_string(i), {result.per_probe[i]}});
  }
  t.rows.push_back({"mean", {result.mean}});
  return t;
}

ReportTable restoration_table(const std::vector<RestorationRow>& rows, RestoreMetric metric) {
  ReportTable t;
  t.title = "Single-module restoration sweep";
  t.label_header = "module";
  t.columns = {"value", "effect"};
  for (const auto& r : rows) t.rows.push_back({r.addr.name(), {r.value, r.effect}});
  t.meta["metric"] = metric == RestoreMetric::kDivergenceToBase ? "divergence_to_base"
                                                                : "divergence_to_masked";
  return t;
}

}  // namespace pprune
