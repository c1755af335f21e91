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

// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "fixtures.hpp"
#include "pprune/analysis.hpp"
#include "pprune/calibration.hpp"
#include "pprune/error.hpp"
#include "pprune/masking.hpp"
#include "pprune/model.hpp"
#include "pprune/scoring.hpp"

using namespace pprune;
using pprune::testing::persona_fixture;
using pprune::testing::random_matrix;
using pprune::testing::random_scores;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_seconds;
  std::function<Outcome()> run;
};

bool close_rel(double got, double want, double tol = 1e-9) {
  if (got == want) return true;
  return std::abs(got - want) <= tol * std::abs(want);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// ---- brute-force references ---------------------------------------------------

std::size_t keep_count_exact(int rho_tenths, std::size_t n) {
  return static_cast<std::size_t>((10 - rho_tenths) * n / 10);
}

Matrix oracle_topk(const ScoreMatrix& s, std::size_t k) {
  Matrix m(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    // Selection by repeated argmax; the first maximum wins.
    std::vector<bool> taken(s.cols(), false);
    for (std::size_t round = 0; round < k; ++round) {
      std::size_t best = s.cols();
      for (std::size_t j = 0; j < s.cols(); ++j) {
        if (taken[j]) continue;
        if (best == s.cols() || s(i, j) > s(i, best)) best = j;
      }
      taken[best] = true;
      m(i, best) = 1.0f;
    }
  }
  return m;
}

double oracle_phi(Phi phi, double z) {
  if (phi == Phi::kRelu) return z > 0 ? z : 0.0;
  return std::log(1.0 + std::exp(z));
}

ModuleStats random_module_stats(std::size_t n, Rng& rng) {
  ModuleStats s;
  s.n_obs = 10;
  for (std::size_t j = 0; j < n; ++j) {
    const double mu = standard_normal(rng);
    const double var = uniform_unit(rng) * 2.0;
    s.mean.push_back(mu);
    s.variance.push_back(var);
    s.abs_mean.push_back(std::abs(mu) + uniform_unit(rng));
    s.hdiag.push_back(mu * mu + var + 0.01);
  }
  return s;
}

// ---- criteria -------------------------------------------------------------------

Outcome equation_oracles() {
  Rng rng(42);
  std::size_t instances = 0;
  std::size_t mismatches = 0;
  std::string first;
  auto fail = [&](const std::string& what) {
    if (mismatches++ == 0) first = what;
  };
  for (int it = 0; it < 1200; ++it) {
    const std::size_t rows = 1 + uniform_index(rng, 16);
    const std::size_t cols = 1 + uniform_index(rng, 16);
    const Matrix w = random_matrix(rows, cols, rng);
    ++instances;

    // Plain and refined scores.
    std::vector<double> a(cols), h(cols);
    for (std::size_t j = 0; j < cols; ++j) {
      a[j] = uniform_unit(rng) * 3.0;
      h[j] = 0.01 + uniform_unit(rng) * 5.0;
    }
    const ScoreMatrix sw = score_wanda(w, a);
    const ScoreMatrix sr = score_refined(w, h);
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const double aw = std::fabs(static_cast<double>(w(i, j)));
        if (!close_rel(sw(i, j), aw * a[j])) fail("score_wanda");
        if (!close_rel(sr(i, j), aw * std::sqrt(h[j]))) fail("score_refined");
      }
    }

    // Contrastive Wanda, both targets and both activations.
    const ModuleStats plus = random_module_stats(cols, rng);
    const ModuleStats minus = random_module_stats(cols, rng);
    for (Phi phi : {Phi::kRelu, Phi::kSoftplus}) {
      ContrastParams params{phi, 1e-8};
      for (Target t : {Target::kPlus, Target::kMinus}) {
        const ScoreMatrix sc = score_contrastive_wanda(w, plus, minus, params, t);
        for (std::size_t j = 0; j < cols; ++j) {
          const double diff = plus.mean[j] - minus.mean[j];
          const double z = (t == Target::kPlus ? diff : -diff) /
                           (std::sqrt(plus.variance[j] + minus.variance[j]) + 1e-8);
          for (std::size_t i = 0; i < rows; ++i) {
            const double want = std::fabs(static_cast<double>(w(i, j))) * oracle_phi(phi, z);
            if (!close_rel(sc(i, j), want)) fail("score_contrastive_wanda");
          }
        }
      }
    }

    // Contrastive sparse.
    const ScoreMatrix sp = random_scores(rows, cols, rng);
    ScoreMatrix sm = random_scores(rows, cols, rng);
    if (it % 5 == 0) sm = sp;  // exact ties
    const ContrastiveSparse cs = score_contrastive_sparse(sp, sm);
    for (std::size_t i = 0; i < rows; ++i) {
      double tp = 0, tm = 0;
      for (std::size_t j = 0; j < cols; ++j) {
        tp += sp(i, j);
        tm += sm(i, j);
      }
      for (std::size_t j = 0; j < cols; ++j) {
        const double np = sp(i, j) / tp;
        const double nm = sm(i, j) / tm;
        if (!close_rel(cs.contrast(i, j), std::fabs(np - nm)) &&
            std::fabs(cs.contrast(i, j) - std::fabs(np - nm)) > 1e-15) {
          fail("score_contrastive_sparse contrast");
        }
        const int want = np > nm ? 1 : (np < nm ? -1 : 0);
        if (cs.winner(i, j) != want) fail("score_contrastive_sparse winner");
      }
    }

    // finalize against raw observation lists.
    const std::size_t n_obs = 1 + uniform_index(rng, 12);
    StatsAccumulator acc = init_stats({{ModuleAddress{0, Slot::kQ}, cols}});
    std::vector<std::vector<float>> obs(n_obs, std::vector<float>(cols));
    for (auto& o : obs) {
      for (float& v : o) v = static_cast<float>(standard_normal(rng) + 0.5);
      acc.observe(ModuleAddress{0, Slot::kQ}, o);
    }
    const double lambda = 0.01;
    const ModuleStats fs = finalize(acc, lambda).at(ModuleAddress{0, Slot::kQ});
    for (std::size_t j = 0; j < cols; ++j) {
      double sa = 0, s = 0, sq = 0;
      for (const auto& o : obs) {
        sa += std::fabs(double(o[j]));
        s += o[j];
        sq += double(o[j]) * o[j];
      }
      const double nn = static_cast<double>(n_obs);
      const double mu = s / nn;
      const double var = std::max(0.0, sq / nn - mu * mu);
      if (!close_rel(fs.abs_mean[j], sa / nn) || !close_rel(fs.mean[j], mu) ||
          !close_rel(fs.hdiag[j], sq / nn + lambda)) {
        fail("finalize");
      }
      if (std::fabs(fs.variance[j] - var) > 1e-9 * std::max(1.0, var)) fail("finalize variance");
    }

    // topk_mask with deliberate ties.
    ScoreMatrix st(rows, cols);
    for (double& v : st.data()) v = static_cast<double>(uniform_index(rng, 4));
    const int rho_tenths = 1 + static_cast<int>(uniform_index(rng, 9));
    const std::size_t k = keep_count_exact(rho_tenths, cols);
    if (k == 0) {
      bool threw = false;
      try {
        (void)topk_mask(st, rho_tenths / 10.0);
      } catch (const ValidationError&) {
        threw = true;
      }
      if (!threw) fail("topk_mask K=0 accepted");
    } else if (topk_mask(st, rho_tenths / 10.0) != oracle_topk(st, k)) {
      fail("topk_mask");
    }
  }
  return {mismatches == 0, std::to_string(instances) + " instances, " + std::to_string(mismatches) +
                               " mismatches" + (first.empty() ? "" : " (first: " + first + ")")};
}

Outcome mask_constraints() {
  Rng rng(43);
  std::size_t checked = 0, violations = 0;
  for (int rho_tenths : {2, 4, 6, 8}) {
    const double rho = rho_tenths / 10.0;
    for (int it = 0; it < 50; ++it) {
      ModelConfig c;
      c.n_layers = 1 + uniform_index(rng, 2);
      c.d_model = 4 * (2 + uniform_index(rng, 6));
      c.n_heads = 2;
      c.d_ff = 5 + uniform_index(rng, 40);
      ImportanceScores scores;
      std::uint64_t want_ones = 0, total = 0;
      for (const ModuleAddress& addr : all_module_addresses(c.n_layers)) {
        const auto [r, n] = c.module_shape(addr.slot);
        scores.modules[addr] = random_scores(r, n, rng);
        want_ones += keep_count_exact(rho_tenths, n) * r;
        total += r * n;
      }
      const MaskSet ms = build_maskset(scores, SparsityPlan(rho));
      std::uint64_t ones = 0;
      for (const auto& [addr, m] : ms.masks()) {
        const std::size_t k = keep_count_exact(rho_tenths, m.cols());
        for (std::size_t i = 0; i < m.rows(); ++i) {
          std::size_t row_ones = 0;
          for (float v : m.row(i)) row_ones += v == 1.0f;
          if (row_ones != k) ++violations;
          ones += row_ones;
        }
      }
      const double want_density = static_cast<double>(want_ones) / static_cast<double>(total);
      if (ones != want_ones || mask_density(ms).aggregate != want_density) ++violations;
      ++checked;
    }
  }
  return {violations == 0, std::to_string(checked) + " mask sets over rho {0.2,0.4,0.6,0.8}, " +
                               std::to_string(violations) + " violations"};
}

Outcome contrastive_disjointness() {
  Rng rng(44);
  std::size_t built = 0, infeasible = 0, violations = 0;
  for (int it = 0; it < 800; ++it) {
    const std::size_t rows = 1 + uniform_index(rng, 16);
    const std::size_t cols = 2 + uniform_index(rng, 31);
    const double rho = 0.3 + 0.1 * static_cast<double>(uniform_index(rng, 6));
    ScoreMatrix sp = random_scores(rows, cols, rng);
    ScoreMatrix sm(rows, cols);
    // Opposing personas: the minus scores are a noisy reversal of the plus scores.
    for (std::size_t i = 0; i < sp.data().size(); ++i) {
      sm.data()[i] = std::max(0.0, 1.0 - sp.data()[i] + 0.3 * standard_normal(rng));
    }
    if (it % 7 == 0) sm = sp;  // fully tied instances use the parity rule
    const bool sparse = it % 2 == 0;
    WinnerMatrix winner;
    ScoreMatrix plus = sp, minus = sm;
    if (sparse) {
      ContrastiveSparse cs = score_contrastive_sparse(sp, sm);
      winner = cs.winner;
      plus = minus = cs.contrast;
    } else {
      winner = winner_of(sp, sm);
    }
    try {
      const auto [mp, mm] = contrastive_pair(plus, minus, winner, rho, true);
      for (std::size_t i = 0; i < mp.data().size(); ++i) {
        if (mp.data()[i] == 1.0f && mm.data()[i] == 1.0f) ++violations;
      }
      ++built;
    } catch (const ValidationError&) {
      ++infeasible;
    }
  }
  return {built >= 500 && violations == 0,
          std::to_string(built) + " pairs built (" + std::to_string(infeasible) +
              " infeasible skipped), " + std::to_string(violations) + " shared positions"};
}

Outcome masked_linear_contracts() {
  Rng rng(45);
  std::size_t bit_mismatch = 0, affine_fail = 0, instances = 0;
  double worst = 0.0;
  for (int it = 0; it < 500; ++it) {
    const std::size_t rows = 1 + uniform_index(rng, 24);
    const std::size_t cols = 1 + uniform_index(rng, 24);
    const Matrix w = random_matrix(rows, cols, rng);
    const Matrix b = random_matrix(1, rows, rng);
    const Matrix x = random_matrix(1, cols, rng);
    Matrix m(rows, cols), wm(rows, cols);
    for (std::size_t i = 0; i < m.data().size(); ++i) {
      m.data()[i] = uniform_unit(rng) < 0.5 ? 0.0f : 1.0f;
      wm.data()[i] = m.data()[i] == 1.0f ? w.data()[i] : 0.0f;
    }
    const std::span<const float> bias = it % 2 ? b.row(0) : std::span<const float>{};
    const auto masked = masked_linear(w, bias, &m, 0.0, x.row(0));
    const auto dense = masked_linear(wm, bias, nullptr, 0.0, x.row(0));
    if (std::memcmp(masked.data(), dense.data(), masked.size() * sizeof(float)) != 0) {
      ++bit_mismatch;
    }
    const auto y0 = masked_linear_wide(w, bias, &m, 0.0, x.row(0));
    const auto y1 = masked_linear_wide(w, bias, &m, 0.25, x.row(0));
    const auto y2 = masked_linear_wide(w, bias, &m, 0.5, x.row(0));
    for (std::size_t i = 0; i < rows; ++i) {
      const double dev = std::abs(y1[i] - 0.5 * (y0[i] + y2[i]));
      const double scale = std::max({1.0, std::abs(y0[i]), std::abs(y2[i])});
      worst = std::max(worst, dev / scale);
      if (dev > 1e-9 * scale) ++affine_fail;
    }
    ++instances;
  }
  return {bit_mismatch == 0 && affine_fail == 0,
          std::to_string(instances) + " instances, " + std::to_string(bit_mismatch) +
              " bit mismatches, worst affinity deviation " + fmt("%.2e", worst)};
}

struct SeparationTrial {
  double jaccard_contrastive = 0, jaccard_independent = 0;
  double divergence_contrastive = 0, divergence_independent = 0;
};

SeparationTrial separation_trial(std::uint64_t seed, ScoreMethod method) {
  const auto f = persona_fixture(seed);
  const Model model = Model::build(f.weights);
  CalibrationOptions opts;
  opts.seed = seed;
  const ActivationStats plus = collect_stats(model, f.plus_data, opts);
  const ActivationStats minus = collect_stats(model, f.minus_data, opts);
  const ContrastiveScores scores =
      score_contrastive(*f.weights, plus, minus, method, ContrastParams{});
  const SparsityPlan plan(0.5);
  const auto [cp, cm] = contrastive_masksets(scores, plan, true);
  const auto [ip, im] = contrastive_masksets(scores, plan, false);
  SeparationTrial t;
  t.jaccard_contrastive = jaccard_overlap(cp, cm).aggregate;
  t.jaccard_independent = jaccard_overlap(ip, im).aggregate;
  auto share = [](const MaskSet& m) { return std::make_shared<const MaskSet>(m); };
  t.divergence_contrastive = behavioral_divergence(model, share(cp), share(cm), f.probes).mean;
  t.divergence_independent = behavioral_divergence(model, share(ip), share(im), f.probes).mean;
  return t;
}

bool separated(const SeparationTrial& t) {
  return t.jaccard_contrastive + 0.05 <= t.jaccard_independent &&
         t.divergence_contrastive > t.divergence_independent;
}

Outcome persona_separation() {
  int successes = 0;
  int wanda_successes = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 42; seed < 47; ++seed) {
    const SeparationTrial t = separation_trial(seed, ScoreMethod::kSparseContrast);
    successes += separated(t);
    wanda_successes += separated(separation_trial(seed, ScoreMethod::kWandaContrast));
    detail << " [" << seed << ": J " << fmt("%.3f", t.jaccard_contrastive) << "/"
           << fmt("%.3f", t.jaccard_independent) << " D " << fmt("%.4f", t.divergence_contrastive)
           << "/" << fmt("%.4f", t.divergence_independent) << "]";
  }
  return {successes == 5, "sparse-contrast " + std::to_string(successes) + "/5 seeds;" +
                              detail.str() + "; wanda-contrast (informational) " +
                              std::to_string(wanda_successes) + "/5"};
}

Outcome restoration_probe() {
  int hits = 0;
  std::ostringstream detail;
  for (std::uint64_t seed = 42; seed < 47; ++seed) {
    const auto f = pprune::testing::restoration_fixture(seed);
    const auto rows =
        restoration_sweep(f.model, f.masks, f.probes, RestoreMetric::kDivergenceToBase);
    const bool hit = rows.front().addr == f.planted;
    hits += hit;
    detail << " [" << seed << ": planted " << f.planted.name() << ", top "
           << rows.front().addr.name() << " " << fmt("%.4f", rows.front().effect) << " vs "
           << fmt("%.4f", rows[1].effect) << "]";
  }
  return {hits >= 4, std::to_string(hits) + "/5 seeds;" + detail.str()};
}

Outcome calibration_saturation() {
  const std::vector<std::size_t> ks{5, 10, 20, 50, 100};
  std::vector<double> mean(ks.size(), 0.0);
  for (std::uint64_t seed = 42; seed < 47; ++seed) {
    const auto f = persona_fixture(seed, 200);
    const Model model = Model::build(f.weights);
    for (std::size_t i = 0; i < ks.size(); ++i) {
      MaskSet masks[2];
      for (int half = 0; half < 2; ++half) {
        CalibrationOptions opts;
        opts.seed = seed;
        opts.max_samples = ks[i] * (half + 1);
        const ActivationStats stats = collect_stats(model, f.plus_data, opts);
        masks[half] = build_maskset(score_model(*f.weights, stats, ScoreMethod::kWanda),
                                    SparsityPlan(0.5));
      }
      mean[i] += jaccard_overlap(masks[0], masks[1]).aggregate / 5.0;
    }
  }
  bool monotone = true;
  std::ostringstream detail;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (i > 0 && mean[i] < mean[i - 1]) monotone = false;
    detail << " k=" << ks[i] << ":" << fmt("%.4f", mean[i]);
  }
  return {monotone, "mean Jaccard(k, 2k)" + detail.str()};
}

int cli_call(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int rc = pprune::cli::run(args, out, err);
  if (rc != 0) std::fprintf(stderr, "cli failure: %s\n", err.str().c_str());
  return rc;
}

Outcome end_to_end_determinism() {
  const std::vector<std::string> outputs{
      "plus.stats", "minus.stats", "wanda.mask", "pair.plus.mask", "pair.minus.mask",
      "diff.json",  "jaccard.csv", "cosine.md",  "divergence.json", "sweep.json"};
  std::vector<std::vector<std::vector<std::uint8_t>>> runs;
  for (int run = 0; run < 2; ++run) {
    pprune::testing::TempDir dir("determinism");
    const auto f = persona_fixture(42);
    write_archive(dir / "weights.ppt", *f.weights);
    pprune::testing::write_dataset(dir / "plus.txt", f.plus_data);
    pprune::testing::write_dataset(dir / "minus.txt", f.minus_data);
    pprune::testing::write_dataset(dir / "probes.txt", f.probes);
    const std::string d = dir.path().string() + "/";
    const std::string w = d + "weights.ppt";
    const std::vector<std::vector<std::string>> steps{
        {"calibrate", "--weights", w, "--data", d + "plus.txt", "--out", d + "plus.stats",
         "--seed", "42", "--threads", "2"},
        {"calibrate", "--weights", w, "--data", d + "minus.txt", "--out", d + "minus.stats",
         "--seed", "42"},
        {"mask", "--weights", w, "--method", "wanda", "--stats", d + "plus.stats", "--rho", "0.6",
         "--out", d + "wanda.mask"},
        {"mask", "--weights", w, "--method", "sparse-contrast", "--stats-plus", d + "plus.stats",
         "--stats-minus", d + "minus.stats", "--rho", "0.5", "--out", d + "pair"},
        {"analyze", "diff", "--a", d + "pair.plus.mask", "--b", d + "pair.minus.mask",
         "--grouping", "by_block", "--out", d + "diff.json"},
        {"analyze", "jaccard", "--a", d + "wanda.mask", "--b", d + "pair.plus.mask", "--format",
         "csv", "--out", d + "jaccard.csv"},
        {"analyze", "cosine", "--weights", w, "--a", d + "pair.plus.mask", "--b", "dense",
         "--probes", d + "probes.txt", "--format", "markdown", "--out", d + "cosine.md"},
        {"analyze", "divergence", "--weights", w, "--a", d + "pair.plus.mask", "--b",
         d + "pair.minus.mask", "--probes", d + "probes.txt", "--out", d + "divergence.json"},
        {"analyze", "restore-sweep", "--weights", w, "--mask", d + "pair.plus.mask", "--probes",
         d + "probes.txt", "--out", d + "sweep.json", "--threads", "3"},
    };
    for (const auto& step : steps) {
      if (cli_call(step) != 0) return {false, "pipeline step '" + step[0] + "' failed"};
    }
    std::vector<std::vector<std::uint8_t>> files;
    for (const auto& name : outputs) files.push_back(pprune::testing::read_bytes(dir / name));
    runs.push_back(std::move(files));
  }
  std::size_t differing = 0;
  std::size_t bytes = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    differing += runs[0][i] != runs[1][i];
    bytes += runs[0][i].size();
  }
  return {differing == 0, std::to_string(outputs.size()) + " artifacts (" + std::to_string(bytes) +
                              " bytes), " + std::to_string(differing) + " differ"};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"equation oracles", 10, equation_oracles},
      {"mask constraints", 5, mask_constraints},
      {"contrastive disjointness", 60, contrastive_disjointness},
      {"masked-linear contracts", 60, masked_linear_contracts},
      {"synthetic persona separation", 120, persona_separation},
      {"restoration probe", 120, restoration_probe},
      {"calibration-size saturation", 120, calibration_saturation},
      {"end-to-end determinism", 120, end_to_end_determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.budget_seconds;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("%s  %-30s %7.2fs  %s%s\n", pass ? "PASS" : "FAIL", c.name.c_str(), secs,
                o.detail.c_str(), in_time ? "" : " (over time budget)");
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
