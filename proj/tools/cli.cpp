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

#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "pprune/analysis.hpp"
#include "pprune/archive.hpp"
#include "pprune/calibration.hpp"
#include "pprune/error.hpp"
#include "pprune/masking.hpp"
#include "pprune/model.hpp"
#include "pprune/parallel.hpp"
#include "pprune/random.hpp"
#include "pprune/report.hpp"
#include "pprune/scoring.hpp"
#include "pprune/tokens.hpp"

namespace pprune::cli {
namespace {

namespace fs = std::filesystem;

// Misuse that CLI11 cannot see (e.g. option combinations); exits with 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  unsigned threads = 0;
  std::string tokens = "ids";

  unsigned thread_count() const {
    return resolve_threads(threads == 0 ? std::nullopt : std::optional<unsigned>(threads));
  }
  TokenMode token_mode() const { return parse_token_mode(tokens); }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--threads", c.threads,
                  "Worker threads (falls back to PPRUNE_THREADS, then 1)");
  app->add_option("--tokens", c.tokens, "Token format of text inputs: ids | bytes")
      ->check(CLI::IsMember({"ids", "bytes"}));
}

std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::shared_ptr<const TensorArchive> load_weights(const std::string& path) {
  auto archive = std::make_shared<TensorArchive>(read_archive(path));
  const std::string kind = archive->meta_or("kind", std::string(kKindWeights));
  if (kind != kKindWeights) {
    throw ValidationError(path + ": archive kind is '" + kind + "', expected 'weights'");
  }
  return archive;
}

MaskRef load_mask_or_dense(const std::string& path) {
  if (path == "dense") return nullptr;
  return std::make_shared<const MaskSet>(read_maskset(path));
}

ActivationStats load_stats(const std::string& path) {
  ActivationStats stats = stats_from_archive(read_archive(path));
  if (stats.label.empty()) stats.label = fs::path(path).stem().string();
  return stats;
}

void print_density(std::ostream& out, const std::string& label, const MaskSet& masks) {
  const DensityReport d = mask_density(masks);
  out << "density " << label << "\n";
  for (const auto& [addr, v] : d.per_module) {
    out << "  " << addr.name() << "  " << format_fixed(v, 4) << "\n";
  }
  out << "  aggregate  " << format_fixed(d.aggregate, 4) << "\n";
}

// ---- calibrate --------------------------------------------------------------

struct CalibrateArgs {
  Common common;
  std::string weights;
  std::string data;
  std::string out;
  std::string persona;
  double lambda = 0.01;
  std::size_t max_samples = 128;
  std::size_t max_len = 512;
  std::uint64_t seed = 42;
};

void setup_calibrate(CLI::App& app, CalibrateArgs& a) {
  auto* sub = app.add_subcommand("calibrate", "Collect activation statistics on a calibration set");
  sub->add_option("--weights", a.weights, "Weights archive")->required()->check(CLI::ExistingFile);
  sub->add_option("--data", a.data, "Calibration dataset, one sequence per line")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--out", a.out, "Output stats archive")->required();
  sub->add_option("--persona", a.persona, "Label recorded in the stats metadata");
  sub->add_option("--lambda", a.lambda, "Damping added to the second moment")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--max-samples", a.max_samples, "Sequences sampled from the dataset")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--max-len", a.max_len, "Tokens kept per sequence")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  sub->add_option("--seed", a.seed, "Sampling seed")->capture_default_str();
  add_common(sub, a.common);
}

int cmd_calibrate(const CalibrateArgs& a, std::ostream& out) {
  const Model model = Model::build(load_weights(a.weights));
  const auto dataset = load_dataset(a.data, a.common.token_mode());
  CalibrationOptions opts;
  opts.lambda = a.lambda;
  opts.max_samples = a.max_samples;
  opts.max_len = a.max_len;
  opts.seed = a.seed;
  opts.threads = a.common.thread_count();
  ActivationStats stats = collect_stats(model, dataset, opts);
  stats.label = a.persona.empty() ? fs::path(a.data).stem().string() : a.persona;
  write_archive(a.out, stats_to_archive(stats));
  out << "observations per module\n";
  for (const auto& [addr, s] : stats.modules) out << "  " << addr.name() << "  " << s.n_obs << "\n";
  out << "wrote " << a.out << "\n";
  return kExitOk;
}

// ---- mask -------------------------------------------------------------------

struct MaskArgs {
  Common common;
  std::string weights;
  std::string method = "wanda";
  std::string stats;
  std::string stats_plus;
  std::string stats_minus;
  double rho = 0.5;
  std::vector<std::string> overrides;
  std::string phi = "relu";
  double epsilon = 1e-8;
  std::uint64_t seed = 42;
  bool no_exclusion = false;
  std::string out;
  std::string persona;
  std::string counter_persona;
  std::string dump_scores;
};

void setup_mask(CLI::App& app, MaskArgs& a) {
  auto* sub = app.add_subcommand("mask", "Score parameters and build Top-K persona masks");
  sub->add_option("--weights", a.weights, "Weights archive")->required()->check(CLI::ExistingFile);
  sub->add_option("--method", a.method, "wanda | refined | wanda-contrast | sparse-contrast")
      ->capture_default_str()
      ->check(CLI::IsMember({"wanda", "refined", "wanda-contrast", "sparse-contrast"}));
  sub->add_option("--stats", a.stats, "Stats archive (wanda, refined)")->check(CLI::ExistingFile);
  sub->add_option("--stats-plus", a.stats_plus, "Stats of the first ('seek') persona")
      ->check(CLI::ExistingFile);
  sub->add_option("--stats-minus", a.stats_minus, "Stats of the opposing persona")
      ->check(CLI::ExistingFile);
  sub->add_option("--rho", a.rho, "Sparsity ratio in (0, 1)")->capture_default_str();
  sub->add_option("--override", a.overrides,
                  "Per-module ratio, e.g. mlp=0.3 or layers.0-3.attention=0.5 (repeatable)");
  sub->add_option("--phi", a.phi, "relu | softplus")
      ->capture_default_str()
      ->check(CLI::IsMember({"relu", "softplus"}));
  sub->add_option("--epsilon", a.epsilon, "Stabilizer in the standardized difference")
      ->capture_default_str();
  sub->add_option("--seed", a.seed, "Seed recorded in the mask provenance")->capture_default_str();
  sub->add_flag("--no-exclusion", a.no_exclusion,
                "Contrastive methods: build independent per-persona masks");
  sub->add_option("--out", a.out,
                  "Output mask file; contrastive methods write <out>.plus.mask and "
                  "<out>.minus.mask")
      ->required();
  sub->add_option("--persona", a.persona, "Persona label (defaults to the stats label)");
  sub->add_option("--counter-persona", a.counter_persona, "Opposing persona label");
  sub->add_option("--dump-scores", a.dump_scores, "Also write importance scores (debug)");
  add_common(sub, a.common);
}

int cmd_mask(const MaskArgs& a, std::ostream& out) {
  const ScoreMethod method = parse_score_method(a.method);
  if (is_contrastive(method)) {
    if (a.stats_plus.empty() || a.stats_minus.empty()) {
      throw UsageError("--method " + a.method + " needs both --stats-plus and --stats-minus");
    }
    if (!a.stats.empty()) throw UsageError("--stats is only used by wanda and refined");
  } else {
    if (a.stats.empty()) throw UsageError("--method " + a.method + " needs --stats");
    if (!a.stats_plus.empty() || !a.stats_minus.empty()) {
      throw UsageError("--stats-plus/--stats-minus are only used by contrastive methods");
    }
    if (a.no_exclusion) throw UsageError("--no-exclusion applies to contrastive methods only");
  }

  SparsityPlan plan(a.rho);
  for (const auto& o : a.overrides) plan.add_override(o);
  const auto weights = load_weights(a.weights);
  const unsigned threads = a.common.thread_count();

  if (!is_contrastive(method)) {
    ActivationStats stats = load_stats(a.stats);
    if (!a.persona.empty()) stats.label = a.persona;
    stats.seed = a.seed;
    const ImportanceScores scores = score_model(*weights, stats, method, threads);
    if (!a.dump_scores.empty()) write_archive(a.dump_scores, scores_to_archive(scores));
    const MaskSet masks = build_maskset(scores, plan, threads);
    write_maskset(a.out, masks);
    print_density(out, a.out, masks);
    return kExitOk;
  }

  ActivationStats plus = load_stats(a.stats_plus);
  ActivationStats minus = load_stats(a.stats_minus);
  if (!a.persona.empty()) plus.label = a.persona;
  if (!a.counter_persona.empty()) minus.label = a.counter_persona;
  plus.seed = minus.seed = a.seed;
  ContrastParams params;
  params.phi = parse_phi(a.phi);
  params.epsilon = a.epsilon;
  const ContrastiveScores scores =
      score_contrastive(*weights, plus, minus, method, params, threads);
  if (!a.dump_scores.empty()) {
    write_archive(a.dump_scores + ".plus", scores_to_archive(scores.plus));
    write_archive(a.dump_scores + ".minus", scores_to_archive(scores.minus));
  }
  const auto [mp, mm] = contrastive_masksets(scores, plan, !a.no_exclusion, threads);
  const std::string plus_path = a.out + ".plus.mask";
  const std::string minus_path = a.out + ".minus.mask";
  write_maskset(plus_path, mp);
  write_maskset(minus_path, mm);
  print_density(out, plus_path, mp);
  print_density(out, minus_path, mm);
  return kExitOk;
}

// ---- compose ----------------------------------------------------------------

struct ComposeArgs {
  std::string weights;
  std::vector<std::string> entries;
  std::string out;
};

void setup_compose(CLI::App& app, ComposeArgs& a) {
  auto* sub = app.add_subcommand("compose", "Mix persona masks by magnitude-ranked fractions");
  sub->add_option("--weights", a.weights, "Weights archive")->required()->check(CLI::ExistingFile);
  sub->add_option("--entry", a.entries, "mask-file=fraction (repeatable)")->required();
  sub->add_option("--out", a.out, "Output mask file")->required();
}

int cmd_compose(const ComposeArgs& a, std::ostream& out) {
  const auto weights = load_weights(a.weights);
  std::vector<MaskMix> mixes;
  for (const auto& e : a.entries) {
    const auto eq = e.rfind('=');
    if (eq == std::string::npos) throw UsageError("--entry must look like mask=fraction");
    mixes.push_back({read_maskset(e.substr(0, eq)),
                     parse_number(e.substr(eq + 1), "compose fraction")});
  }
  const MaskSet masks = compose_masks(mixes, *weights);
  write_maskset(a.out, masks);
  print_density(out, a.out, masks);
  return kExitOk;
}

// ---- generate ---------------------------------------------------------------

struct GenerateArgs {
  Common common;
  std::string weights;
  std::vector<std::string> masks;
  double gamma = 0.0;
  std::string prompt;
  std::size_t steps = 16;
  double temperature = 0.0;
  std::uint64_t seed = 42;
};

void setup_generate(CLI::App& app, GenerateArgs& a) {
  auto* sub = app.add_subcommand("generate", "Generate tokens under one or more bound masks");
  sub->add_option("--weights", a.weights, "Weights archive")->required()->check(CLI::ExistingFile);
  sub->add_option("--mask", a.masks,
                  "Mask file, or 'dense'; repeat to switch personas on the same weights");
  sub->add_option("--gamma", a.gamma, "Soft gate in [0, 1)")->capture_default_str();
  sub->add_option("--prompt", a.prompt, "Prompt in the --tokens format")->required();
  sub->add_option("--steps", a.steps, "Tokens to generate")->capture_default_str();
  sub->add_option("--temperature", a.temperature, "0 selects greedy decoding")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--seed", a.seed, "Sampling seed")->capture_default_str();
  add_common(sub, a.common);
}

TokenSequence generate_tokens(const Model& model, TokenSequence context, std::size_t steps,
                              double temperature, std::uint64_t seed) {
  Rng rng(seed);
  TokenSequence generated;
  const std::size_t window = model.config().max_seq;
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t start = context.size() > window ? context.size() - window : 0;
    const std::span<const Token> view(context.data() + start, context.size() - start);
    const ForwardResult fr = model.forward(view);
    const auto logits = fr.logits.row(fr.logits.rows() - 1);
    std::size_t pick = 0;
    if (temperature == 0.0) {
      pick = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) -
                                      logits.begin());
    } else {
      const double top = *std::max_element(logits.begin(), logits.end());
      std::vector<double> w(logits.size());
      double total = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = std::exp((static_cast<double>(logits[i]) - top) / temperature);
        total += w[i];
      }
      double u = uniform_unit(rng) * total;
      pick = w.size() - 1;
      for (std::size_t i = 0; i < w.size(); ++i) {
        if (u < w[i]) {
          pick = i;
          break;
        }
        u -= w[i];
      }
    }
    context.push_back(static_cast<Token>(pick));
    generated.push_back(static_cast<Token>(pick));
  }
  return generated;
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  const TokenMode mode = a.common.token_mode();
  const Model base = Model::build(load_weights(a.weights));
  const TokenSequence prompt = tokenize_line(a.prompt, mode);
  if (prompt.empty()) throw UsageError("--prompt is empty");
  std::vector<std::string> labels = a.masks;
  if (labels.empty()) labels.push_back("dense");
  for (const auto& label : labels) {
    const Model model = base.with_masks(load_mask_or_dense(label), a.gamma);
    const TokenSequence tokens = generate_tokens(model, prompt, a.steps, a.temperature, a.seed);
    out << "[" << label << "] " << detokenize(tokens, mode) << "\n";
  }
  return kExitOk;
}

// ---- analyze ----------------------------------------------------------------

struct AnalyzeArgs {
  Common common;
  std::string weights;
  std::string a;
  std::string b;
  std::string mask;
  std::string probes;
  std::string grouping = "all";
  std::string pooling = "last_token";
  std::string metric = "divergence_to_base";
  long layer = -1;
  double gamma = 0.0;
  std::string format = "json";
  std::string out = "-";
};

struct AnalyzeCommands {
  CLI::App* diff = nullptr;
  CLI::App* jaccard = nullptr;
  CLI::App* cosine = nullptr;
  CLI::App* divergence = nullptr;
  CLI::App* restore = nullptr;
};

void add_report_options(CLI::App* sub, AnalyzeArgs& a) {
  sub->add_option("--format", a.format, "json | csv | markdown")
      ->capture_default_str()
      ->check(CLI::IsMember({"json", "csv", "markdown", "md"}));
  sub->add_option("--out", a.out, "Report path, '-' for stdout")->capture_default_str();
}

void add_pair_options(CLI::App* sub, AnalyzeArgs& a, bool allow_dense) {
  const char* help = allow_dense ? "Mask file or 'dense'" : "Mask file";
  sub->add_option("--a", a.a, help)->required();
  sub->add_option("--b", a.b, help)->required();
}

void add_model_options(CLI::App* sub, AnalyzeArgs& a) {
  sub->add_option("--weights", a.weights, "Weights archive")->required()->check(CLI::ExistingFile);
  sub->add_option("--probes", a.probes, "Probe sequences, one per line")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--gamma", a.gamma, "Soft gate in [0, 1)")->capture_default_str();
  add_common(sub, a.common);
}

AnalyzeCommands setup_analyze(CLI::App& app, AnalyzeArgs& a) {
  auto* analyze = app.add_subcommand("analyze", "Compare subnetworks");
  analyze->require_subcommand(1);
  AnalyzeCommands c;
  c.diff = analyze->add_subcommand("diff", "Differential mask ratio");
  add_pair_options(c.diff, a, false);
  c.diff->add_option("--grouping", a.grouping, "all | by_block | by_layer")
      ->capture_default_str()
      ->check(CLI::IsMember({"all", "by_block", "by_layer"}));
  add_report_options(c.diff, a);

  c.jaccard = analyze->add_subcommand("jaccard", "Jaccard overlap of kept positions");
  add_pair_options(c.jaccard, a, false);
  add_report_options(c.jaccard, a);

  c.cosine = analyze->add_subcommand("cosine", "Layer-wise hidden-state cosine similarity");
  add_pair_options(c.cosine, a, true);
  add_model_options(c.cosine, a);
  c.cosine->add_option("--layer", a.layer, "Single layer (default: every layer)");
  c.cosine->add_option("--pooling", a.pooling, "last_token | mean")
      ->capture_default_str()
      ->check(CLI::IsMember({"last_token", "mean"}));
  add_report_options(c.cosine, a);

  c.divergence = analyze->add_subcommand("divergence", "Symmetric KL of next-token distributions");
  add_pair_options(c.divergence, a, true);
  add_model_options(c.divergence, a);
  add_report_options(c.divergence, a);

  c.restore = analyze->add_subcommand("restore-sweep", "Restore each module in turn");
  c.restore->add_option("--mask", a.mask, "Mask file")->required()->check(CLI::ExistingFile);
  add_model_options(c.restore, a);
  c.restore->add_option("--metric", a.metric, "divergence_to_base | divergence_to_masked")
      ->capture_default_str()
      ->check(CLI::IsMember({"divergence_to_base", "divergence_to_masked"}));
  add_report_options(c.restore, a);
  return c;
}

int cmd_analyze(const AnalyzeCommands& c, const AnalyzeArgs& a, std::ostream& out) {
  const ReportFormat format = parse_report_format(a.format);
  ReportTable table;
  if (c.diff->parsed() || c.jaccard->parsed()) {
    const MaskSet ma = read_maskset(a.a);
    const MaskSet mb = read_maskset(a.b);
    if (c.diff->parsed()) {
      table = separation_table(differential_ratio(ma, mb, parse_grouping(a.grouping)));
    } else {
      table = jaccard_table(jaccard_overlap(ma, mb));
    }
  } else {
    const Model model =
        Model::build(load_weights(a.weights)).with_masks(nullptr, a.gamma);
    const auto probes = load_dataset(a.probes, a.common.token_mode());
    const unsigned threads = a.common.thread_count();
    if (c.cosine->parsed()) {
      const MaskRef ma = load_mask_or_dense(a.a);
      const MaskRef mb = load_mask_or_dense(a.b);
      const Pooling pooling = parse_pooling(a.pooling);
      if (a.layer >= 0) {
        RepresentationReport r;
        r.pooling = pooling;
        r.probe_count = probes.size();
        const double cos = layer_cosine(model, ma, mb, probes,
                                        static_cast<std::size_t>(a.layer), pooling);
        table = representation_table(r);
        table.rows.push_back({"layers." + std::to_string(a.layer), {cos}});
      } else {
        table = representation_table(representation_similarity(model, ma, mb, probes, pooling));
      }
    } else if (c.divergence->parsed()) {
      table = divergence_table(behavioral_divergence(model, load_mask_or_dense(a.a),
                                                     load_mask_or_dense(a.b), probes, threads));
    } else {
      const RestoreMetric metric = parse_restore_metric(a.metric);
      table = restoration_table(
          restoration_sweep(model, read_maskset(a.mask), probes, metric, threads), metric);
    }
  }
  if (a.out == "-") {
    out << render_report(table, format);
  } else {
    emit_report(table, format, a.out);
    out << "wrote " << a.out << "\n";
  }
  return kExitOk;
}

// ---- inspect ----------------------------------------------------------------

struct InspectArgs {
  std::string path;
  bool allow_nonfinite = false;
};

void setup_inspect(CLI::App& app, InspectArgs& a) {
  auto* sub = app.add_subcommand("inspect", "Validate an archive and list its contents");
  sub->add_option("archive", a.path, "Archive file")->required()->check(CLI::ExistingFile);
  sub->add_flag("--allow-nonfinite", a.allow_nonfinite, "Accept NaN/Inf values");
}

int cmd_inspect(const InspectArgs& a, std::ostream& out) {
  ReadOptions opts;
  opts.allow_nonfinite = a.allow_nonfinite;
  const TensorArchive archive = read_archive(a.path, opts);
  out << a.path << ": " << archive.size() << " tensors\n";
  for (const auto& [k, v] : archive.meta()) out << "  meta " << k << " = " << v << "\n";
  for (const auto& [name, m] : archive.entries()) {
    out << "  " << name << "  " << m.rows() << "x" << m.cols() << "\n";
  }
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"pprune: persona subnetworks via activation-guided pruning"};
  app.name("pprune");
  app.set_config("--config", "", "TOML file mirroring the command-line flags");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  CalibrateArgs calibrate;
  MaskArgs mask;
  ComposeArgs compose;
  GenerateArgs generate;
  AnalyzeArgs analyze;
  InspectArgs inspect;
  setup_calibrate(app, calibrate);
  setup_mask(app, mask);
  setup_compose(app, compose);
  setup_generate(app, generate);
  const AnalyzeCommands analyze_cmds = setup_analyze(app, analyze);
  setup_inspect(app, inspect);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    err << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (app.got_subcommand("calibrate")) return cmd_calibrate(calibrate, out);
    if (app.got_subcommand("mask")) return cmd_mask(mask, out);
    if (app.got_subcommand("compose")) return cmd_compose(compose, out);
    if (app.got_subcommand("generate")) return cmd_generate(generate, out);
    if (app.got_subcommand("analyze")) return cmd_analyze(analyze_cmds, analyze, out);
    if (app.got_subcommand("inspect")) return cmd_inspect(inspect, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"pprune"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace pprune::cli
