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

#include "fixtures.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include <unistd.h>

#include "pprune/model.hpp"

namespace pprune::testing {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale) {
  Matrix m(rows, cols);
  for (float& v : m.data()) v = static_cast<float>(scale * standard_normal(rng));
  return m;
}

ScoreMatrix random_scores(std::size_t rows, std::size_t cols, Rng& rng) {
  ScoreMatrix s(rows, cols);
  for (double& v : s.data()) v = uniform_unit(rng);
  return s;
}

namespace {

Matrix filled(std::size_t rows, std::size_t cols, float value) {
  Matrix m(rows, cols);
  for (float& v : m.data()) v = value;
  return m;
}

void fill_layers(TensorArchive& a, const ModelConfig& c, Rng* rng) {
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    for (Slot slot : kAllSlots) {
      const ModuleAddress addr{l, slot};
      const auto [rows, cols] = c.module_shape(slot);
      if (rng == nullptr) {
        a.add(addr.name(), Matrix(rows, cols));
        continue;
      }
      a.add(addr.name(), random_matrix(rows, cols, *rng, 1.0 / std::sqrt(double(cols))));
      a.add(bias_name(addr), random_matrix(1, rows, *rng, 0.05));
    }
    if (rng != nullptr) {
      Matrix an = random_matrix(1, c.d_model, *rng, 0.1);
      Matrix mn = random_matrix(1, c.d_model, *rng, 0.1);
      for (float& v : an.data()) v += 1.0f;
      for (float& v : mn.data()) v += 1.0f;
      a.add(attention_norm_name(l), std::move(an));
      a.add(mlp_norm_name(l), std::move(mn));
    }
  }
}

}  // namespace

TensorArchive random_weights(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  TensorArchive a;
  config.write_meta(a.meta());
  a.meta()["kind"] = std::string(kKindWeights);
  a.add(std::string(kEmbeddingName), random_matrix(config.vocab_size, config.d_model, rng));
  a.add(std::string(kPositionName), random_matrix(config.max_seq, config.d_model, rng, 0.1));
  fill_layers(a, config, &rng);
  a.add(std::string(kFinalNormName), filled(1, config.d_model, 1.0f));
  a.add(std::string(kLmHeadName),
        random_matrix(config.vocab_size, config.d_model, rng, 1.0 / std::sqrt(double(config.d_model))));
  return a;
}

TensorArchive zero_weights(const ModelConfig& config) {
  config.validate();
  TensorArchive a;
  config.write_meta(a.meta());
  a.meta()["kind"] = std::string(kKindWeights);
  a.add(std::string(kEmbeddingName), Matrix(config.vocab_size, config.d_model));
  fill_layers(a, config, nullptr);
  a.add(std::string(kLmHeadName), Matrix(config.vocab_size, config.d_model));
  return a;
}

std::shared_ptr<const TensorArchive> share(TensorArchive archive) {
  return std::make_shared<const TensorArchive>(std::move(archive));
}

std::vector<TokenSequence> persona_sequences(const ModelConfig& config, bool plus,
                                             std::size_t count, Rng& rng) {
  const std::size_t half = config.vocab_size / 2;
  const std::size_t offset = plus ? 0 : half;
  std::vector<TokenSequence> out(count);
  for (auto& seq : out) {
    const std::size_t len = 4 + uniform_index(rng, 9);
    for (std::size_t i = 0; i < len; ++i) {
      seq.push_back(static_cast<Token>(offset + uniform_index(rng, half)));
    }
  }
  return out;
}

// Small embeddings let the first layer's outputs dominate the residual
// stream, so later modules see features from both personas.
constexpr float kPersonaEmbeddingScale = 0.25f;

PersonaFixture persona_fixture(std::uint64_t seed, std::size_t samples_per_persona) {
  PersonaFixture f;
  f.config.n_layers = 2;
  f.config.d_model = 64;
  f.config.n_heads = 4;
  f.config.d_ff = 128;
  f.config.vocab_size = 32;
  f.config.max_seq = 32;

  TensorArchive w = random_weights(f.config, seed);
  const std::size_t d = f.config.d_model;
  const std::size_t half_vocab = f.config.vocab_size / 2;
  Matrix emb = w.at(kEmbeddingName);
  for (std::size_t t = 0; t < f.config.vocab_size; ++t) {
    const bool plus = t < half_vocab;
    for (std::size_t j = 0; j < d; ++j) {
      const bool in_plus_half = j < d / 2;
      emb(t, j) = plus == in_plus_half ? kPersonaEmbeddingScale * emb(t, j) : 0.0f;
    }
  }
  w.set(std::string(kEmbeddingName), std::move(emb));
  w.set(std::string(kPositionName), Matrix(f.config.max_seq, d));
  f.weights = share(std::move(w));

  Rng rng(seed ^ 0x5eedULL);
  f.plus_data = persona_sequences(f.config, true, samples_per_persona, rng);
  f.minus_data = persona_sequences(f.config, false, samples_per_persona, rng);
  auto p = persona_sequences(f.config, true, 16, rng);
  auto m = persona_sequences(f.config, false, 16, rng);
  f.probes = std::move(p);
  f.probes.insert(f.probes.end(), m.begin(), m.end());
  return f;
}

RestorationFixture restoration_fixture(std::uint64_t seed) {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.vocab_size = 16;
  c.max_seq = 16;
  TensorArchive w = random_weights(c, seed);
  Rng rng(seed * 7919 + 1);

  constexpr Slot kMlpSlots[] = {Slot::kGate, Slot::kUp, Slot::kDown};
  const ModuleAddress planted{uniform_index(rng, c.n_layers), kMlpSlots[uniform_index(rng, 3)]};

  // The pathway: a handful of very large weights in the planted module.
  Matrix pw = w.at(planted.name());
  std::vector<std::pair<std::size_t, std::size_t>> pathway;
  for (int i = 0; i < 6; ++i) {
    const std::size_t r = uniform_index(rng, pw.rows());
    const std::size_t col = uniform_index(rng, pw.cols());
    pw(r, col) = static_cast<float>((uniform_unit(rng) < 0.5 ? -1.0 : 1.0) * 8.0);
    pathway.emplace_back(r, col);
  }
  w.set(planted.name(), std::move(pw));

  MaskSet masks;
  for (const ModuleAddress& addr : all_module_addresses(c.n_layers)) {
    const Matrix& weight = w.at(addr.name());
    Matrix m(weight.rows(), weight.cols());
    for (float& v : m.data()) v = uniform_unit(rng) < 0.1 ? 0.0f : 1.0f;
    if (addr == planted) {
      for (const auto& [r, col] : pathway) m(r, col) = 0.0f;
    }
    masks.set(addr, std::move(m));
  }
  masks.provenance().method = "planted";

  std::vector<TokenSequence> probes(24);
  for (auto& p : probes) {
    const std::size_t len = 3 + uniform_index(rng, 6);
    for (std::size_t i = 0; i < len; ++i) {
      p.push_back(static_cast<Token>(uniform_index(rng, c.vocab_size)));
    }
  }
  Model model = Model::build(share(std::move(w)));
  return {std::move(model), std::move(masks), planted, std::move(probes)};
}

void write_dataset(const std::filesystem::path& path, const std::vector<TokenSequence>& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& seq : data) {
    for (std::size_t i = 0; i < seq.size(); ++i) out << (i ? " " : "") << seq[i];
    out << "\n";
  }
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("pprune-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace pprune::testing
