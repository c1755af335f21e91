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

#ifndef PPRUNE_TESTS_SUPPORT_FIXTURES_HPP_
#define PPRUNE_TESTS_SUPPORT_FIXTURES_HPP_

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "pprune/archive.hpp"
#include "pprune/mask_set.hpp"
#include "pprune/matrix.hpp"
#include "pprune/model.hpp"
#include "pprune/random.hpp"
#include "pprune/tokens.hpp"

namespace pprune::testing {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0);
ScoreMatrix random_scores(std::size_t rows, std::size_t cols, Rng& rng);

/// Gaussian weights with 1/sqrt(fan_in) scaling, norms and biases included.
TensorArchive random_weights(const ModelConfig& config, std::uint64_t seed);
TensorArchive zero_weights(const ModelConfig& config);

std::shared_ptr<const TensorArchive> share(TensorArchive archive);

/// Two personas whose tokens embed into disjoint halves of the residual
/// stream. Tokens [0, vocab/2) belong to the plus persona.
struct PersonaFixture {
  ModelConfig config;
  std::shared_ptr<const TensorArchive> weights;
  std::vector<TokenSequence> plus_data;
  std::vector<TokenSequence> minus_data;
  std::vector<TokenSequence> probes;  // half from each persona
};

PersonaFixture persona_fixture(std::uint64_t seed, std::size_t samples_per_persona = 64);

std::vector<TokenSequence> persona_sequences(const ModelConfig& config, bool plus,
                                             std::size_t count, Rng& rng);

/// A model with one strong MLP pathway, and a mask set that removes exactly
/// that pathway while pruning every other module lightly at random.
struct RestorationFixture {
  Model model;
  MaskSet masks;
  ModuleAddress planted;
  std::vector<TokenSequence> probes;
};

RestorationFixture restoration_fixture(std::uint64_t seed);

void write_dataset(const std::filesystem::path& path, const std::vector<TokenSequence>& data);

class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

}  // namespace pprune::testing

#endif  // PPRUNE_TESTS_SUPPORT_FIXTURES_HPP_
