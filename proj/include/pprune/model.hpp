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

#ifndef PPRUNE_MODEL_HPP_
#define PPRUNE_MODEL_HPP_

#include <array>
#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pprune/archive.hpp"
#include "pprune/mask_set.hpp"
#include "pprune/matrix.hpp"
#include "pprune/module_address.hpp"
#include "pprune/tokens.hpp"

namespace pprune {

// Non-prunable tensor names. Norm scales and the position table are
// optional in an archive (defaults: ones and zeros). An empty norm span
// below stands for a scale of ones.
inline constexpr std::string_view kEmbeddingName = "embedding.weight";
inline constexpr std::string_view kPositionName = "position_embedding.weight";
inline constexpr std::string_view kLmHeadName = "lm_head.weight";
inline constexpr std::string_view kFinalNormName = "final_norm.weight";
std::string attention_norm_name(std::size_t layer);
std::string mlp_norm_name(std::size_t layer);
std::string bias_name(const ModuleAddress& addr);

struct ModelConfig {
  std::size_t n_layers = 1;
  std::size_t d_model = 8;
  std::size_t n_heads = 1;
  std::size_t d_ff = 16;
  std::size_t vocab_size = 16;
  std::size_t max_seq = 64;

  /// Throws ValidationError when a count is zero or heads do not divide d_model.
  void validate() const;

  /// (rows, cols) of the weight at `slot`.
  std::pair<std::size_t, std::size_t> module_shape(Slot slot) const;

  /// Input dimension of every prunable module.
  std::map<ModuleAddress, std::size_t> input_dims() const;

  void write_meta(std::map<std::string, std::string>& meta) const;
  static ModelConfig from_meta(const std::map<std::string, std::string>& meta);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// y = (W ⊙ G) x + b with G = M + gamma (1 - M), accumulated in double and
/// returned before the final rounding. An absent mask (nullptr) is the dense
/// product; an empty bias span means no bias.
std::vector<double> masked_linear_wide(const Matrix& weight,
                                       std::span<const float> bias,
                                       const Matrix* mask, double gamma,
                                       std::span<const float> x);

/// masked_linear_wide rounded to float. The weight is never modified.
std::vector<float> masked_linear(const Matrix& weight, std::span<const float> bias,
                                 const Matrix* mask, double gamma,
                                 std::span<const float> x);

enum class Pooling { kLastToken, kMean };
Pooling parse_pooling(std::string_view text);
std::string_view pooling_name(Pooling pooling);

/// Residual-stream vectors after each block: layers[l] is (positions x d_model).
struct HiddenTrace {
  std::vector<Matrix> layers;

  std::vector<double> pooled(std::size_t layer, Pooling pooling) const;
};

struct ForwardResult {
  Matrix logits;  // positions x vocab_size
  HiddenTrace trace;
};

/// Receives the input vector of every Linear application, once per position.
class LinearObserver {
 public:
  virtual ~LinearObserver() = default;
  virtual void on_linear_input(const ModuleAddress& addr,
                               std::span<const float> input) = 0;
};

/// Pre-norm decoder-only transformer: learned absolute positions, causal
/// multi-head attention, SiLU-gated MLP, RMS norms. Immutable once built;
/// binding masks returns a new view sharing the same weights.
class Model {
 public:
  static Model build(const ModelConfig& config,
                     std::shared_ptr<const TensorArchive> weights);
  /// Reads the config from the archive metadata.
  static Model build(std::shared_ptr<const TensorArchive> weights);

  /// View that applies `masks` (nullptr for dense) with soft gate `gamma`.
  Model with_masks(MaskRef masks, double gamma = 0.0) const;

  const ModelConfig& config() const { return config_; }
  const TensorArchive& weights() const { return *weights_; }
  const MaskSet* masks() const { return masks_.get(); }
  const MaskRef& mask_ref() const { return masks_; }
  double gamma() const { return gamma_; }

  ForwardResult forward(std::span<const Token> tokens,
                        LinearObserver* observer = nullptr) const;

  /// Softmax of the final-position logits.
  std::vector<double> next_token_distribution(std::span<const Token> tokens) const;

 private:
  struct Layer {
    std::array<const Matrix*, kModulesPerLayer> weight{};
    std::array<std::span<const float>, kModulesPerLayer> bias{};
    std::array<const Matrix*, kModulesPerLayer> mask{};
    std::span<const float> attention_norm;
    std::span<const float> mlp_norm;
  };

  void check_tokens(std::span<const Token> tokens) const;
  std::vector<float> linear(const Layer& layer, std::size_t layer_index, Slot slot,
                            std::span<const float> x, LinearObserver* observer) const;

  ModelConfig config_;
  std::shared_ptr<const TensorArchive> weights_;
  MaskRef masks_;
  double gamma_ = 0.0;
  const Matrix* embedding_ = nullptr;
  const Matrix* position_ = nullptr;
  const Matrix* lm_head_ = nullptr;
  std::span<const float> final_norm_;
  std::vector<Layer> layers_;
};

}  // namespace pprune

#endif  // PPRUNE_MODEL_HPP_
