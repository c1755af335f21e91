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

#include "pprune/model.hpp"

#include <algorithm>
#include <cmath>

#include "pprune/error.hpp"

namespace pprune {
namespace {

constexpr double kNormEps = 1e-5;

std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

void check_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw ValidationError("gate gamma must lie in [0, 1), got " + format_number(gamma));
  }
}

// Shared kernel; callers have validated shapes.
void linear_kernel(const Matrix& weight, std::span<const float> bias,
                   const Matrix* mask, double gamma, std::span<const float> x,
                   std::span<double> out) {
  const std::size_t n = weight.cols();
  for (std::size_t i = 0; i < weight.rows(); ++i) {
    const auto w = weight.row(i);
    double acc = 0.0;
    if (mask == nullptr) {
      for (std::size_t j = 0; j < n; ++j) {
        acc += static_cast<double>(w[j]) * static_cast<double>(x[j]);
      }
    } else {
      const auto m = mask->row(i);
      for (std::size_t j = 0; j < n; ++j) {
        const double keep = static_cast<double>(m[j]);
        const double gate = keep + gamma * (1.0 - keep);
        acc += static_cast<double>(w[j]) * gate * static_cast<double>(x[j]);
      }
    }
    if (!bias.empty()) acc += static_cast<double>(bias[i]);
    out[i] = acc;
  }
}

std::vector<float> rms_norm(std::span<const float> x, std::span<const float> scale) {
  double ms = 0.0;
  for (float v : x) ms += static_cast<double>(v) * static_cast<double>(v);
  ms /= static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(ms + kNormEps);
  std::vector<float> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double s = scale.empty() ? 1.0 : static_cast<double>(scale[j]);
    out[j] = static_cast<float>(static_cast<double>(x[j]) * inv * s);
  }
  return out;
}

std::span<const float> optional_vector(const TensorArchive& weights,
                                       const std::string& name, std::size_t dim) {
  const Matrix* m = weights.find(name);
  if (m == nullptr) return {};
  if (m->rows() != 1 || m->cols() != dim) {
    throw ShapeError("tensor '" + name + "' has shape " + shape_str(m->rows(), m->cols()) +
                     ", expected " + shape_str(1, dim));
  }
  return m->row(0);
}

const Matrix& required_matrix(const TensorArchive& weights, std::string_view name,
                              std::size_t rows, std::size_t cols) {
  const Matrix* m = weights.find(name);
  if (m == nullptr) throw ValidationError("missing tensor '" + std::string(name) + "'");
  if (m->rows() != rows || m->cols() != cols) {
    throw ShapeError("tensor '" + std::string(name) + "' has shape " +
                     shape_str(m->rows(), m->cols()) + ", expected " +
                     shape_str(rows, cols));
  }
  return *m;
}

std::size_t meta_count(const std::map<std::string, std::string>& meta, const char* key) {
  const auto it = meta.find(key);
  if (it == meta.end()) {
    throw ValidationError(std::string("weights metadata lacks '") + key + "'");
  }
  return static_cast<std::size_t>(parse_count(it->second, key));
}

}  // namespace

std::string attention_norm_name(std::size_t layer) {
  return "layers." + std::to_string(layer) + ".attention_norm.weight";
}

std::string mlp_norm_name(std::size_t layer) {
  return "layers." + std::to_string(layer) + ".mlp_norm.weight";
}

std::string bias_name(const ModuleAddress& addr) { return addr.name() + ".bias"; }

void ModelConfig::validate() const {
  if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || vocab_size == 0 ||
      max_seq == 0) {
    throw ValidationError("model config counts must all be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw ValidationError("d_model " + std::to_string(d_model) +
                          " is not divisible by n_heads " + std::to_string(n_heads));
  }
}

std::pair<std::size_t, std::size_t> ModelConfig::module_shape(Slot slot) const {
  switch (slot) {
    case Slot::kGate:
    case Slot::kUp:
      return {d_ff, d_model};
    case Slot::kDown:
      return {d_model, d_ff};
    default:
      return {d_model, d_model};
  }
}

std::map<ModuleAddress, std::size_t> ModelConfig::input_dims() const {
  std::map<ModuleAddress, std::size_t> dims;
  for (const auto& addr : all_module_addresses(n_layers)) {
    dims[addr] = module_shape(addr.slot).second;
  }
  return dims;
}

void ModelConfig::write_meta(std::map<std::string, std::string>& meta) const {
  meta["model_family"] = "pprune-decoder";
  meta["n_layers"] = std::to_string(n_layers);
  meta["d_model"] = std::to_string(d_model);
  meta["n_heads"] = std::to_string(n_heads);
  meta["d_ff"] = std::to_string(d_ff);
  meta["vocab_size"] = std::to_string(vocab_size);
  meta["max_seq"] = std::to_string(max_seq);
}

ModelConfig ModelConfig::from_meta(const std::map<std::string, std::string>& meta) {
  ModelConfig c;
  c.n_layers = meta_count(meta, "n_layers");
  c.d_model = meta_count(meta, "d_model");
  c.n_heads = meta_count(meta, "n_heads");
  c.d_ff = meta_count(meta, "d_ff");
  c.vocab_size = meta_count(meta, "vocab_size");
  c.max_seq = meta_count(meta, "max_seq");
  c.validate();
  return c;
}

std::vector<double> masked_linear_wide(const Matrix& weight, std::span<const float> bias,
                                       const Matrix* mask, double gamma,
                                       std::span<const float> x) {
  check_gamma(gamma);
  if (x.size() != weight.cols()) {
    throw ShapeError("input length " + std::to_string(x.size()) +
                     " does not match weight columns " + std::to_string(weight.cols()));
  }
  if (!bias.empty() && bias.size() != weight.rows()) {
    throw ShapeError("bias length " + std::to_string(bias.size()) +
                     " does not match weight rows " + std::to_string(weight.rows()));
  }
  if (mask != nullptr) {
    if (!mask->same_shape(weight)) {
      throw ShapeError("mask shape " + shape_str(mask->rows(), mask->cols()) +
                       " does not match weight shape " +
                       shape_str(weight.rows(), weight.cols()));
    }
    if (std::any_of(mask->data().begin(), mask->data().end(),
                    [](float v) { return v != 0.0f && v != 1.0f; })) {
      throw ValidationError("mask must be binary");
    }
  }
  std::vector<double> out(weight.rows());
  linear_kernel(weight, bias, mask, gamma, x, out);
  return out;
}

std::vector<float> masked_linear(const Matrix& weight, std::span<const float> bias,
                                 const Matrix* mask, double gamma,
                                 std::span<const float> x) {
  const auto wide = masked_linear_wide(weight, bias, mask, gamma, x);
  return {wide.begin(), wide.end()};
}

Pooling parse_pooling(std::string_view text) {
  if (text == "last_token" || text == "last") return Pooling::kLastToken;
  if (text == "mean") return Pooling::kMean;
  throw ValidationError("unknown pooling '" + std::string(text) +
                        "' (expected last_token or mean)");
}

std::string_view pooling_name(Pooling pooling) {
  return pooling == Pooling::kLastToken ? "last_token" : "mean";
}

std::vector<double> HiddenTrace::pooled(std::size_t layer, Pooling pooling) const {
  if (layer >= layers.size()) {
    throw ValidationError("layer " + std::to_string(layer) + " out of range (model has " +
                          std::to_string(layers.size()) + ")");
  }
  const Matrix& h = layers[layer];
  std::vector<double> out(h.cols(), 0.0);
  if (pooling == Pooling::kLastToken) {
    const auto last = h.row(h.rows() - 1);
    std::copy(last.begin(), last.end(), out.begin());
    return out;
  }
  for (std::size_t p = 0; p < h.rows(); ++p) {
    const auto r = h.row(p);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += r[j];
  }
  for (double& v : out) v /= static_cast<double>(h.rows());
  return out;
}

Model Model::build(std::shared_ptr<const TensorArchive> weights) {
  if (!weights) throw ValidationError("no weights");
  const ModelConfig config = ModelConfig::from_meta(weights->meta());
  return build(config, std::move(weights));
}

Model Model::build(const ModelConfig& config, std::shared_ptr<const TensorArchive> weights) {
  if (!weights) throw ValidationError("no weights");
  config.validate();
  Model m;
  m.config_ = config;
  m.weights_ = std::move(weights);
  const TensorArchive& w = *m.weights_;
  m.embedding_ = &required_matrix(w, kEmbeddingName, config.vocab_size, config.d_model);
  m.lm_head_ = &required_matrix(w, kLmHeadName, config.vocab_size, config.d_model);
  m.position_ = w.find(kPositionName);
  if (m.position_ != nullptr) {
    required_matrix(w, kPositionName, config.max_seq, config.d_model);
  }
  m.final_norm_ = optional_vector(w, std::string(kFinalNormName), config.d_model);

  m.layers_.resize(config.n_layers);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    Layer& layer = m.layers_[l];
    for (std::size_t s = 0; s < kModulesPerLayer; ++s) {
      const ModuleAddress addr{l, kAllSlots[s]};
      const auto [rows, cols] = config.module_shape(addr.slot);
      const std::string name = addr.name();
      const Matrix* weight = w.find(name);
      if (weight == nullptr) throw ValidationError("missing tensor '" + name + "'");
      if (weight->rows() != rows || weight->cols() != cols) {
        throw ShapeError("module " + name + " has shape " +
                         shape_str(weight->rows(), weight->cols()) + ", expected " +
                         shape_str(rows, cols));
      }
      layer.weight[s] = weight;
      layer.bias[s] = optional_vector(w, bias_name(addr), rows);
    }
    layer.attention_norm = optional_vector(w, attention_norm_name(l), config.d_model);
    layer.mlp_norm = optional_vector(w, mlp_norm_name(l), config.d_model);
  }
  return m;
}

Model Model::with_masks(MaskRef masks, double gamma) const {
  check_gamma(gamma);
  Model out = *this;
  out.masks_ = std::move(masks);
  out.gamma_ = gamma;
  for (auto& layer : out.layers_) layer.mask.fill(nullptr);
  if (!out.masks_) return out;
  for (const auto& [addr, mask] : out.masks_->masks()) {
    if (addr.layer >= config_.n_layers) {
      throw ShapeError("mask module " + addr.name() + " is beyond the model's " +
                       std::to_string(config_.n_layers) + " layers");
    }
    const auto s = static_cast<std::size_t>(addr.slot);
    Layer& layer = out.layers_[addr.layer];
    if (!mask.same_shape(*layer.weight[s])) {
      throw ShapeError("mask for " + addr.name() + " has shape " +
                       shape_str(mask.rows(), mask.cols()) + ", weight is " +
                       shape_str(layer.weight[s]->rows(), layer.weight[s]->cols()));
    }
    layer.mask[s] = &mask;
  }
  return out;
}

void Model::check_tokens(std::span<const Token> tokens) const {
  if (tokens.empty()) throw ValidationError("empty token sequence");
  if (tokens.size() > config_.max_seq) {
    throw ValidationError("sequence length " + std::to_string(tokens.size()) +
                          " exceeds max_seq " + std::to_string(config_.max_seq));
  }
  for (std::size_t p = 0; p < tokens.size(); ++p) {
    if (tokens[p] < 0 || static_cast<std::size_t>(tokens[p]) >= config_.vocab_size) {
      throw ValidationError("token " + std::to_string(tokens[p]) + " at position " +
                            std::to_string(p) + " is outside the vocabulary of " +
                            std::to_string(config_.vocab_size));
    }
  }
}

std::vector<float> Model::linear(const Layer& layer, std::size_t layer_index, Slot slot,
                                 std::span<const float> x,
                                 LinearObserver* observer) const {
  const auto s = static_cast<std::size_t>(slot);
  if (observer != nullptr) observer->on_linear_input({layer_index, slot}, x);
  const Matrix& w = *layer.weight[s];
  std::vector<double> wide(w.rows());
  linear_kernel(w, layer.bias[s], layer.mask[s], gamma_, x, wide);
  return {wide.begin(), wide.end()};
}

ForwardResult Model::forward(std::span<const Token> tokens, LinearObserver* observer) const {
  check_tokens(tokens);
  const std::size_t seq = tokens.size();
  const std::size_t d = config_.d_model;
  const std::size_t heads = config_.n_heads;
  const std::size_t hd = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Matrix x(seq, d);
  for (std::size_t p = 0; p < seq; ++p) {
    const auto e = embedding_->row(static_cast<std::size_t>(tokens[p]));
    auto r = x.row(p);
    for (std::size_t j = 0; j < d; ++j) {
      r[j] = position_ ? e[j] + (*position_)(p, j) : e[j];
    }
  }

  ForwardResult result;
  result.trace.layers.reserve(layers_.size());
  std::vector<std::vector<float>> q(seq), k(seq), v(seq);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    for (std::size_t p = 0; p < seq; ++p) {
      const auto h = rms_norm(x.row(p), layer.attention_norm);
      q[p] = linear(layer, l, Slot::kQ, h, observer);
      k[p] = linear(layer, l, Slot::kK, h, observer);
      v[p] = linear(layer, l, Slot::kV, h, observer);
    }
    std::vector<double> weights(seq);
    for (std::size_t p = 0; p < seq; ++p) {
      std::vector<float> attended(d);
      for (std::size_t head = 0; head < heads; ++head) {
        const std::size_t base = head * hd;
        double max_logit = -INFINITY;
        for (std::size_t t = 0; t <= p; ++t) {
          double dot = 0.0;
          for (std::size_t c = 0; c < hd; ++c) {
            dot += static_cast<double>(q[p][base + c]) * static_cast<double>(k[t][base + c]);
          }
          weights[t] = dot * scale;
          max_logit = std::max(max_logit, weights[t]);
        }
        double total = 0.0;
        for (std::size_t t = 0; t <= p; ++t) {
          weights[t] = std::exp(weights[t] - max_logit);
          total += weights[t];
        }
        for (std::size_t c = 0; c < hd; ++c) {
          double acc = 0.0;
          for (std::size_t t = 0; t <= p; ++t) {
            acc += weights[t] * static_cast<double>(v[t][base + c]);
          }
          attended[base + c] = static_cast<float>(acc / total);
        }
      }
      const auto o = linear(layer, l, Slot::kO, attended, observer);
      auto r = x.row(p);
      for (std::size_t j = 0; j < d; ++j) r[j] += o[j];
    }
    for (std::size_t p = 0; p < seq; ++p) {
      const auto h = rms_norm(x.row(p), layer.mlp_norm);
      const auto gate = linear(layer, l, Slot::kGate, h, observer);
      const auto up = linear(layer, l, Slot::kUp, h, observer);
      std::vector<float> act(gate.size());
      for (std::size_t j = 0; j < act.size(); ++j) {
        const double g = gate[j];
        act[j] = static_cast<float>(g / (1.0 + std::exp(-g)) * static_cast<double>(up[j]));
      }
      const auto down = linear(layer, l, Slot::kDown, act, observer);
      auto r = x.row(p);
      for (std::size_t j = 0; j < d; ++j) r[j] += down[j];
    }
    result.trace.layers.push_back(x);
  }

  result.logits = Matrix(seq, config_.vocab_size);
  std::vector<double> wide(config_.vocab_size);
  for (std::size_t p = 0; p < seq; ++p) {
    const auto h = rms_norm(x.row(p), final_norm_);
    linear_kernel(*lm_head_, {}, nullptr, 0.0, h, wide);
    auto r = result.logits.row(p);
    std::transform(wide.begin(), wide.end(), r.begin(),
                   [](double v) { return static_cast<float>(v); });
  }
  return result;
}

std::vector<double> Model::next_token_distribution(std::span<const Token> tokens) const {
  const ForwardResult fr = forward(tokens);
  const auto last = fr.logits.row(fr.logits.rows() - 1);
  const double max_logit = *std::max_element(last.begin(), last.end());
  std::vector<double> probs(last.size());
  double total = 0.0;
  for (std::size_t i = 0; i < last.size(); ++i) {
    probs[i] = std::exp(static_cast<double>(last[i]) - max_logit);
    total += probs[i];
  }
  for (double& p : probs) p /= total;
  return probs;
}

}  // namespace pprune
