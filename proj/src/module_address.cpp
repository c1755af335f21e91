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

#include "pprune/module_address.hpp"

#include <charconv>

#include "pprune/error.hpp"

namespace pprune {

Block block_of(Slot slot) {
  switch (slot) {
    case Slot::kQ:
    case Slot::kK:
    case Slot::kV:
    case Slot::kO:
      return Block::kAttention;
    default:
      return Block::kMlp;
  }
}

std::string_view block_name(Block block) {
  return block == Block::kAttention ? "attention" : "mlp";
}

std::string_view slot_name(Slot slot) {
  switch (slot) {
    case Slot::kQ: return "q_proj";
    case Slot::kK: return "k_proj";
    case Slot::kV: return "v_proj";
    case Slot::kO: return "o_proj";
    case Slot::kGate: return "gate_proj";
    case Slot::kUp: return "up_proj";
    case Slot::kDown: return "down_proj";
  }
  return "?";
}

bool parse_block(std::string_view text, Block& out) {
  if (text == "attention") {
    out = Block::kAttention;
    return true;
  }
  if (text == "mlp") {
    out = Block::kMlp;
    return true;
  }
  return false;
}

bool parse_slot(std::string_view text, Slot& out) {
  for (Slot s : kAllSlots) {
    if (slot_name(s) == text) {
      out = s;
      return true;
    }
  }
  return false;
}

std::string ModuleAddress::name() const {
  std::string out = "layers.";
  out += std::to_string(layer);
  out += '.';
  out += block_name(block());
  out += '.';
  out += slot_name(slot);
  return out;
}

ModuleAddress parse_module_address(std::string_view name) {
  auto fail = [&](const char* why) {
    return ValidationError("malformed module name '" + std::string(name) +
                           "': " + why);
  };
  constexpr std::string_view kPrefix = "layers.";
  if (!name.starts_with(kPrefix)) throw fail("expected 'layers.<i>.<block>.<slot>'");
  std::string_view rest = name.substr(kPrefix.size());

  const auto dot1 = rest.find('.');
  if (dot1 == std::string_view::npos) throw fail("missing block");
  const std::string_view index_text = rest.substr(0, dot1);
  std::size_t layer = 0;
  auto [ptr, ec] =
      std::from_chars(index_text.data(), index_text.data() + index_text.size(), layer);
  if (index_text.empty() || ec != std::errc() ||
      ptr != index_text.data() + index_text.size()) {
    throw fail("layer index is not a non-negative integer");
  }
  rest = rest.substr(dot1 + 1);

  const auto dot2 = rest.find('.');
  if (dot2 == std::string_view::npos) throw fail("missing slot");
  Block block;
  if (!parse_block(rest.substr(0, dot2), block)) throw fail("unknown block");
  Slot slot;
  if (!parse_slot(rest.substr(dot2 + 1), slot)) throw fail("unknown slot");
  if (block_of(slot) != block) {
    throw ValidationError("inconsistent module name '" + std::string(name) + "': " +
                          std::string(slot_name(slot)) + " does not belong to the " +
                          std::string(block_name(block)) + " block");
  }
  return ModuleAddress{layer, slot};
}

std::vector<ModuleAddress> all_module_addresses(std::size_t n_layers) {
  std::vector<ModuleAddress> out;
  out.reserve(n_layers * kModulesPerLayer);
  for (std::size_t l = 0; l < n_layers; ++l) {
    for (Slot s : kAllSlots) out.push_back({l, s});
  }
  return out;
}

}  // namespace pprune
