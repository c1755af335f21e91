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

#ifndef PPRUNE_MODULE_ADDRESS_HPP_
#define PPRUNE_MODULE_ADDRESS_HPP_

#include <array>
#include <compare>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace pprune {

enum class Block { kAttention, kMlp };

// Declaration order is the canonical per-layer module order.
enum class Slot { kQ, kK, kV, kO, kGate, kUp, kDown };

inline constexpr std::array<Slot, 7> kAllSlots = {
    Slot::kQ, Slot::kK, Slot::kV, Slot::kO, Slot::kGate, Slot::kUp, Slot::kDown};

inline constexpr std::size_t kModulesPerLayer = kAllSlots.size();

Block block_of(Slot slot);
std::string_view block_name(Block block);
std::string_view slot_name(Slot slot);

/// Location of one prunable Linear module: `layers.<i>.<block>.<slot>`.
struct ModuleAddress {
  std::size_t layer = 0;
  Slot slot = Slot::kQ;

  Block block() const { return block_of(slot); }
  std::string name() const;

  friend auto operator<=>(const ModuleAddress&, const ModuleAddress&) = default;
};

/// Parses the canonical module name. Throws ValidationError when the name is
/// malformed or names a slot that does not belong to the stated block.
ModuleAddress parse_module_address(std::string_view name);

bool parse_block(std::string_view text, Block& out);
bool parse_slot(std::string_view text, Slot& out);

/// Every prunable module of an `n_layers` model in canonical order.
std::vector<ModuleAddress> all_module_addresses(std::size_t n_layers);

}  // namespace pprune

#endif  // PPRUNE_MODULE_ADDRESS_HPP_
