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

#include "pprune/parallel.hpp"

#include <charconv>
#include <cstdlib>
#include <string_view>

#include "pprune/error.hpp"

namespace pprune {

unsigned resolve_threads(std::optional<unsigned> requested) {
  if (requested) return std::max(1u, *requested);
  const char* env = std::getenv("PPRUNE_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  const std::string_view text(env);
  unsigned value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ValidationError("PPRUNE_THREADS must be a positive integer, got '" +
                          std::string(text) + "'");
  }
  return std::max(1u, value);
}

}  // namespace pprune
