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

#ifndef PPRUNE_RANDOM_HPP_
#define PPRUNE_RANDOM_HPP_

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace pprune {

// std::mt19937_64 has a standardized output sequence; the distributions in
// <random> do not, so the few draws we need are defined here.
using Rng = std::mt19937_64;

/// Uniform integer in [0, bound) by rejection sampling. bound must be > 0.
std::uint64_t uniform_index(Rng& rng, std::uint64_t bound);

/// Uniform double in [0, 1) with 53 random bits.
double uniform_unit(Rng& rng);

/// Uniform double in [lo, hi).
double uniform_real(Rng& rng, double lo, double hi);

/// Standard normal via Box-Muller.
double standard_normal(Rng& rng);

/// `count` distinct indices of [0, population) chosen by a partial
/// Fisher-Yates shuffle, in draw order. The first k draws for a given seed
/// do not depend on `count`, so samples of increasing size are nested.
std::vector<std::size_t> sample_without_replacement(std::size_t population,
                                                    std::size_t count,
                                                    std::uint64_t seed);

}  // namespace pprune

#endif  // PPRUNE_RANDOM_HPP_
