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

#ifndef PPRUNE_TOKENS_HPP_
#define PPRUNE_TOKENS_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pprune {

using Token = std::int32_t;
using TokenSequence = std::vector<Token>;

// kIds: whitespace-separated integer ids. kBytes: every byte is a token.
enum class TokenMode { kIds, kBytes };

TokenMode parse_token_mode(std::string_view text);

TokenSequence tokenize_line(std::string_view line, TokenMode mode);

/// One sequence per non-blank line. Parse errors carry the 1-based line number.
std::vector<TokenSequence> load_dataset(const std::filesystem::path& path,
                                        TokenMode mode);

std::string detokenize(const TokenSequence& tokens, TokenMode mode);

}  // namespace pprune

#endif  // PPRUNE_TOKENS_HPP_
