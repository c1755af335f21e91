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

#include "pprune/tokens.hpp"

#include <charconv>
#include <fstream>

#include "pprune/error.hpp"

namespace pprune {

TokenMode parse_token_mode(std::string_view text) {
  if (text == "ids") return TokenMode::kIds;
  if (text == "bytes") return TokenMode::kBytes;
  throw ValidationError("unknown token mode '" + std::string(text) +
                        "' (expected ids or bytes)");
}

TokenSequence tokenize_line(std::string_view line, TokenMode mode) {
  TokenSequence out;
  if (mode == TokenMode::kBytes) {
    out.reserve(line.size());
    for (char c : line) out.push_back(static_cast<unsigned char>(c));
    return out;
  }
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\t' ||
                                 line[pos] == '\r' || line[pos] == '\n')) {
      ++pos;
    }
    if (pos >= line.size()) break;
    std::size_t end = pos;
    while (end < line.size() && line[end] != ' ' && line[end] != '\t' &&
           line[end] != '\r' && line[end] != '\n') {
      ++end;
    }
    const std::string_view word = line.substr(pos, end - pos);
    Token value = 0;
    const auto res = std::from_chars(word.data(), word.data() + word.size(), value);
    if (res.ec != std::errc() || res.ptr != word.data() + word.size() || value < 0) {
      throw ValidationError("invalid token id '" + std::string(word) + "'");
    }
    out.push_back(value);
    pos = end;
  }
  return out;
}

std::vector<TokenSequence> load_dataset(const std::filesystem::path& path,
                                        TokenMode mode) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
  std::vector<TokenSequence> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      out.push_back(tokenize_line(line, mode));
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " +
                            e.what());
    }
  }
  return out;
}

std::string detokenize(const TokenSequence& tokens, TokenMode mode) {
  std::string out;
  if (mode == TokenMode::kBytes) {
    for (Token t : tokens) out.push_back(static_cast<char>(t & 0xff));
    return out;
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += std::to_string(tokens[i]);
  }
  return out;
}

}  // namespace pprune
