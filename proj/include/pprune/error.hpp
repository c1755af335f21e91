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

#ifndef PPRUNE_ERROR_HPP_
#define PPRUNE_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace pprune {

// Base of every error the library throws. Callers that only care about
// "something failed" catch this; the subclasses exist so tests and the CLI
// can distinguish the broad failure class.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents: bad magic, truncated payloads, broken headers.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A value violates a documented invariant (duplicate names, non-binary
// masks, out-of-range hyperparameters, infeasible sparsity).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Dimension or layout disagreement between two objects.
class ShapeError : public Error {
 public:
  using Error::Error;
};

}  // namespace pprune

#endif  // PPRUNE_ERROR_HPP_
