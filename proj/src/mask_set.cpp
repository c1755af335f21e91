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

#include "pprune/mask_set.hpp"

#include <algorithm>

#include "pprune/error.hpp"

namespace pprune {
namespace {

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.push_back(',');
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split(const std::string& text) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = text.find(',', start);
    out.push_back(text.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

void MaskSet::set(const ModuleAddress& addr, Matrix mask) {
  if (mask.empty()) throw ValidationError("empty mask for " + addr.name());
  const auto bad = std::find_if(mask.data().begin(), mask.data().end(),
                                [](float v) { return v != 0.0f && v != 1.0f; });
  if (bad != mask.data().end()) {
    throw ValidationError("mask for " + addr.name() + " has non-binary entry at index " +
                          std::to_string(bad - mask.data().begin()));
  }
  masks_.insert_or_assign(addr, std::move(mask));
}

const Matrix* MaskSet::find(const ModuleAddress& addr) const {
  const auto it = masks_.find(addr);
  return it == masks_.end() ? nullptr : &it->second;
}

const Matrix& MaskSet::at(const ModuleAddress& addr) const {
  if (const Matrix* m = find(addr)) return *m;
  throw ValidationError("mask set has no module " + addr.name());
}

MaskSet MaskSet::all_ones_like(const MaskSet& like) {
  MaskSet out;
  for (const auto& [addr, m] : like.masks()) out.set(addr, Matrix(m.rows(), m.cols(), 1.0f));
  out.provenance().method = "dense";
  return out;
}

void require_same_layout(const MaskSet& a, const MaskSet& b) {
  auto ia = a.masks().begin();
  auto ib = b.masks().begin();
  for (; ia != a.masks().end() && ib != b.masks().end(); ++ia, ++ib) {
    if (ia->first != ib->first) {
      const auto& missing = ia->first < ib->first ? ia->first : ib->first;
      throw ShapeError("mask layouts differ: module " + missing.name() +
                       " is present in only one mask set");
    }
    if (!ia->second.same_shape(ib->second)) {
      throw ShapeError("mask layouts differ: module " + ia->first.name() +
                       " has shapes " + std::to_string(ia->second.rows()) + "x" +
                       std::to_string(ia->second.cols()) + " and " +
                       std::to_string(ib->second.rows()) + "x" +
                       std::to_string(ib->second.cols()));
    }
  }
  if (ia != a.masks().end() || ib != b.masks().end()) {
    const auto& extra = ia != a.masks().end() ? ia->first : ib->first;
    throw ShapeError("mask layouts differ: module " + extra.name() +
                     " is present in only one mask set");
  }
}

TensorArchive maskset_to_archive(const MaskSet& masks) {
  TensorArchive archive;
  for (const auto& [addr, m] : masks.masks()) archive.add(addr.name(), m);
  const auto& p = masks.provenance();
  auto& meta = archive.meta();
  meta["kind"] = std::string(kKindMask);
  meta["method"] = p.method;
  meta["rho"] = format_number(p.rho);
  meta["persona"] = p.persona;
  if (!p.counter_persona.empty()) meta["counter_persona"] = p.counter_persona;
  if (!p.overrides.empty()) meta["overrides"] = p.overrides;
  if (!p.sources.empty()) meta["sources"] = p.sources;
  if (!p.restored.empty()) meta["restored"] = join(p.restored);
  meta["seed"] = std::to_string(p.seed);
  meta["tool_version"] = std::string(kToolVersion);
  return archive;
}

MaskSet maskset_from_archive(const TensorArchive& archive) {
  const std::string kind = archive.meta_or("kind", "");
  if (kind != kKindMask) {
    throw ValidationError("archive kind is '" + kind + "', expected 'mask'");
  }
  MaskSet masks;
  for (const auto& [name, m] : archive.entries()) {
    masks.set(parse_module_address(name), m);
  }
  auto& p = masks.provenance();
  const auto& meta = archive.meta();
  p.method = archive.meta_or("method", "");
  p.rho = meta.contains("rho") ? parse_number(meta.at("rho"), "rho") : 0.0;
  p.persona = archive.meta_or("persona", "");
  p.counter_persona = archive.meta_or("counter_persona", "");
  p.overrides = archive.meta_or("overrides", "");
  p.sources = archive.meta_or("sources", "");
  p.restored = split(archive.meta_or("restored", ""));
  p.seed = meta.contains("seed") ? parse_count(meta.at("seed"), "seed") : 42;
  return masks;
}

void write_maskset(const std::filesystem::path& path, const MaskSet& masks) {
  write_archive(path, maskset_to_archive(masks));
}

MaskSet read_maskset(const std::filesystem::path& path) {
  return maskset_from_archive(read_archive(path));
}

}  // namespace pprune
