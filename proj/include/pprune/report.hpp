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

#ifndef PPRUNE_REPORT_HPP_
#define PPRUNE_REPORT_HPP_

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace pprune {

enum class ReportFormat { kJson, kCsv, kMarkdown };
ReportFormat parse_report_format(std::string_view text);

/// Labelled rows of numeric columns plus free-form metadata. All analysis
/// results are flattened to this shape before being written.
struct ReportTable {
  std::string title;
  std::string label_header = "group";
  std::vector<std::string> columns;
  struct Row {
    std::string label;
    std::vector<double> values;
    friend bool operator==(const Row&, const Row&) = default;
  };
  std::vector<Row> rows;
  std::map<std::string, std::string> meta;

  friend bool operator==(const ReportTable&, const ReportTable&) = default;
};

/// Deterministic rendering. Markdown prints integral values as integers and
/// the rest with 4 decimals; CSV and JSON keep shortest round-trip values.
std::string render_report(const ReportTable& table, ReportFormat format);
ReportTable parse_report_json(std::string_view text);

/// Writes to `path`, or to stdout when path is "-".
void emit_report(const ReportTable& table, ReportFormat format,
                 const std::filesystem::path& path);

}  // namespace pprune

#endif  // PPRUNE_REPORT_HPP_
