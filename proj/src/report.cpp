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

#include "pprune/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "pprune/archive.hpp"
#include "pprune/error.hpp"

namespace pprune {
namespace {

using nlohmann::json;

std::string fixed4(double v) {
  if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 1e15) {
    return std::to_string(static_cast<long long>(v));
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

ReportFormat parse_report_format(std::string_view text) {
  if (text == "json") return ReportFormat::kJson;
  if (text == "csv") return ReportFormat::kCsv;
  if (text == "markdown" || text == "md") return ReportFormat::kMarkdown;
  throw ValidationError("unknown report format '" + std::string(text) +
                        "' (expected json, csv or markdown)");
}

std::string render_report(const ReportTable& table, ReportFormat format) {
  switch (format) {
    case ReportFormat::kJson: {
      json rows = json::array();
      for (const auto& r : table.rows) rows.push_back({{"label", r.label}, {"values", r.values}});
      json doc = {{"title", table.title},
                  {"label_header", table.label_header},
                  {"columns", table.columns},
                  {"rows", std::move(rows)},
                  {"meta", table.meta}};
      return doc.dump(2) + "\n";
    }
    case ReportFormat::kCsv: {
      std::string out = csv_field(table.label_header);
      for (const auto& c : table.columns) out += "," + csv_field(c);
      out += "\n";
      for (const auto& r : table.rows) {
        out += csv_field(r.label);
        for (double v : r.values) out += "," + format_number(v);
        out += "\n";
      }
      return out;
    }
    case ReportFormat::kMarkdown: {
      std::string out;
      if (!table.title.empty()) out += "**" + table.title + "**\n\n";
      out += "| " + table.label_header + " |";
      for (const auto& c : table.columns) out += " " + c + " |";
      out += "\n| --- |";
      for (std::size_t i = 0; i < table.columns.size(); ++i) out += " ---: |";
      out += "\n";
      for (const auto& r : table.rows) {
        out += "| " + r.label + " |";
        for (double v : r.values) out += " " + fixed4(v) + " |";
        out += "\n";
      }
      return out;
    }
  }
  return {};
}

ReportTable parse_report_json(std::string_view text) {
  ReportTable table;
  try {
    const json doc = json::parse(text);
    table.title = doc.at("title").get<std::string>();
    table.label_header = doc.at("label_header").get<std::string>();
    table.columns = doc.at("columns").get<std::vector<std::string>>();
    for (const auto& r : doc.at("rows")) {
      table.rows.push_back({r.at("label").get<std::string>(),
                            r.at("values").get<std::vector<double>>()});
    }
    table.meta = doc.at("meta").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed report JSON: ") + e.what());
  }
  return table;
}

void emit_report(const ReportTable& table, ReportFormat format,
                 const std::filesystem::path& path) {
  const std::string text = render_report(table, format);
  if (path == "-") {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open report file '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace pprune
