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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "fixtures.hpp"
#include "pprune/error.hpp"
#include "pprune/report.hpp"

using namespace pprune;

namespace {

ReportTable sample() {
  ReportTable t;
  t.title = "Differential mask ratio";
  t.columns = {"differing", "total", "ratio_pct"};
  t.rows.push_back({"attention", {12.0, 64.0, 18.75}});
  t.rows.push_back({"mlp", {0.0, 96.0, 0.0}});
  t.meta["a.method"] = "wanda";
  t.meta["b.persona"] = "pirate, formal";
  return t;
}

std::size_t lines(const std::string& s) { return std::count(s.begin(), s.end(), '\n'); }

}  // namespace

TEST_CASE("json reports round trip") {
  const ReportTable t = sample();
  CHECK(parse_report_json(render_report(t, ReportFormat::kJson)) == t);

  ReportTable awkward = t;
  awkward.rows[0].values = {0.1, 1.0 / 3.0, 1e-300};
  CHECK(parse_report_json(render_report(awkward, ReportFormat::kJson)) == awkward);
}

TEST_CASE("csv has a header plus one line per row") {
  const std::string csv = render_report(sample(), ReportFormat::kCsv);
  CHECK(lines(csv) == 3);
  CHECK(csv.rfind("group,differing,total,ratio_pct\n", 0) == 0);
  CHECK(csv.find("attention,12,64,18.75\n") != std::string::npos);
}

TEST_CASE("csv quotes labels that need it") {
  ReportTable t = sample();
  t.rows[0].label = "a,\"b\"";
  const std::string csv = render_report(t, ReportFormat::kCsv);
  CHECK(csv.find("\"a,\"\"b\"\"\",12") != std::string::npos);
}

TEST_CASE("empty tables render headers only") {
  ReportTable t = sample();
  t.rows.clear();
  CHECK(render_report(t, ReportFormat::kCsv) == "group,differing,total,ratio_pct\n");
  const std::string md = render_report(t, ReportFormat::kMarkdown);
  CHECK(md.find("| group | differing | total | ratio_pct |") != std::string::npos);
  CHECK(md.find("attention") == std::string::npos);
  CHECK(parse_report_json(render_report(t, ReportFormat::kJson)).rows.empty());
}

TEST_CASE("markdown renders a pipe table with fixed precision") {
  const std::string md = render_report(sample(), ReportFormat::kMarkdown);
  CHECK(md.rfind("**Differential mask ratio**", 0) == 0);
  CHECK(md.find("| --- | ---: | ---: | ---: |") != std::string::npos);
  CHECK(md.find("| attention | 12 | 64 | 18.7500 |") != std::string::npos);
  CHECK(md.find("| mlp | 0 | 96 | 0 |") != std::string::npos);
}

TEST_CASE("format names parse") {
  CHECK(parse_report_format("json") == ReportFormat::kJson);
  CHECK(parse_report_format("csv") == ReportFormat::kCsv);
  CHECK(parse_report_format("md") == ReportFormat::kMarkdown);
  CHECK(parse_report_format("markdown") == ReportFormat::kMarkdown);
  CHECK_THROWS_AS(parse_report_format("xml"), ValidationError);
}

TEST_CASE("malformed json is a format error") {
  CHECK_THROWS_AS(parse_report_json("{"), FormatError);
  CHECK_THROWS_AS(parse_report_json("{\"title\": 1}"), FormatError);
}

TEST_CASE("reports can be written to a file") {
  pprune::testing::TempDir dir("report");
  const auto path = dir / "r.json";
  emit_report(sample(), ReportFormat::kJson, path);
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  CHECK(parse_report_json(buf.str()) == sample());
  CHECK_THROWS_AS(emit_report(sample(), ReportFormat::kCsv, dir / "missing" / "r.csv"), IoError);
}
