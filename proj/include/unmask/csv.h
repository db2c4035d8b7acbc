// Copyright 2026 The Unmask Lab Authors
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

#pragma once

#include <charconv>
#include <cstddef>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "unmask/error.h"

namespace unmask::csv {

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kParse, "not a number: '" + std::string(s) + "'");
  }
  return v;
}

inline std::size_t parse_size(std::string_view s) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kParse, "not a count: '" + std::string(s) + "'");
  }
  return v;
}

// Fields are written unquoted, so separators are rejected.
inline const std::string& field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") != std::string::npos) {
    throw Error(ErrorCode::kInvalidConfig, "CSV field may not contain ',', '\"' or newlines: " + s);
  }
  return s;
}

inline std::vector<std::string> split(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) return out;
    start = comma + 1;
  }
}

// Reads all data rows after checking the header; each row must have the header's width.
inline std::vector<std::vector<std::string>> read_rows(std::istream& in, std::string_view header) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kEmptyFile, "empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != header) {
    throw Error(ErrorCode::kParse, "unexpected CSV header '" + line + "', want '" + std::string(header) + "'");
  }
  const std::size_t width = split(header).size();
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto row = split(line);
    if (row.size() != width) {
      throw Error(ErrorCode::kRaggedColumns, "CSV row has " + std::to_string(row.size()) +
                                                 " fields, header has " + std::to_string(width));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace unmask::csv
