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

#include "unmask/iob.h"

#include "unmask/error.h"

namespace unmask {

TagParts split_tag(std::string_view tag) {
  if (tag == "O") return {};
  if (tag.size() < 3 || (tag[0] != 'B' && tag[0] != 'I') || tag[1] != '-') {
    throw Error(ErrorCode::kUnnormalizedInput, "not an IOB2 tag: '" + std::string(tag) + "'");
  }
  return {tag[0], std::string(tag.substr(2))};
}

bool is_normalized_iob2(const std::vector<std::string>& labels) {
  std::string open;
  for (const auto& tag : labels) {
    const TagParts p = split_tag(tag);
    if (p.prefix == 'I' && p.type != open) return false;
    open = p.prefix == 'O' ? std::string() : p.type;
  }
  return true;
}

std::size_t repair_iob2(std::vector<std::string>& labels) {
  std::size_t repaired = 0;
  std::string open;
  for (auto& tag : labels) {
    TagParts p = split_tag(tag);
    if (p.prefix == 'I' && p.type != open) {
      tag = "B-" + p.type;
      ++repaired;
    }
    open = p.prefix == 'O' ? std::string() : p.type;
  }
  return repaired;
}

}  // namespace unmask
