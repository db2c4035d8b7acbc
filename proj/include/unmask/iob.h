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

#include <string>
#include <string_view>
#include <vector>

namespace unmask {

// Splits "B-PER" into prefix 'B' and type "PER"; "O" yields prefix 'O'.
struct TagParts {
  char prefix = 'O';
  std::string type;
};

TagParts split_tag(std::string_view tag);

// True when every I-X continues a B-X or I-X of the same type.
bool is_normalized_iob2(const std::vector<std::string>& labels);

// Rewrites each dangling I-X to B-X. Returns the number of rewrites.
std::size_t repair_iob2(std::vector<std::string>& labels);

}  // namespace unmask
