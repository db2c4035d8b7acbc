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

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "unmask/data.h"

namespace unmask {

struct InstructionExample {
  std::string instruction;
  std::vector<std::string> options;
  std::string sentence;
  std::string response;  // `surface:type;surface:type`, may be empty

  bool operator==(const InstructionExample&) const = default;
};

struct ResponseItem {
  std::string surface;
  std::string type;

  bool operator==(const ResponseItem&) const = default;
};

// Dataset tag type (e.g. "PER") paired with its option wording ("person").
struct TypeName {
  std::string tag_type;
  std::string option;
};

struct TaskTemplate {
  std::string task;
  std::string instruction;
  std::vector<TypeName> types;

  std::vector<std::string> options() const;
  // Both throw TargetNotFound.
  const std::string& option_for(std::string_view tag_type) const;
  const std::string& tag_type_for(std::string_view option) const;
};

// Templates for "ner", "absa", "trigger" and "chunk"; throws InvalidConfig otherwise.
const TaskTemplate& task_template(std::string_view task);
const std::vector<std::string>& template_tasks();

// Four sections in order, each header on its own line followed by its body and
// a blank line. With with_response == false the text ends at "### Response:\n".
std::string render_instruction(const InstructionExample& ex, bool with_response = true);

// Inverse of render_instruction. Throws Parse on missing or out-of-order sections.
InstructionExample parse_instruction(std::string_view text);

void write_instruction_file(std::ostream& out, const std::vector<InstructionExample>& examples,
                            bool with_response = true);
std::vector<InstructionExample> parse_instruction_file(std::string_view text);
std::vector<InstructionExample> read_instruction_file(const std::filesystem::path& path);

// Items split on ';', each on its last ':', both sides trimmed. Items without a
// usable ':' are skipped and counted in *malformed; blank items are ignored.
std::vector<ResponseItem> parse_response(std::string_view response, std::size_t* malformed = nullptr);
std::string format_response(const std::vector<ResponseItem>& items);

// Gold response for a tagged sentence, spans in sentence order.
InstructionExample make_instruction(const TaggedSentence& sentence, const TaskTemplate& tmpl);

}  // namespace unmask
