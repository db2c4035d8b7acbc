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

#include "unmask/instruction.h"

#include <fstream>
#include <sstream>

#include "unmask/error.h"
#include "unmask/eval.h"

namespace unmask {

namespace {

constexpr std::string_view kInstructionHeader = "### Instruction:";
constexpr std::string_view kOptionsHeader = "### Options:";
constexpr std::string_view kSentenceHeader = "### Sentence:";
constexpr std::string_view kResponseHeader = "### Response:";

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<TaskTemplate> build_templates() {
  return {
      {"ner",
       "please extract named entities and their type from the input sentence, all entity types "
       "are in options",
       {{"PER", "person"}, {"LOC", "location"}, {"ORG", "organization"}, {"MISC", "miscellaneous"}}},
      {"absa",
       "please extract aspect terms and their polarity from the input sentence, all polarity "
       "types are in options",
       {{"positive", "positive"}, {"negative", "negative"}, {"neutral", "neutral"},
        {"conflict", "conflict"}}},
      {"trigger",
       "please extract events and their types from the input sentence, all event types are in "
       "options",
       {{"Merge-Org", "merge organization"},
        {"Start-Org", "start organization"},
        {"Declare-Bankruptcy", "declare bankruptcy"},
        {"End-Org", "end organization"},
        {"Pardon", "grant pardon"},
        {"Extradite", "extradite"},
        {"Execute", "execute"},
        {"Fine", "impose fine"},
        {"Trial-Hearing", "conduct trial hearing"},
        {"Sentence", "issue sentence"},
        {"Appeal", "file appeal"},
        {"Convict", "convict"},
        {"Sue", "file lawsuit"},
        {"Release-Parole", "release on parole"},
        {"Arrest-Jail", "arrest and send to jail"},
        {"Charge-Indict", "charge and indict"},
        {"Acquit", "acquit"},
        {"Demonstrate", "participate in protest or demonstration"},
        {"Attack", "attack"},
        {"Phone-Write", "contact via written or telephone communication"},
        {"Meet", "meet"},
        {"Start-Position", "start position"},
        {"Elect", "elect"},
        {"End-Position", "end position"},
        {"Nominate", "nominate"},
        {"Transfer-Ownership", "transfer ownership"},
        {"Transfer-Money", "transfer money"},
        {"Marry", "marry"},
        {"Divorce", "divorce"},
        {"Be-Born", "be born"},
        {"Die", "die"},
        {"Injure", "sustain injury"},
        {"Transport", "transport"}}},
      {"chunk",
       "please extract chunks and their type from the input sentence, all chunk types are in "
       "options",
       {{"NP", "noun phrase"},
        {"VP", "verb phrase"},
        {"PP", "prepositional phrase"},
        {"ADVP", "adverb phrase"},
        {"SBAR", "subordinated clause"},
        {"ADJP", "adjective phrase"},
        {"PRT", "particles"},
        {"CONJP", "conjunction phrase"},
        {"INTJ", "interjection"},
        {"LST", "list marker"},
        {"UCP", "unlike coordinated phrase"}}},
  };
}

const std::vector<TaskTemplate>& templates() {
  static const std::vector<TaskTemplate> all = build_templates();
  return all;
}

}  // namespace

std::vector<std::string> TaskTemplate::options() const {
  std::vector<std::string> out;
  for (const auto& t : types) out.push_back(t.option);
  return out;
}

const std::string& TaskTemplate::option_for(std::string_view tag_type) const {
  for (const auto& t : types) {
    if (t.tag_type == tag_type) return t.option;
  }
  throw Error(ErrorCode::kTargetNotFound,
              "type '" + std::string(tag_type) + "' has no option in the " + task + " template");
}

const std::string& TaskTemplate::tag_type_for(std::string_view option) const {
  for (const auto& t : types) {
    if (t.option == option) return t.tag_type;
  }
  throw Error(ErrorCode::kTargetNotFound,
              "option '" + std::string(option) + "' unknown to the " + task + " template");
}

const TaskTemplate& task_template(std::string_view task) {
  for (const auto& t : templates()) {
    if (t.task == task) return t;
  }
  throw Error(ErrorCode::kInvalidConfig, "no instruction template for task '" + std::string(task) + "'");
}

const std::vector<std::string>& template_tasks() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& t : templates()) n.push_back(t.task);
    return n;
  }();
  return names;
}

std::string render_instruction(const InstructionExample& ex, bool with_response) {
  std::string options;
  for (std::size_t i = 0; i < ex.options.size(); ++i) {
    if (i > 0) options += ", ";
    options += ex.options[i];
  }
  std::string out;
  out.append(kInstructionHeader).append("\n").append(ex.instruction).append("\n\n");
  out.append(kOptionsHeader).append("\n").append(options).append("\n\n");
  out.append(kSentenceHeader).append("\n").append(ex.sentence).append("\n\n");
  out.append(kResponseHeader).append("\n");
  if (with_response && !ex.response.empty()) out.append(ex.response).append("\n");
  return out;
}

InstructionExample parse_instruction(std::string_view text) {
  const std::string_view headers[] = {kInstructionHeader, kOptionsHeader, kSentenceHeader,
                                      kResponseHeader};
  std::size_t at[4];
  std::size_t from = 0;
  for (int h = 0; h < 4; ++h) {
    at[h] = text.find(headers[h], from);
    if (at[h] == std::string_view::npos) {
      throw Error(ErrorCode::kParse, "instruction record lacks '" + std::string(headers[h]) + "'");
    }
    from = at[h] + headers[h].size();
  }
  auto body = [&](int h) {
    const std::size_t start = at[h] + headers[h].size();
    const std::size_t end = h < 3 ? at[h + 1] : text.size();
    return std::string(trim(text.substr(start, end - start)));
  };
  InstructionExample ex;
  ex.instruction = body(0);
  ex.sentence = body(2);
  ex.response = body(3);
  const std::string options = body(1);
  std::size_t pos = 0;
  while (!options.empty()) {
    const auto comma = options.find(',', pos);
    ex.options.emplace_back(trim(std::string_view(options).substr(pos, comma - pos)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return ex;
}

void write_instruction_file(std::ostream& out, const std::vector<InstructionExample>& examples,
                            bool with_response) {
  for (std::size_t i = 0; i < examples.size(); ++i) {
    if (i > 0) out << '\n';
    out << render_instruction(examples[i], with_response);
  }
}

std::vector<InstructionExample> parse_instruction_file(std::string_view text) {
  std::vector<InstructionExample> out;
  // Records contain blank lines themselves, so they are delimited by their
  // leading header at the start of a line.
  std::vector<std::size_t> starts;
  for (std::size_t p = text.find(kInstructionHeader); p != std::string_view::npos;
       p = text.find(kInstructionHeader, p + 1)) {
    if (p == 0 || text[p - 1] == '\n') starts.push_back(p);
  }
  if (starts.empty()) throw Error(ErrorCode::kEmptyFile, "no instruction records");
  if (!trim(text.substr(0, starts[0])).empty()) {
    throw Error(ErrorCode::kParse, "text before the first instruction record");
  }
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const std::size_t end = i + 1 < starts.size() ? starts[i + 1] : text.size();
    out.push_back(parse_instruction(text.substr(starts[i], end - starts[i])));
  }
  return out;
}

std::vector<InstructionExample> read_instruction_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_instruction_file(ss.str());
}

std::vector<ResponseItem> parse_response(std::string_view response, std::size_t* malformed) {
  std::vector<ResponseItem> items;
  std::size_t pos = 0;
  while (pos <= response.size()) {
    auto semi = response.find(';', pos);
    if (semi == std::string_view::npos) semi = response.size();
    const std::string_view item = trim(response.substr(pos, semi - pos));
    pos = semi + 1;
    if (item.empty()) continue;
    const auto colon = item.rfind(':');
    const std::string_view surface = colon == std::string_view::npos ? "" : trim(item.substr(0, colon));
    const std::string_view type = colon == std::string_view::npos ? "" : trim(item.substr(colon + 1));
    if (surface.empty() || type.empty()) {
      if (malformed) ++*malformed;
      continue;
    }
    items.push_back({std::string(surface), std::string(type)});
  }
  return items;
}

std::string format_response(const std::vector<ResponseItem>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += ';';
    out += items[i].surface + ':' + items[i].type;
  }
  return out;
}

InstructionExample make_instruction(const TaggedSentence& sentence, const TaskTemplate& tmpl) {
  InstructionExample ex;
  ex.instruction = tmpl.instruction;
  ex.options = tmpl.options();
  for (std::size_t i = 0; i < sentence.words.size(); ++i) {
    if (i > 0) ex.sentence += ' ';
    ex.sentence += sentence.words[i];
  }
  std::vector<ResponseItem> items;
  for (const auto& span : extract_spans(sentence.labels)) {
    std::string surface;
    for (std::size_t w = span.start; w <= span.end; ++w) {
      if (w > span.start) surface += ' ';
      surface += sentence.words[w];
    }
    items.push_back({std::move(surface), tmpl.option_for(span.type)});
  }
  ex.response = format_response(items);
  return ex;
}

}  // namespace unmask
