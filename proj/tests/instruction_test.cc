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

#include <sstream>

#include "test_util.h"

namespace unmask {
namespace {

TEST(Templates, OptionListsAndWording) {
  EXPECT_EQ(template_tasks(), (std::vector<std::string>{"ner", "absa", "trigger", "chunk"}));
  const auto& ner = task_template("ner");
  EXPECT_EQ(ner.instruction,
            "please extract named entities and their type from the input sentence, all entity "
            "types are in options");
  EXPECT_EQ(ner.options(),
            (std::vector<std::string>{"person", "location", "organization", "miscellaneous"}));
  EXPECT_EQ(task_template("absa").options(),
            (std::vector<std::string>{"positive", "negative", "neutral", "conflict"}));
  EXPECT_EQ(task_template("chunk").options().size(), 11u);
  const auto trig = task_template("trigger").options();
  ASSERT_EQ(trig.size(), 33u);
  EXPECT_EQ(trig.front(), "merge organization");
  EXPECT_EQ(trig[19], "contact via written or telephone communication");
  EXPECT_EQ(trig.back(), "transport");
  EXPECT_EQ(task_template("trigger").tag_type_for("sustain injury"), "Injure");
  EXPECT_ERROR_CODE(task_template("pos"), ErrorCode::kInvalidConfig);
  EXPECT_ERROR_CODE(ner.option_for("DATE"), ErrorCode::kTargetNotFound);
}

TEST(Render, SectionsInOrder) {
  InstructionExample ex{"do it", {"a", "b"}, "x y", "x:a"};
  EXPECT_EQ(render_instruction(ex),
            "### Instruction:\ndo it\n\n### Options:\na, b\n\n### Sentence:\nx y\n\n"
            "### Response:\nx:a\n");
  EXPECT_EQ(render_instruction(ex, false),
            "### Instruction:\ndo it\n\n### Options:\na, b\n\n### Sentence:\nx y\n\n"
            "### Response:\n");
}

TEST(Render, ParseRejectsMissingSection) {
  EXPECT_ERROR_CODE(parse_instruction("### Instruction:\nx\n### Sentence:\ny\n### Response:\n"),
                    ErrorCode::kParse);
}

TEST(ParseResponse, Examples) {
  EXPECT_EQ(parse_response("Germany:location;NFU:organization"),
            (std::vector<ResponseItem>{{"Germany", "location"}, {"NFU", "organization"}}));
  EXPECT_TRUE(parse_response("").empty());
  EXPECT_EQ(parse_response("a:b:c"), (std::vector<ResponseItem>{{"a:b", "c"}}));
  EXPECT_EQ(parse_response(" almost $ 17,000 : noun phrase ;"),
            (std::vector<ResponseItem>{{"almost $ 17,000", "noun phrase"}}));
}

TEST(ParseResponse, MalformedItemsAreCounted) {
  std::size_t bad = 0;
  auto items = parse_response("Germany;NFU:organization;:x;y:", &bad);
  EXPECT_EQ(items, (std::vector<ResponseItem>{{"NFU", "organization"}}));
  EXPECT_EQ(bad, 3u);
}

struct TemplateCase {
  const char* task;
  TaggedSentence sentence;
  const char* response;
};

std::vector<TemplateCase> sample_cases() {
  return {
      {"ner",
       {{"Germany", "'s", "lead", ",", "Welsh", "National", "Farmers", "'", "Union", "(", "NFU",
         ")"},
        {"B-LOC", "O", "O", "O", "B-ORG", "I-ORG", "I-ORG", "I-ORG", "I-ORG", "O", "B-ORG", "O"}},
       "Germany:location;Welsh National Farmers ' Union:organization;NFU:organization"},
      {"absa",
       {{"The", "lobster", "sandwich", "is", "$", "24", "and", "the", "price"},
        {"O", "B-conflict", "I-conflict", "O", "O", "O", "O", "O", "B-negative"}},
       "lobster sandwich:conflict;price:negative"},
      {"trigger",
       {{"did", "n't", "tell", "his", "family", "about", "his", "first", "combat", "mission"},
        {"O", "O", "B-Phone-Write", "O", "O", "O", "O", "O", "B-Attack", "O"}},
       "tell:contact via written or telephone communication;combat:attack"},
      {"chunk",
       {{"Rare", "Hendrix", "song", "draft", "sells", "for", "almost", "$", "17,000", "."},
        {"B-NP", "I-NP", "I-NP", "I-NP", "B-VP", "B-PP", "B-NP", "I-NP", "I-NP", "O"}},
       "Rare Hendrix song draft:noun phrase;sells:verb phrase;for:prepositional phrase;almost $ "
       "17,000:noun phrase"},
  };
}

TEST(TemplateExamples, MakeRenderParseRoundTrip) {
  for (const auto& c : sample_cases()) {
    SCOPED_TRACE(c.task);
    const auto& tmpl = task_template(c.task);
    const auto ex = make_instruction(c.sentence, tmpl);
    EXPECT_EQ(ex.response, c.response);
    EXPECT_EQ(parse_instruction(render_instruction(ex)), ex);
    auto eval_form = parse_instruction(render_instruction(ex, false));
    EXPECT_TRUE(eval_form.response.empty());
    EXPECT_EQ(eval_form.options, tmpl.options());
    EXPECT_EQ(format_response(parse_response(ex.response)), ex.response);
  }
}

TEST(InstructionFile, RoundTrip) {
  std::vector<InstructionExample> all;
  for (const auto& c : sample_cases()) all.push_back(make_instruction(c.sentence, task_template(c.task)));
  all.push_back({"empty", {"x"}, "nothing here", ""});
  std::ostringstream out;
  write_instruction_file(out, all);
  EXPECT_EQ(parse_instruction_file(out.str()), all);
  EXPECT_ERROR_CODE(parse_instruction_file("\n\n"), ErrorCode::kEmptyFile);
}

TEST(InstructionFile, ResponseListRoundTrip) {
  std::mt19937_64 rng(9);
  const std::vector<std::string> pieces{"a", "b:c", "d e", "f"};
  std::uniform_int_distribution<int> pick(0, 3), count(0, 4);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ResponseItem> items;
    for (int k = count(rng); k > 0; --k) items.push_back({pieces[pick(rng)], pieces[pick(rng) % 2 == 0 ? 3 : 2]});
    InstructionExample ex{"i", {"o"}, "s", format_response(items)};
    EXPECT_EQ(parse_response(parse_instruction(render_instruction(ex)).response), items);
  }
}

}  // namespace
}  // namespace unmask
