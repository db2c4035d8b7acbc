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

#include "unmask/data.h"

#include <sstream>

#include "test_util.h"
#include "unmask/iob.h"

namespace unmask {
namespace {

TEST(Iob, SplitTag) {
  EXPECT_EQ(split_tag("B-PER").prefix, 'B');
  EXPECT_EQ(split_tag("I-noun phrase").type, "noun phrase");
  EXPECT_EQ(split_tag("O").prefix, 'O');
  EXPECT_ERROR_CODE(split_tag("X-PER"), ErrorCode::kUnnormalizedInput);
  EXPECT_ERROR_CODE(split_tag("B-"), ErrorCode::kUnnormalizedInput);
}

TEST(Iob, RepairDanglingInside) {
  std::vector<std::string> tags{"I-PER", "I-PER", "O", "B-LOC", "I-ORG"};
  EXPECT_FALSE(is_normalized_iob2(tags));
  EXPECT_EQ(repair_iob2(tags), 2u);
  EXPECT_EQ(tags, (std::vector<std::string>{"B-PER", "I-PER", "O", "B-LOC", "B-ORG"}));
  EXPECT_TRUE(is_normalized_iob2(tags));
}

TEST(Conll, ParsesSentencesAndSkipsDocstart) {
  std::istringstream in("-DOCSTART- O\n\nEU B-ORG\nrejects O\n\n\nGerman B-MISC\ncall O\n");
  auto s = parse_conll(in, 0, 1);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].words, (std::vector<std::string>{"EU", "rejects"}));
  EXPECT_EQ(s[0].labels, (std::vector<std::string>{"B-ORG", "O"}));
  EXPECT_EQ(s[1].labels[0], "B-MISC");
}

TEST(Conll, SingleSentenceWithoutTrailingBlank) {
  std::istringstream in("EU B-ORG\nrejects O");
  EXPECT_EQ(parse_conll(in, 0, 1).size(), 1u);
}

TEST(Conll, MultiColumnSelection) {
  std::istringstream in("EU NNP B-NP B-ORG\nrejects VBZ B-VP O\n");
  auto chunk = parse_conll(in, 0, 2);
  EXPECT_EQ(chunk[0].labels, (std::vector<std::string>{"B-NP", "B-VP"}));
}

TEST(Conll, Errors) {
  std::istringstream ragged("EU B-ORG\nrejects\n");
  EXPECT_ERROR_CODE(parse_conll(ragged, 0, 1), ErrorCode::kRaggedColumns);
  std::istringstream one_col("EU\n");
  EXPECT_ERROR_CODE(parse_conll(one_col, 0, 1), ErrorCode::kRaggedColumns);
  std::istringstream empty("\n\n");
  EXPECT_ERROR_CODE(parse_conll(empty, 0, 1), ErrorCode::kEmptyFile);
  EXPECT_ERROR_CODE(read_conll("/nonexistent/file.conll", 0, 1), ErrorCode::kIo);
}

TEST(Conll, RepairIsReported) {
  std::istringstream in("New I-LOC\nYork I-LOC\n");
  std::vector<std::string> warnings;
  auto s = parse_conll(in, 0, 1, &warnings);
  EXPECT_EQ(s[0].labels[0], "B-LOC");
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(Conll, WriteReadRoundTrip) {
  std::vector<TaggedSentence> s{{{"a", "b"}, {"B-X", "I-X"}}, {{"c"}, {"O"}}};
  std::stringstream io;
  write_conll(io, s);
  EXPECT_EQ(parse_conll(io, 0, 1), s);
}

TEST(Spans, AlignsToWholeWords) {
  SpanAnnotation ann{"The lobster sandwich is great", {{4, 20, "conflict"}}};
  auto t = tag_annotation(ann);
  EXPECT_EQ(t.labels,
            (std::vector<std::string>{"O", "B-conflict", "I-conflict", "O", "O"}));
}

TEST(Spans, MidWordSpanIsUnmatched) {
  SpanAnnotation ann{"The lobster sandwich is great", {{5, 20, "conflict"}}};
  const auto words = whitespace_words(ann.text);
  auto a = align_char_spans(ann, words);
  ASSERT_EQ(a.unmatched.size(), 1u);
  EXPECT_EQ(a.unmatched[0].start, 5u);
  EXPECT_EQ(a.labels, std::vector<std::string>(5, "O"));
  std::size_t n = 0;
  tag_annotation(ann, &n);
  EXPECT_EQ(n, 1u);
}

TEST(Spans, SurroundingWhitespaceIsTrimmed) {
  SpanAnnotation ann{"a bb c", {{1, 5, "X"}}};
  EXPECT_EQ(tag_annotation(ann).labels, (std::vector<std::string>{"O", "B-X", "O"}));
}

TEST(Spans, Errors) {
  SpanAnnotation overlap{"a bb c", {{0, 4, "X"}, {2, 6, "Y"}}};
  EXPECT_ERROR_CODE(tag_annotation(overlap), ErrorCode::kOverlappingSpans);
  SpanAnnotation outside{"a bb", {{2, 9, "X"}}};
  EXPECT_ERROR_CODE(tag_annotation(outside), ErrorCode::kInvalidSpan);
  SpanAnnotation inverted{"a bb", {{3, 2, "X"}}};
  EXPECT_ERROR_CODE(tag_annotation(inverted), ErrorCode::kInvalidSpan);
}

TEST(Split, DeterministicAndDisjoint) {
  std::vector<int> items(100);
  for (int i = 0; i < 100; ++i) items[i] = i;
  auto [train, valid] = split_validation(items, 0.1, 7);
  EXPECT_EQ(valid.size(), 10u);
  EXPECT_EQ(train.size(), 90u);
  auto again = split_validation(items, 0.1, 7);
  EXPECT_EQ(again.second, valid);
  std::vector<int> all = train;
  all.insert(all.end(), valid.begin(), valid.end());
  std::sort(all.begin(), all.end());
  EXPECT_EQ(all, items);
}

TEST(Splitter, ChunksByCodePoint) {
  ChunkSplitter split(4);
  EXPECT_EQ(split("sandwich1"), (std::vector<std::string>{"sand", "##wich", "##1"}));
  EXPECT_EQ(split("the"), (std::vector<std::string>{"the"}));
  // Four two-byte code points stay one piece.
  EXPECT_EQ(split("\xc3\xa9\xc3\xa9\xc3\xa9\xc3\xa9").size(), 1u);
  EXPECT_ERROR_CODE(split(""), ErrorCode::kEmptyWord);
}

TEST(Subtokenize, FirstIndexAndTruncation) {
  std::vector<std::string> words{"sandwich1", "is", "great"};
  auto sub = subtokenize(words, ChunkSplitter(4));
  EXPECT_EQ(sub.pieces.size(), 6u);
  EXPECT_EQ(sub.first_index, (std::vector<std::size_t>{0, 3, 4}));
  EXPECT_FALSE(sub.truncated);
  auto cut = subtokenize(words, ChunkSplitter(4), 5);
  EXPECT_TRUE(cut.truncated);
  EXPECT_EQ(cut.kept_words, 2u);
  EXPECT_EQ(cut.pieces.size(), 4u);
  std::vector<std::string> bad{"a", ""};
  EXPECT_ERROR_CODE(subtokenize(bad, ChunkSplitter(4)), ErrorCode::kEmptyWord);
}

TEST(Vocab, BuildOrderAndLookup) {
  std::vector<std::vector<std::string>> corpus{{"b", "a", "b"}, {"c", "a", "b"}};
  auto v = Vocab::build(corpus, identity_splitter, 6);
  EXPECT_EQ(v.tokens(), (std::vector<std::string>{"[PAD]", "[UNK]", "[MASK]", "[EOS]", "b", "a"}));
  EXPECT_EQ(v.id("c"), v.unk_id());
  EXPECT_EQ(v.pad_id(), 0);
  EXPECT_EQ(v.first_regular_id(), 4);
  auto no_pad = Vocab::build(corpus, identity_splitter, 10, false);
  EXPECT_EQ(no_pad.pad_id(), no_pad.eos_id());
  EXPECT_EQ(no_pad.first_regular_id(), 3);
  EXPECT_ERROR_CODE(Vocab({"a", "a", "[UNK]"}), ErrorCode::kInvalidSpec);
}

TEST(Labels, OrderAndLookup) {
  LabelSet labels({"PER", "LOC"});
  EXPECT_EQ(labels.tags(), (std::vector<std::string>{"O", "B-PER", "I-PER", "B-LOC", "I-LOC"}));
  EXPECT_EQ(labels.id("I-LOC"), 4);
  EXPECT_ERROR_CODE(labels.id("B-ORG"), ErrorCode::kIndexOutOfRange);
  std::vector<TaggedSentence> s{{{"a", "b"}, {"B-ORG", "I-ORG"}}, {{"c"}, {"B-LOC"}}};
  EXPECT_EQ(LabelSet::from_sentences(s).types(), (std::vector<std::string>{"LOC", "ORG"}));
}

TEST(Encode, SlTargetsAreFirstPieces) {
  TaggedSentence s{{"sandwich", "ok"}, {"B-X", "O"}};
  LabelSet labels({"X"});
  auto v = Vocab::build({s.words}, ChunkSplitter(4), 100);
  auto seq = encode_sl(s, ChunkSplitter(4), v, labels);
  EXPECT_EQ(seq.ids.size(), 3u);
  EXPECT_EQ(seq.first_index, (std::vector<std::size_t>{0, 2}));
  std::vector<SlSequence> group{seq, encode_sl({{"ok"}, {"O"}}, ChunkSplitter(4), v, labels)};
  auto lb = make_sl_batch(group, v.pad_id());
  EXPECT_EQ(lb.tokens.length, 3u);
  EXPECT_EQ(lb.tokens.valid_lens, (std::vector<std::size_t>{3, 1}));
  EXPECT_EQ(lb.tokens.at(1, 2), v.pad_id());
  ASSERT_EQ(lb.targets.size(), 3u);
  EXPECT_EQ(lb.targets[1].position, 2u);
  EXPECT_EQ(lb.targets[0].label, 1);
  EXPECT_EQ(lb.targets[2].row, 1u);
}

TEST(Pack, DropsPartialBlock) {
  std::vector<std::vector<int>> streams;
  std::size_t total = 0;
  while (total < 1030) {
    streams.push_back(std::vector<int>(std::min<std::size_t>(37, 1030 - total), 5));
    total += streams.back().size();
  }
  auto blocks = pack_blocks(streams, 512);
  EXPECT_EQ(blocks.size(), 2u);
  for (const auto& b : blocks) EXPECT_EQ(b.size(), 512u);
  EXPECT_ERROR_CODE(pack_blocks(streams, 1), ErrorCode::kInvalidLength);
}

TEST(Pack, ClmTargetsShiftByOne) {
  std::vector<std::vector<int>> blocks{{4, 5, 6}};
  auto lb = make_clm_batch(blocks, 0);
  ASSERT_EQ(lb.targets.size(), 2u);
  EXPECT_EQ(lb.targets[0].label, 5);
  EXPECT_EQ(lb.targets[1].position, 1u);
  EXPECT_EQ(lb.targets[1].label, 6);
}

TEST(Mlm, SelectionAndReplacementRates) {
  std::vector<std::string> tokens{"[PAD]", "[UNK]", "[MASK]", "[EOS]"};
  for (int i = 0; i < 200; ++i) tokens.push_back("w" + std::to_string(i));
  Vocab v(tokens);
  std::vector<int> block(512);
  for (std::size_t i = 0; i < block.size(); ++i) block[i] = 4 + static_cast<int>(i % 200);
  std::mt19937_64 rng(3);
  std::size_t selected = 0, masked = 0, kept = 0, total = 0;
  for (int rep = 0; rep < 200; ++rep) {
    auto s = mlm_corrupt(block, kDefaultMlmProbability, v, rng);
    total += block.size();
    selected += s.positions.size();
    for (std::size_t k = 0; k < s.positions.size(); ++k) {
      const int in = s.inputs[s.positions[k]];
      EXPECT_EQ(s.targets[k], block[s.positions[k]]);
      EXPECT_NE(in, v.pad_id());
      if (in == v.mask_id()) ++masked;
      else if (in == s.targets[k]) ++kept;
    }
  }
  const double rate = static_cast<double>(selected) / total;
  EXPECT_NEAR(rate, 0.15, 0.01);
  EXPECT_NEAR(static_cast<double>(masked) / selected, 0.8, 0.02);
  // Random replacements that coincide with the original count as kept.
  EXPECT_NEAR(static_cast<double>(kept) / selected, 0.1 + 0.1 / 200, 0.02);
  EXPECT_NEAR(static_cast<double>(selected - masked - kept) / selected, 0.1 - 0.1 / 200, 0.02);
}

TEST(Mlm, NothingSelected) {
  Vocab v({"[UNK]", "[MASK]", "[EOS]", "a"});
  std::vector<int> block{3, 3};
  std::mt19937_64 rng(1);
  EXPECT_ERROR_CODE(mlm_corrupt(block, 0.0, v, rng), ErrorCode::kNothingSelected);
}

TEST(Corpus, EncodeAppendsEos) {
  std::vector<std::vector<std::string>> corpus{{"ab", "c"}};
  auto v = Vocab::build(corpus, identity_splitter, 10);
  auto ids = encode_corpus(corpus, identity_splitter, v);
  ASSERT_EQ(ids[0].size(), 3u);
  EXPECT_EQ(ids[0].back(), v.eos_id());
}

}  // namespace
}  // namespace unmask
