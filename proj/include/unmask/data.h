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

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "unmask/model.h"

namespace unmask {

// Word-level sequence with IOB2 tags (labels.size() == words.size()).
struct TaggedSentence {
  std::vector<std::string> words;
  std::vector<std::string> labels;

  bool operator==(const TaggedSentence&) const = default;
};

// CoNLL column files. Blank lines separate sentences, -DOCSTART- lines are
// skipped, dangling I-X tags are repaired to B-X with a note in `warnings`.
std::vector<TaggedSentence> parse_conll(std::istream& in, std::size_t token_col,
                                        std::size_t tag_col,
                                        std::vector<std::string>* warnings = nullptr);
std::vector<TaggedSentence> read_conll(const std::filesystem::path& path, std::size_t token_col,
                                       std::size_t tag_col,
                                       std::vector<std::string>* warnings = nullptr);
void write_conll(std::ostream& out, const std::vector<TaggedSentence>& sentences);

// ---- character-span annotations -------------------------------------------

struct CharSpan {
  std::size_t start = 0;  // inclusive, bytes
  std::size_t end = 0;    // exclusive
  std::string label;

  bool operator==(const CharSpan&) const = default;
};

struct SpanAnnotation {
  std::string text;
  std::vector<CharSpan> spans;
};

struct WordBoundary {
  std::size_t start = 0;
  std::size_t end = 0;
};

std::vector<WordBoundary> whitespace_words(std::string_view text);

struct AlignedLabels {
  std::vector<std::string> labels;
  std::vector<CharSpan> unmatched;
};

// A span becomes B-X I-X... only when its whitespace-trimmed range starts at a
// word start and ends at a word end; anything else is reported, never guessed.
AlignedLabels align_char_spans(const SpanAnnotation& ann, std::span<const WordBoundary> words);

// JSONL: {"text": ..., "spans": [{"start": s, "end": e, "label": l}, ...]}
std::vector<SpanAnnotation> read_span_jsonl(const std::filesystem::path& path);

// Whitespace-tokenizes and aligns; adds the number of unmatched spans to *unmatched.
TaggedSentence tag_annotation(const SpanAnnotation& ann, std::size_t* unmatched = nullptr);

// Seeded random hold-out of round(fraction * n) items.
template <typename Item>
std::pair<std::vector<Item>, std::vector<Item>> split_validation(std::vector<Item> items,
                                                                 double fraction,
                                                                 std::uint64_t seed) {
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_valid = static_cast<std::size_t>(fraction * static_cast<double>(items.size()) + 0.5);
  std::vector<bool> is_valid(items.size(), false);
  for (std::size_t i = 0; i < n_valid; ++i) is_valid[order[i]] = true;
  std::pair<std::vector<Item>, std::vector<Item>> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    (is_valid[i] ? out.second : out.first).push_back(std::move(items[i]));
  }
  return out;
}

// ---- subword pieces ---------------------------------------------------------

using Splitter = std::function<std::vector<std::string>(std::string_view)>;

// Fixed-width chunking by code point; continuation pieces carry a "##" prefix.
class ChunkSplitter {
 public:
  explicit ChunkSplitter(std::size_t width = 4) : width_(width) {}
  std::vector<std::string> operator()(std::string_view word) const;

 private:
  std::size_t width_;
};

inline std::vector<std::string> identity_splitter(std::string_view word) {
  return {std::string(word)};
}

inline constexpr std::size_t kMaxSequenceLength = 128;

struct Subtokens {
  std::vector<std::string> pieces;
  std::vector<std::size_t> first_index;  // one entry per kept word
  std::size_t kept_words = 0;
  bool truncated = false;
};

// Whole words are dropped from the right until the pieces fit in max_len.
Subtokens subtokenize(std::span<const std::string> words, const Splitter& splitter,
                      std::size_t max_len = kMaxSequenceLength);

// ---- vocabulary and labels --------------------------------------------------

class Vocab {
 public:
  static constexpr std::string_view kPad = "[PAD]";
  static constexpr std::string_view kUnk = "[UNK]";
  static constexpr std::string_view kMask = "[MASK]";
  static constexpr std::string_view kEos = "[EOS]";

  Vocab() = default;
  explicit Vocab(std::vector<std::string> tokens);

  // Specials first ([PAD] optional), then pieces by descending count, ties
  // lexicographic, capped at max_size entries overall.
  static Vocab build(const std::vector<std::vector<std::string>>& sentences,
                     const Splitter& splitter, std::size_t max_size, bool with_pad = true);

  int id(std::string_view piece) const;  // unknown pieces map to [UNK]
  bool contains(std::string_view piece) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // [PAD] when present, otherwise [EOS].
  int pad_id() const;
  int unk_id() const { return id(kUnk); }
  int mask_id() const;
  int eos_id() const;
  // Ids at or above this are ordinary pieces.
  int first_regular_id() const { return static_cast<int>(n_special_); }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::pair<std::string, int>> sorted_;  // for lookup
  std::size_t n_special_ = 0;
};

// "O", then B-X, I-X for each type in the given order.
class LabelSet {
 public:
  LabelSet() = default;
  explicit LabelSet(std::vector<std::string> types);
  static LabelSet from_sentences(const std::vector<TaggedSentence>& sentences);

  int id(std::string_view tag) const;
  const std::string& tag(int id) const { return tags_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tags_.size(); }
  const std::vector<std::string>& types() const { return types_; }
  const std::vector<std::string>& tags() const { return tags_; }

 private:
  std::vector<std::string> types_;
  std::vector<std::string> tags_;
};

// ---- model-ready encodings ---------------------------------------------------

// Subword ids for one sentence. Every piece of word w carries w's label in
// token_labels; only first_index positions are ever read.
struct SlSequence {
  std::vector<int> ids;
  std::vector<std::size_t> first_index;
  std::vector<int> token_labels;
};

SlSequence encode_sl(const TaggedSentence& sentence, const Splitter& splitter, const Vocab& vocab,
                     const LabelSet& labels, std::size_t max_len = kMaxSequenceLength,
                     bool* truncated = nullptr);

// Pads to the longest sequence in the group with pad_id.
TokenBatch pad_batch(const std::vector<std::span<const int>>& sequences, int pad_id);

LossBatch make_sl_batch(std::span<const SlSequence> sequences, int pad_id);
LossBatch make_clm_batch(std::span<const std::vector<int>> blocks, int pad_id);

// Greedy concatenation of sentence streams into fixed-size blocks; the final
// partial block is dropped.
std::vector<std::vector<int>> pack_blocks(std::span<const std::vector<int>> streams,
                                          std::size_t block_size);

struct MlmSample {
  std::vector<int> inputs;
  std::vector<std::size_t> positions;
  std::vector<int> targets;
};

inline constexpr double kDefaultMlmProbability = 0.15;

// Each position is selected with probability prob; selected positions become
// [MASK] 80%, a random ordinary piece 10%, unchanged 10%.
MlmSample mlm_corrupt(std::span<const int> block, double prob, const Vocab& vocab,
                      std::mt19937_64& rng);

LossBatch make_mlm_batch(std::span<const MlmSample> samples, int pad_id);

// Plain text, one sentence per line, whitespace-separated words; blank lines skipped.
std::vector<std::vector<std::string>> read_corpus(const std::filesystem::path& path);

// Piece ids per sentence, each terminated by [EOS].
std::vector<std::vector<int>> encode_corpus(const std::vector<std::vector<std::string>>& sentences,
                                            const Splitter& splitter, const Vocab& vocab);

}  // namespace unmask
