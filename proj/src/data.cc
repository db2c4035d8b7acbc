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

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "unmask/error.h"
#include "unmask/iob.h"

namespace unmask {

namespace {

std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.emplace_back(line.substr(start, i - start));
  }
  return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return in;
}

}  // namespace

std::vector<TaggedSentence> parse_conll(std::istream& in, std::size_t token_col,
                                        std::size_t tag_col, std::vector<std::string>* warnings) {
  std::vector<TaggedSentence> sentences;
  TaggedSentence current;
  std::size_t width = 0;
  std::size_t line_no = 0;
  auto flush = [&] {
    if (current.words.empty()) return;
    std::vector<std::string> raw = current.labels;
    if (repair_iob2(current.labels) > 0 && warnings) {
      std::string note = "sentence " + std::to_string(sentences.size()) + ": repaired tags";
      for (std::size_t i = 0; i < raw.size(); ++i) {
        if (raw[i] != current.labels[i]) note += " [" + std::to_string(i) + "] " + raw[i];
      }
      warnings->push_back(std::move(note));
    }
    sentences.push_back(std::move(current));
    current = {};
    width = 0;
  };
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    auto cols = split_ws(line);
    if (cols.empty()) {
      flush();
      continue;
    }
    if (cols[0] == "-DOCSTART-") continue;
    if (width == 0) width = cols.size();
    if (cols.size() != width || std::max(token_col, tag_col) >= cols.size()) {
      throw Error(ErrorCode::kRaggedColumns,
                  "line " + std::to_string(line_no) + " has " + std::to_string(cols.size()) +
                      " columns");
    }
    current.words.push_back(cols[token_col]);
    current.labels.push_back(cols[tag_col]);
  }
  flush();
  if (sentences.empty()) throw Error(ErrorCode::kEmptyFile, "no sentences in CoNLL input");
  return sentences;
}

std::vector<TaggedSentence> read_conll(const std::filesystem::path& path, std::size_t token_col,
                                       std::size_t tag_col, std::vector<std::string>* warnings) {
  auto in = open_input(path);
  try {
    return parse_conll(in, token_col, tag_col, warnings);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void write_conll(std::ostream& out, const std::vector<TaggedSentence>& sentences) {
  for (const auto& s : sentences) {
    for (std::size_t i = 0; i < s.words.size(); ++i) out << s.words[i] << ' ' << s.labels[i] << '\n';
    out << '\n';
  }
}

std::vector<WordBoundary> whitespace_words(std::string_view text) {
  std::vector<WordBoundary> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.push_back({start, i});
  }
  return out;
}

AlignedLabels align_char_spans(const SpanAnnotation& ann, std::span<const WordBoundary> words) {
  std::vector<CharSpan> spans = ann.spans;
  std::sort(spans.begin(), spans.end(),
            [](const CharSpan& a, const CharSpan& b) { return a.start < b.start; });
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (spans[i].start >= spans[i].end || spans[i].end > ann.text.size()) {
      throw Error(ErrorCode::kInvalidSpan, "span [" + std::to_string(spans[i].start) + ", " +
                                               std::to_string(spans[i].end) + ") outside text");
    }
    if (i > 0 && spans[i].start < spans[i - 1].end) {
      throw Error(ErrorCode::kOverlappingSpans, "spans overlap at byte " + std::to_string(spans[i].start));
    }
  }

  AlignedLabels out;
  out.labels.assign(words.size(), "O");
  for (const auto& span : spans) {
    std::size_t s = span.start, e = span.end;
    while (s < e && std::isspace(static_cast<unsigned char>(ann.text[s]))) ++s;
    while (e > s && std::isspace(static_cast<unsigned char>(ann.text[e - 1]))) --e;
    auto first = std::find_if(words.begin(), words.end(), [&](const WordBoundary& w) { return w.start == s; });
    auto last = std::find_if(words.begin(), words.end(), [&](const WordBoundary& w) { return w.end == e; });
    if (s == e || first == words.end() || last == words.end() || last < first) {
      out.unmatched.push_back(span);
      continue;
    }
    const auto b = static_cast<std::size_t>(first - words.begin());
    const auto l = static_cast<std::size_t>(last - words.begin());
    out.labels[b] = "B-" + span.label;
    for (std::size_t w = b + 1; w <= l; ++w) out.labels[w] = "I-" + span.label;
  }
  return out;
}

std::vector<SpanAnnotation> read_span_jsonl(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<SpanAnnotation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      SpanAnnotation ann;
      ann.text = j.at("text").get<std::string>();
      for (const auto& s : j.value("spans", nlohmann::json::array())) {
        ann.spans.push_back({s.at("start").get<std::size_t>(), s.at("end").get<std::size_t>(),
                             s.at("label").get<std::string>()});
      }
      out.push_back(std::move(ann));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kParse, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (out.empty()) throw Error(ErrorCode::kEmptyFile, path.string());
  return out;
}

TaggedSentence tag_annotation(const SpanAnnotation& ann, std::size_t* unmatched) {
  const auto bounds = whitespace_words(ann.text);
  auto aligned = align_char_spans(ann, bounds);
  if (unmatched) *unmatched += aligned.unmatched.size();
  TaggedSentence s;
  for (const auto& w : bounds) s.words.emplace_back(ann.text.substr(w.start, w.end - w.start));
  s.labels = std::move(aligned.labels);
  return s;
}

std::vector<std::string> ChunkSplitter::operator()(std::string_view word) const {
  if (word.empty()) throw Error(ErrorCode::kEmptyWord, "cannot split an empty word");
  std::vector<std::string> pieces;
  std::string piece;
  std::size_t count = 0;
  for (std::size_t i = 0; i < word.size();) {
    // Length of the UTF-8 sequence starting at i.
    const auto lead = static_cast<unsigned char>(word[i]);
    std::size_t len = lead < 0x80 ? 1 : (lead >> 5) == 0x6 ? 2 : (lead >> 4) == 0xE ? 3 : (lead >> 3) == 0x1E ? 4 : 1;
    len = std::min(len, word.size() - i);
    piece.append(word.substr(i, len));
    i += len;
    if (++count == width_) {
      pieces.push_back(pieces.empty() ? piece : "##" + piece);
      piece.clear();
      count = 0;
    }
  }
  if (!piece.empty()) pieces.push_back(pieces.empty() ? piece : "##" + piece);
  return pieces;
}

Subtokens subtokenize(std::span<const std::string> words, const Splitter& splitter,
                      std::size_t max_len) {
  Subtokens out;
  for (const auto& word : words) {
    if (word.empty()) throw Error(ErrorCode::kEmptyWord, "empty word in sentence");
    auto pieces = splitter(word);
    if (pieces.empty()) throw Error(ErrorCode::kEmptyWord, "splitter produced no pieces for " + word);
    if (out.pieces.size() + pieces.size() > max_len) {
      out.truncated = true;
      break;
    }
    out.first_index.push_back(out.pieces.size());
    out.pieces.insert(out.pieces.end(), pieces.begin(), pieces.end());
    ++out.kept_words;
  }
  return out;
}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) sorted_.emplace_back(tokens_[i], static_cast<int>(i));
  std::sort(sorted_.begin(), sorted_.end());
  for (std::size_t i = 1; i < sorted_.size(); ++i) {
    if (sorted_[i].first == sorted_[i - 1].first) {
      throw Error(ErrorCode::kInvalidSpec, "duplicate vocabulary entry " + sorted_[i].first);
    }
  }
  while (n_special_ < tokens_.size() && tokens_[n_special_].size() > 2 &&
         tokens_[n_special_].front() == '[' && tokens_[n_special_].back() == ']') {
    ++n_special_;
  }
  if (!contains(kUnk)) throw Error(ErrorCode::kInvalidSpec, "vocabulary lacks [UNK]");
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& sentences, const Splitter& splitter,
                   std::size_t max_size, bool with_pad) {
  std::vector<std::string> tokens;
  if (with_pad) tokens.emplace_back(kPad);
  for (auto s : {kUnk, kMask, kEos}) tokens.emplace_back(s);
  std::map<std::string, std::size_t> counts;
  for (const auto& words : sentences) {
    for (const auto& w : words) {
      for (auto& piece : splitter(w)) ++counts[piece];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [piece, count] : ranked) {
    if (tokens.size() >= max_size) break;
    tokens.push_back(piece);
  }
  return Vocab(std::move(tokens));
}

bool Vocab::contains(std::string_view piece) const {
  auto it = std::lower_bound(sorted_.begin(), sorted_.end(), piece,
                             [](const auto& e, std::string_view p) { return e.first < p; });
  return it != sorted_.end() && it->first == piece;
}

int Vocab::id(std::string_view piece) const {
  auto it = std::lower_bound(sorted_.begin(), sorted_.end(), piece,
                             [](const auto& e, std::string_view p) { return e.first < p; });
  if (it != sorted_.end() && it->first == piece) return it->second;
  if (piece == kUnk) throw Error(ErrorCode::kInvalidSpec, "vocabulary lacks [UNK]");
  return id(kUnk);
}

int Vocab::pad_id() const { return contains(kPad) ? id(kPad) : eos_id(); }

int Vocab::mask_id() const {
  if (!contains(kMask)) throw Error(ErrorCode::kInvalidSpec, "vocabulary lacks [MASK]");
  return id(kMask);
}

int Vocab::eos_id() const {
  if (!contains(kEos)) throw Error(ErrorCode::kInvalidSpec, "vocabulary lacks [EOS]");
  return id(kEos);
}

LabelSet::LabelSet(std::vector<std::string> types) : types_(std::move(types)) {
  tags_.push_back("O");
  for (const auto& t : types_) {
    tags_.push_back("B-" + t);
    tags_.push_back("I-" + t);
  }
}

LabelSet LabelSet::from_sentences(const std::vector<TaggedSentence>& sentences) {
  std::vector<std::string> types;
  for (const auto& s : sentences) {
    for (const auto& tag : s.labels) {
      auto p = split_tag(tag);
      if (p.prefix != 'O') types.push_back(p.type);
    }
  }
  std::sort(types.begin(), types.end());
  types.erase(std::unique(types.begin(), types.end()), types.end());
  return LabelSet(std::move(types));
}

int LabelSet::id(std::string_view tag) const {
  auto it = std::find(tags_.begin(), tags_.end(), tag);
  if (it == tags_.end()) {
    throw Error(ErrorCode::kIndexOutOfRange, "tag '" + std::string(tag) + "' not in label set");
  }
  return static_cast<int>(it - tags_.begin());
}

SlSequence encode_sl(const TaggedSentence& sentence, const Splitter& splitter, const Vocab& vocab,
                     const LabelSet& labels, std::size_t max_len, bool* truncated) {
  if (sentence.words.size() != sentence.labels.size()) {
    throw Error(ErrorCode::kLengthMismatch, "words and labels differ in length");
  }
  const Subtokens sub = subtokenize(sentence.words, splitter, max_len);
  if (truncated) *truncated = sub.truncated;
  SlSequence seq;
  seq.first_index = sub.first_index;
  for (const auto& piece : sub.pieces) seq.ids.push_back(vocab.id(piece));
  seq.token_labels.resize(seq.ids.size());
  for (std::size_t w = 0; w < sub.kept_words; ++w) {
    const std::size_t end = w + 1 < sub.kept_words ? sub.first_index[w + 1] : seq.ids.size();
    const int label = labels.id(sentence.labels[w]);
    for (std::size_t i = sub.first_index[w]; i < end; ++i) seq.token_labels[i] = label;
  }
  return seq;
}

TokenBatch pad_batch(const std::vector<std::span<const int>>& sequences, int pad_id) {
  TokenBatch tb;
  tb.batch = sequences.size();
  for (auto s : sequences) tb.length = std::max(tb.length, s.size());
  tb.ids.assign(tb.batch * tb.length, pad_id);
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    std::copy(sequences[b].begin(), sequences[b].end(), tb.ids.begin() + static_cast<std::ptrdiff_t>(b * tb.length));
    tb.valid_lens.push_back(sequences[b].size());
  }
  return tb;
}

LossBatch make_sl_batch(std::span<const SlSequence> sequences, int pad_id) {
  std::vector<std::span<const int>> views;
  for (const auto& s : sequences) views.emplace_back(s.ids);
  LossBatch lb;
  lb.tokens = pad_batch(views, pad_id);
  for (std::size_t b = 0; b < sequences.size(); ++b) {
    for (std::size_t pos : sequences[b].first_index) {
      lb.targets.push_back({b, pos, sequences[b].token_labels[pos]});
    }
  }
  return lb;
}

LossBatch make_clm_batch(std::span<const std::vector<int>> blocks, int pad_id) {
  std::vector<std::span<const int>> views;
  for (const auto& s : blocks) views.emplace_back(s);
  LossBatch lb;
  lb.tokens = pad_batch(views, pad_id);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t t = 0; t + 1 < blocks[b].size(); ++t) lb.targets.push_back({b, t, blocks[b][t + 1]});
  }
  return lb;
}

std::vector<std::vector<int>> pack_blocks(std::span<const std::vector<int>> streams,
                                          std::size_t block_size) {
  if (block_size < 2) throw Error(ErrorCode::kInvalidLength, "block size must be >= 2");
  std::vector<std::vector<int>> blocks;
  std::vector<int> current;
  current.reserve(block_size);
  for (const auto& stream : streams) {
    for (int id : stream) {
      current.push_back(id);
      if (current.size() == block_size) {
        blocks.push_back(std::move(current));
        current = {};
        current.reserve(block_size);
      }
    }
  }
  return blocks;
}

MlmSample mlm_corrupt(std::span<const int> block, double prob, const Vocab& vocab,
                      std::mt19937_64& rng) {
  const int mask = vocab.mask_id();
  const int first = vocab.first_regular_id();
  const int last = static_cast<int>(vocab.size()) - 1;
  if (first > last) throw Error(ErrorCode::kInvalidSpec, "vocabulary has no ordinary pieces");
  std::bernoulli_distribution select(prob);
  std::uniform_real_distribution<double> action(0.0, 1.0);
  std::uniform_int_distribution<int> random_piece(first, last);
  MlmSample out;
  out.inputs.assign(block.begin(), block.end());
  for (std::size_t i = 0; i < block.size(); ++i) {
    if (!select(rng)) continue;
    out.positions.push_back(i);
    out.targets.push_back(block[i]);
    const double a = action(rng);
    if (a < 0.8) {
      out.inputs[i] = mask;
    } else if (a < 0.9) {
      out.inputs[i] = random_piece(rng);
    }
  }
  if (out.positions.empty()) throw Error(ErrorCode::kNothingSelected, "no position selected for MLM");
  return out;
}

LossBatch make_mlm_batch(std::span<const MlmSample> samples, int pad_id) {
  std::vector<std::span<const int>> views;
  for (const auto& s : samples) views.emplace_back(s.inputs);
  LossBatch lb;
  lb.tokens = pad_batch(views, pad_id);
  for (std::size_t b = 0; b < samples.size(); ++b) {
    for (std::size_t i = 0; i < samples[b].positions.size(); ++i) {
      lb.targets.push_back({b, samples[b].positions[i], samples[b].targets[i]});
    }
  }
  return lb;
}

std::vector<std::vector<std::string>> read_corpus(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    auto words = split_ws(line);
    if (!words.empty()) out.push_back(std::move(words));
  }
  if (out.empty()) throw Error(ErrorCode::kEmptyFile, path.string());
  return out;
}

std::vector<std::vector<int>> encode_corpus(const std::vector<std::vector<std::string>>& sentences,
                                            const Splitter& splitter, const Vocab& vocab) {
  std::vector<std::vector<int>> out;
  out.reserve(sentences.size());
  for (const auto& words : sentences) {
    std::vector<int> ids;
    for (const auto& w : words) {
      for (const auto& piece : splitter(w)) ids.push_back(vocab.id(piece));
    }
    ids.push_back(vocab.eos_id());
    out.push_back(std::move(ids));
  }
  return out;
}

}  // namespace unmask
