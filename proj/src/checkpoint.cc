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

#include "unmask/checkpoint.h"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include "unmask/error.h"

namespace unmask {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kFormatVersion = 1;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out << text;
}

json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
  }
  return v;
}

}  // namespace

json spec_to_json(const ModelSpec& s) {
  return {{"n_blocks", s.n_blocks}, {"d_model", s.d_model},   {"n_heads", s.n_heads},
          {"d_ff", s.d_ff},         {"vocab_size", s.vocab_size}, {"max_len", s.max_len},
          {"dropout", s.dropout},   {"n_labels", s.n_labels}, {"lm_head", s.lm_head},
          {"norm_eps", s.norm_eps}, {"block_flavor", kBlockFlavor}};
}

ModelSpec spec_from_json(const json& j) {
  try {
    if (j.at("block_flavor").get<std::string>() != kBlockFlavor) {
      throw Error(ErrorCode::kInvalidSpec, "unsupported block flavor");
    }
    ModelSpec s;
    s.n_blocks = j.at("n_blocks");
    s.d_model = j.at("d_model");
    s.n_heads = j.at("n_heads");
    s.d_ff = j.at("d_ff");
    s.vocab_size = j.at("vocab_size");
    s.max_len = j.at("max_len");
    s.dropout = j.at("dropout");
    s.n_labels = j.at("n_labels");
    s.lm_head = j.at("lm_head");
    s.norm_eps = j.at("norm_eps");
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidSpec, std::string("model spec: ") + e.what());
  }
}

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir);
  const auto& model = ckpt.model;
  json lora = nullptr;
  if (model.lora()) {
    const auto& l = *model.lora();
    lora = {{"rank", l.rank}, {"alpha", l.alpha}, {"dropout", l.dropout}, {"targets", l.targets}};
  }
  const json spec = {{"format_version", kFormatVersion},
                     {"spec", spec_to_json(model.spec())},
                     {"lora", lora},
                     {"metadata",
                      {{"objective", ckpt.meta.objective},
                       {"step", ckpt.meta.step},
                       {"epoch", ckpt.meta.epoch},
                       {"seed", ckpt.meta.seed}}},
                     {"vocab", ckpt.vocab},
                     {"label_types", ckpt.label_types}};

  json manifest = json::array();
  std::vector<std::uint32_t> words;
  words.reserve(model.params().element_count());
  for (const auto& p : model.params()) {
    manifest.push_back({{"name", p.name},
                        {"shape", p.shape},
                        {"offset", words.size() * sizeof(float)},
                        {"trainable", p.trainable},
                        {"decay", p.decay}});
    for (float v : p.value) words.push_back(to_little(std::bit_cast<std::uint32_t>(v)));
  }
  write_text(dir / "spec.json", spec.dump(2) + "\n");
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  std::ofstream bin(dir / "tensors.bin", std::ios::binary);
  if (!bin) throw Error(ErrorCode::kIo, "cannot write " + (dir / "tensors.bin").string());
  bin.write(reinterpret_cast<const char*>(words.data()),
            static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const json spec = read_json(dir / "spec.json");
  const json manifest = read_json(dir / "manifest.json");
  Checkpoint ckpt;
  ModelSpec model_spec;
  std::optional<LoraSpec> lora;
  try {
    if (spec.at("format_version").get<int>() != kFormatVersion) {
      throw Error(ErrorCode::kInvalidSpec, "unsupported checkpoint format version");
    }
    model_spec = spec_from_json(spec.at("spec"));
    if (!spec.at("lora").is_null()) {
      const auto& l = spec.at("lora");
      lora = LoraSpec{l.at("rank"), l.at("alpha"), l.at("dropout"), l.at("targets")};
    }
    const auto& m = spec.at("metadata");
    ckpt.meta = {m.at("objective"), m.at("step"), m.at("epoch"), m.at("seed")};
    ckpt.vocab = spec.at("vocab").get<std::vector<std::string>>();
    ckpt.label_types = spec.at("label_types").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidSpec, (dir / "spec.json").string() + ": " + e.what());
  }

  std::ifstream bin(dir / "tensors.bin", std::ios::binary | std::ios::ate);
  if (!bin) throw Error(ErrorCode::kIo, "cannot open " + (dir / "tensors.bin").string());
  const auto file_bytes = static_cast<std::size_t>(bin.tellg());
  bin.seekg(0);
  std::vector<std::uint32_t> words(file_bytes / sizeof(std::uint32_t));
  bin.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));

  ParamSet<float> params;
  std::size_t expected_offset = 0;
  try {
    for (const auto& entry : manifest) {
      const std::string name = entry.at("name");
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const std::size_t offset = entry.at("offset");
      if (offset != expected_offset) {
        throw Error(ErrorCode::kCorruptTensor, "tensor " + name + " offset " +
                                                   std::to_string(offset) + ", expected " +
                                                   std::to_string(expected_offset));
      }
      const std::size_t n = shape_size(shape);
      if (offset + n * sizeof(float) > file_bytes) {
        throw Error(ErrorCode::kCorruptTensor, "tensor " + name + " runs past the end of tensors.bin");
      }
      if (params.contains(name)) {
        throw Error(ErrorCode::kManifestMismatch, "tensor " + name + " listed twice");
      }
      auto& p = params.add(name, shape, entry.at("decay").get<bool>());
      p.trainable = entry.at("trainable");
      for (std::size_t i = 0; i < n; ++i) {
        p.value[i] = std::bit_cast<float>(to_little(words[offset / sizeof(float) + i]));
      }
      expected_offset = offset + n * sizeof(float);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kManifestMismatch, (dir / "manifest.json").string() + ": " + e.what());
  }
  if (expected_offset != file_bytes) {
    throw Error(ErrorCode::kCorruptTensor, "tensors.bin holds " + std::to_string(file_bytes) +
                                               " bytes, manifest describes " +
                                               std::to_string(expected_offset));
  }
  ckpt.model = Model<float>(model_spec, std::move(params), lora);
  return ckpt;
}

}  // namespace unmask
