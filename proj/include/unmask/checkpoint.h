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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "unmask/model.h"

namespace unmask {

struct CheckpointMeta {
  std::string objective;  // "clm", "mlm" or "sl"
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::uint64_t seed = 0;

  bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
  Model<float> model;
  CheckpointMeta meta;
  std::vector<std::string> vocab;
  std::vector<std::string> label_types;
};

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

// Writes spec.json, manifest.json and tensors.bin (little-endian float32 in
// manifest order) into dir, creating it if needed.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);

// Throws ManifestMismatch when names or shapes disagree with the spec and
// CorruptTensor when offsets or the file length disagree with the manifest.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace unmask
