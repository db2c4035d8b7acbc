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

#include "unmask/error.h"

namespace unmask {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNonBinaryCode: return "NonBinaryCode";
    case ErrorCode::kIndivisibleBlockCount: return "IndivisibleBlockCount";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kInvalidLength: return "InvalidLength";
    case ErrorCode::kVocabOverflow: return "VocabOverflow";
    case ErrorCode::kSequenceTooLong: return "SequenceTooLong";
    case ErrorCode::kMissingHead: return "MissingHead";
    case ErrorCode::kNoContributingPositions: return "NoContributingPositions";
    case ErrorCode::kTargetNotFound: return "TargetNotFound";
    case ErrorCode::kManifestMismatch: return "ManifestMismatch";
    case ErrorCode::kCorruptTensor: return "CorruptTensor";
    case ErrorCode::kInvalidSpec: return "InvalidSpec";
    case ErrorCode::kRaggedColumns: return "RaggedColumns";
    case ErrorCode::kEmptyFile: return "EmptyFile";
    case ErrorCode::kOverlappingSpans: return "OverlappingSpans";
    case ErrorCode::kInvalidSpan: return "InvalidSpan";
    case ErrorCode::kEmptyWord: return "EmptyWord";
    case ErrorCode::kNothingSelected: return "NothingSelected";
    case ErrorCode::kIo: return "Io";
    case ErrorCode::kParse: return "Parse";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kUnnormalizedInput: return "UnnormalizedInput";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kIncompleteGrid: return "IncompleteGrid";
    case ErrorCode::kZeroVariance: return "ZeroVariance";
  }
  return "Unknown";
}

}  // namespace unmask
