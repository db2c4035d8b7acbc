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
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace unmask {

struct SweepResult {
  std::string task;
  std::string model_id;
  std::string config;
  std::uint64_t seed = 0;
  std::string split;  // "validation" or "test"
  std::string metric = "micro_f1";
  double value = 0.0;

  bool operator==(const SweepResult&) const = default;
};

struct AggregateRow {
  std::string task;
  std::string model_id;
  std::string config;
  std::string split;
  double mean = 0.0;
  double std = 0.0;
  std::size_t n_seeds = 0;

  bool operator==(const AggregateRow&) const = default;
};

inline constexpr std::string_view kValidation = "validation";
inline constexpr std::string_view kTest = "test";

// "all" gives every code of length m; otherwise a comma-separated list. The
// result is deduplicated and sorted into Gray order. Throws NonBinaryCode or
// InvalidConfig on a code of the wrong length.
std::vector<std::string> expand_codes(std::string_view list, std::size_t m);

struct CellScores {
  double validation = 0.0;
  double test = 0.0;
};

// Fine-tunes and scores one (code, seed) cell with the same config for both splits.
using CellRunner = std::function<CellScores(const std::string& code, std::uint64_t seed)>;

// One cell per (code, seed), run on up to `jobs` threads. Any failed cell
// aborts the sweep. Rows come out in Gray order of code, then seed, then
// validation before test.
std::vector<SweepResult> run_sweep(const std::string& task, const std::string& model_id,
                                   const std::vector<std::string>& codes,
                                   const std::vector<std::uint64_t>& seeds, const CellRunner& runner,
                                   std::size_t jobs = 1);

// Mean and population std per (task, model_id, config, split), ordered by
// first appearance of (task, model_id), then Gray rank, then split. Throws
// IncompleteGrid unless every config has every seed for every split.
std::vector<AggregateRow> aggregate(const std::vector<SweepResult>& results);

// Sample Pearson coefficient. Throws LengthMismatch or ZeroVariance.
double pearson(std::span<const double> x, std::span<const double> y);

struct BestConfig {
  std::string code;
  double mean = 0.0;
  // Codes whose mean is strictly above the all-ones code, in Gray order.
  std::vector<std::string> exceeding_all_ones;
};

// Over the rows of one (task, model_id) and split: the highest mean, ties to
// the earlier Gray position. Throws IncompleteGrid.
BestConfig best_config(const std::vector<AggregateRow>& rows, std::string_view split = kValidation);

// Validation/test correlation of config means for one (task, model_id).
double validation_test_pearson(const std::vector<AggregateRow>& rows);

// Per (task, model_id): best configs and exceed lists for both splits, and rho.
nlohmann::json sweep_summary(const std::vector<AggregateRow>& rows);

// results.csv: task,model_id,config,seed,split,metric,value
void write_results_csv(std::ostream& out, const std::vector<SweepResult>& rows);
std::vector<SweepResult> read_results_csv(std::istream& in);
// aggregate.csv: task,model_id,config,split,mean,std,n_seeds
void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows);
std::vector<AggregateRow> read_aggregate_csv(std::istream& in);

}  // namespace unmask
