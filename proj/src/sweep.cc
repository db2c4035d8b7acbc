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

#include "unmask/sweep.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <tuple>

#include "unmask/csv.h"
#include "unmask/error.h"
#include "unmask/masking.h"
#include "unmask/parallel.h"
#include "unmask/stats.h"

namespace unmask {

namespace {

int split_rank(std::string_view split) {
  if (split == kValidation) return 0;
  if (split == kTest) return 1;
  throw Error(ErrorCode::kInvalidConfig, "unknown split '" + std::string(split) + "'");
}

using GroupKey = std::pair<std::string, std::string>;

}  // namespace

std::vector<std::string> expand_codes(std::string_view list, std::size_t m) {
  if (list == "all") return gray_code_order(m);
  std::vector<std::string> codes;
  std::size_t pos = 0;
  for (;;) {
    const auto comma = list.find(',', pos);
    std::string code(list.substr(pos, comma - pos));
    UnmaskConfig::parse(code, code.empty() ? 1 : code.size());
    if (code.size() != m) {
      throw Error(ErrorCode::kInvalidConfig,
                  "code '" + code + "' has " + std::to_string(code.size()) + " groups, expected " +
                      std::to_string(m));
    }
    codes.push_back(std::move(code));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  std::sort(codes.begin(), codes.end(),
            [](const auto& a, const auto& b) { return gray_rank(a) < gray_rank(b); });
  codes.erase(std::unique(codes.begin(), codes.end()), codes.end());
  return codes;
}

std::vector<SweepResult> run_sweep(const std::string& task, const std::string& model_id,
                                   const std::vector<std::string>& codes,
                                   const std::vector<std::uint64_t>& seeds, const CellRunner& runner,
                                   std::size_t jobs) {
  if (codes.empty() || seeds.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "sweep needs at least one code and one seed");
  }
  std::vector<std::string> ordered = codes;
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const auto& a, const auto& b) { return gray_rank(a) < gray_rank(b); });
  std::vector<CellScores> scores(ordered.size() * seeds.size());
  parallel_for(scores.size(), jobs, [&](std::size_t i) {
    scores[i] = runner(ordered[i / seeds.size()], seeds[i % seeds.size()]);
  });
  std::vector<SweepResult> out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto& code = ordered[i / seeds.size()];
    const auto seed = seeds[i % seeds.size()];
    out.push_back({task, model_id, code, seed, std::string(kValidation), "micro_f1", scores[i].validation});
    out.push_back({task, model_id, code, seed, std::string(kTest), "micro_f1", scores[i].test});
  }
  return out;
}

std::vector<AggregateRow> aggregate(const std::vector<SweepResult>& results) {
  if (results.empty()) throw Error(ErrorCode::kIncompleteGrid, "no sweep results");
  std::vector<GroupKey> group_order;
  struct Group {
    std::set<std::string> configs;
    std::set<std::string> splits;
    std::set<std::uint64_t> seeds;
    std::map<std::tuple<std::string, std::string, std::uint64_t>, double> values;
  };
  std::map<GroupKey, Group> groups;
  for (const auto& r : results) {
    GroupKey key{r.task, r.model_id};
    if (!groups.count(key)) group_order.push_back(key);
    auto& g = groups[key];
    split_rank(r.split);
    if (!g.configs.empty() && g.configs.begin()->size() != r.config.size()) {
      throw Error(ErrorCode::kIncompleteGrid, "codes of different lengths in one sweep");
    }
    g.configs.insert(r.config);
    g.splits.insert(r.split);
    g.seeds.insert(r.seed);
    if (!g.values.emplace(std::make_tuple(r.config, r.split, r.seed), r.value).second) {
      throw Error(ErrorCode::kIncompleteGrid, "duplicate result for config " + r.config + ", seed " +
                                                  std::to_string(r.seed) + ", split " + r.split);
    }
  }

  std::vector<AggregateRow> rows;
  for (const auto& key : group_order) {
    const auto& g = groups.at(key);
    std::vector<std::string> configs(g.configs.begin(), g.configs.end());
    std::sort(configs.begin(), configs.end(),
              [](const auto& a, const auto& b) { return gray_rank(a) < gray_rank(b); });
    std::vector<std::string> splits(g.splits.begin(), g.splits.end());
    std::sort(splits.begin(), splits.end(),
              [](const auto& a, const auto& b) { return split_rank(a) < split_rank(b); });
    for (const auto& config : configs) {
      for (const auto& split : splits) {
        std::vector<double> values;
        for (auto seed : g.seeds) {
          auto it = g.values.find({config, split, seed});
          if (it == g.values.end()) {
            throw Error(ErrorCode::kIncompleteGrid, key.first + "/" + key.second + ": config " +
                                                        config + " lacks seed " +
                                                        std::to_string(seed) + " on " + split);
          }
          values.push_back(it->second);
        }
        const auto ms = mean_std(values);
        rows.push_back({key.first, key.second, config, split, ms.mean, ms.std, values.size()});
      }
    }
  }
  return rows;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error(ErrorCode::kLengthMismatch, "pearson needs two equal-length vectors of at least 2");
  }
  const auto mx = mean_std(x).mean;
  const auto my = mean_std(y).mean;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::kZeroVariance, "constant input to pearson");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace {

std::vector<AggregateRow> rows_for_split(const std::vector<AggregateRow>& rows, std::string_view split) {
  std::vector<AggregateRow> out;
  for (const auto& r : rows) {
    if (!out.empty() && (r.task != out[0].task || r.model_id != out[0].model_id)) {
      throw Error(ErrorCode::kInvalidConfig, "rows span more than one task/model");
    }
    if (r.split == split) out.push_back(r);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return gray_rank(a.config) < gray_rank(b.config); });
  return out;
}

}  // namespace

BestConfig best_config(const std::vector<AggregateRow>& rows, std::string_view split) {
  const auto cand = rows_for_split(rows, split);
  if (cand.empty()) throw Error(ErrorCode::kIncompleteGrid, "no rows for split " + std::string(split));
  const std::size_t m = cand[0].config.size();
  if (cand.size() != (std::size_t{1} << m)) {
    throw Error(ErrorCode::kIncompleteGrid, std::to_string(cand.size()) + " configs on " +
                                                std::string(split) + ", expected " +
                                                std::to_string(std::size_t{1} << m));
  }
  BestConfig best{cand[0].config, cand[0].mean, {}};
  double all_ones = 0.0;
  for (const auto& r : cand) {
    if (r.mean > best.mean) best = {r.config, r.mean, {}};
    if (r.config == std::string(m, '1')) all_ones = r.mean;
  }
  for (const auto& r : cand) {
    if (r.mean > all_ones) best.exceeding_all_ones.push_back(r.config);
  }
  return best;
}

double validation_test_pearson(const std::vector<AggregateRow>& rows) {
  const auto v = rows_for_split(rows, kValidation);
  const auto t = rows_for_split(rows, kTest);
  std::vector<double> x, y;
  for (std::size_t i = 0; i < v.size() && i < t.size(); ++i) {
    if (v[i].config != t[i].config) break;
    x.push_back(v[i].mean);
    y.push_back(t[i].mean);
  }
  if (x.size() != v.size() || x.size() != t.size()) {
    throw Error(ErrorCode::kIncompleteGrid, "validation and test configs differ");
  }
  return pearson(x, y);
}

nlohmann::json sweep_summary(const std::vector<AggregateRow>& rows) {
  std::vector<GroupKey> order;
  std::map<GroupKey, std::vector<AggregateRow>> groups;
  for (const auto& r : rows) {
    GroupKey key{r.task, r.model_id};
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(r);
  }
  nlohmann::json out = {{"std", "population"}, {"groups", nlohmann::json::array()}};
  for (const auto& key : order) {
    const auto& g = groups.at(key);
    nlohmann::json entry = {{"task", key.first}, {"model_id", key.second}};
    for (auto split : {kValidation, kTest}) {
      const auto b = best_config(g, split);
      entry["best"][std::string(split)] = {{"config", b.code}, {"mean", b.mean}};
      entry["exceed_all_ones"][std::string(split)] = b.exceeding_all_ones;
    }
    try {
      entry["rho"] = validation_test_pearson(g);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kZeroVariance) throw;
      entry["rho"] = nullptr;
    }
    out["groups"].push_back(std::move(entry));
  }
  return out;
}

constexpr std::string_view kResultsHeader = "task,model_id,config,seed,split,metric,value";
constexpr std::string_view kAggregateHeader = "task,model_id,config,split,mean,std,n_seeds";

void write_results_csv(std::ostream& out, const std::vector<SweepResult>& rows) {
  out << kResultsHeader << '\n';
  for (const auto& r : rows) {
    out << csv::field(r.task) << ',' << csv::field(r.model_id) << ',' << csv::field(r.config) << ','
        << r.seed << ',' << csv::field(r.split) << ',' << csv::field(r.metric) << ','
        << csv::format_double(r.value) << '\n';
  }
}

std::vector<SweepResult> read_results_csv(std::istream& in) {
  std::vector<SweepResult> rows;
  for (const auto& f : csv::read_rows(in, kResultsHeader)) {
    rows.push_back({f[0], f[1], f[2], csv::parse_size(f[3]), f[4], f[5], csv::parse_double(f[6])});
  }
  return rows;
}

void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows) {
  out << kAggregateHeader << '\n';
  for (const auto& r : rows) {
    out << csv::field(r.task) << ',' << csv::field(r.model_id) << ',' << csv::field(r.config) << ','
        << csv::field(r.split) << ',' << csv::format_double(r.mean) << ','
        << csv::format_double(r.std) << ',' << r.n_seeds << '\n';
  }
}

std::vector<AggregateRow> read_aggregate_csv(std::istream& in) {
  std::vector<AggregateRow> rows;
  for (const auto& f : csv::read_rows(in, kAggregateHeader)) {
    rows.push_back({f[0], f[1], f[2], f[3], csv::parse_double(f[4]), csv::parse_double(f[5]),
                    csv::parse_size(f[6])});
  }
  return rows;
}

}  // namespace unmask
