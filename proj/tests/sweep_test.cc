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

#include <atomic>
#include <cmath>
#include <random>
#include <map>
#include <set>
#include <sstream>

#include "test_util.h"
#include "unmask/masking.h"
#include "unmask/synthetic.h"

namespace unmask {
namespace {

// Raw-sum form, evaluated in long double.
double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  long double n = static_cast<long double>(x.size()), sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += static_cast<long double>(x[i]) * x[i];
    syy += static_cast<long double>(y[i]) * y[i];
    sxy += static_cast<long double>(x[i]) * y[i];
  }
  return static_cast<double>((n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy)));
}

std::vector<SweepResult> full_grid(std::size_t m, const std::function<double(const std::string&, std::uint64_t, bool)>& f) {
  std::vector<SweepResult> rows;
  for (const auto& code : gray_code_order(m)) {
    for (std::uint64_t seed = 120; seed < 125; ++seed) {
      rows.push_back({"ner", "tiny", code, seed, "validation", "micro_f1", f(code, seed, false)});
      rows.push_back({"ner", "tiny", code, seed, "test", "micro_f1", f(code, seed, true)});
    }
  }
  return rows;
}

TEST(Aggregate, MeanAndPopulationStd) {
  std::vector<SweepResult> rows;
  const double vals[] = {0.1, 0.2, 0.3, 0.4, 0.5};
  for (std::uint64_t s = 0; s < 5; ++s) {
    rows.push_back({"ner", "m", "01", 120 + s, "validation", "micro_f1", vals[s]});
  }
  const auto agg = aggregate(rows);
  ASSERT_EQ(agg.size(), 1u);
  EXPECT_NEAR(agg[0].mean, 0.3, 1e-15);
  EXPECT_NEAR(agg[0].std, std::sqrt(0.02), 1e-4);
  EXPECT_NEAR(agg[0].std, 0.1414, 1e-4);
  EXPECT_EQ(agg[0].n_seeds, 5u);
}

TEST(Aggregate, IncompleteGridIsRejected) {
  auto rows = full_grid(2, [](auto&, auto seed, bool) { return 0.01 * static_cast<double>(seed); });
  EXPECT_EQ(aggregate(rows).size(), 8u);
  auto missing = rows;
  missing.erase(missing.begin() + 3);
  EXPECT_ERROR_CODE(aggregate(missing), ErrorCode::kIncompleteGrid);
  auto duplicate = rows;
  duplicate.push_back(rows.front());
  EXPECT_ERROR_CODE(aggregate(duplicate), ErrorCode::kIncompleteGrid);
  auto mixed = rows;
  for (auto& r : mixed) {
    if (r.config == "11") r.config = "111";
  }
  EXPECT_ERROR_CODE(aggregate(mixed), ErrorCode::kIncompleteGrid);
}

TEST(Pearson, MatchesOracleOnRandomPairs) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(16), y(16);
    for (std::size_t i = 0; i < 16; ++i) {
      x[i] = u(rng);
      y[i] = 0.5 * x[i] + u(rng);
    }
    EXPECT_NEAR(pearson(x, y), pearson_oracle(x, y), 1e-12);
  }
}

TEST(Pearson, IdentityNegationAndAffineInvariance) {
  std::vector<double> x{0.1, 0.5, 0.2, 0.9, 0.4}, neg, aff;
  for (double v : x) {
    neg.push_back(-v);
    aff.push_back(3.0 * v + 7.0);
  }
  EXPECT_NEAR(pearson(x, x), 1.0, 1e-12);
  EXPECT_NEAR(pearson(x, neg), -1.0, 1e-12);
  std::vector<double> y{0.3, 0.1, 0.8, 0.7, 0.2}, y_aff;
  for (double v : y) y_aff.push_back(0.25 * v - 2.0);
  EXPECT_NEAR(pearson(aff, y_aff), pearson(x, y), 1e-12);
  EXPECT_NEAR(pearson(x, aff), 1.0, 1e-12);
}

TEST(Pearson, DegenerateInputs) {
  std::vector<double> a{1, 2, 3}, b{1, 2}, flat{4, 4, 4};
  EXPECT_ERROR_CODE(pearson(a, b), ErrorCode::kLengthMismatch);
  EXPECT_ERROR_CODE(pearson(a, flat), ErrorCode::kZeroVariance);
}

TEST(BestConfig, HighestMeanAndExceedList) {
  // Mean of code c = popcount-weighted score with 0101 on top.
  auto score = [](const std::string& code, std::uint64_t seed, bool test) {
    double v = 0.5;
    if (code == "0101") v = 0.9;
    if (code == "1111") v = 0.7;
    if (code == "0011") v = 0.8;
    return v + 0.001 * (static_cast<double>(seed) - 122.0) + (test ? 0.01 : 0.0);
  };
  const auto agg = aggregate(full_grid(4, score));
  ASSERT_EQ(agg.size(), 32u);
  const auto best = best_config(agg, kValidation);
  EXPECT_EQ(best.code, "0101");
  EXPECT_NEAR(best.mean, 0.9, 1e-12);
  std::set<std::string> exceed(best.exceeding_all_ones.begin(), best.exceeding_all_ones.end());
  EXPECT_EQ(exceed, (std::set<std::string>{"0101", "0011"}));
  EXPECT_EQ(best_config(agg, kTest).code, "0101");
  EXPECT_NEAR(validation_test_pearson(agg), 1.0, 1e-12);
}

TEST(BestConfig, TiesGoToEarlierGrayPosition) {
  auto score = [](const std::string& code, std::uint64_t, bool) {
    return code == "10" || code == "11" ? 0.6 : 0.2;
  };
  const auto agg = aggregate(full_grid(2, score));
  // Gray order 00, 01, 11, 10: 11 comes before 10.
  const auto best = best_config(agg);
  EXPECT_EQ(best.code, "11");
  EXPECT_TRUE(best.exceeding_all_ones.empty());
  std::vector<AggregateRow> partial(agg.begin(), agg.begin() + 4);
  EXPECT_ERROR_CODE(best_config(partial), ErrorCode::kIncompleteGrid);
}

TEST(Summary, ReportsBothSplitsAndPopulationStd) {
  auto score = [](const std::string& code, std::uint64_t seed, bool test) {
    return 0.1 * static_cast<double>(gray_rank(code)) + 0.01 * static_cast<double>(seed % 3) +
           (test ? 0.02 * static_cast<double>(code[0] == '1') : 0.0);
  };
  const auto summary = sweep_summary(aggregate(full_grid(2, score)));
  EXPECT_EQ(summary["std"], "population");
  ASSERT_EQ(summary["groups"].size(), 1u);
  const auto& g = summary["groups"][0];
  EXPECT_EQ(g["task"], "ner");
  EXPECT_EQ(g["best"]["validation"]["config"], "10");
  EXPECT_EQ(g["best"]["test"]["config"], "10");
  EXPECT_TRUE(g["rho"].is_number());
}

TEST(ExpandCodes, AllListsAndValidation) {
  EXPECT_EQ(expand_codes("all", 4), gray_code_order(4));
  EXPECT_EQ(expand_codes("all", 4).size(), 16u);
  EXPECT_EQ(expand_codes("1111,0000,1111,0001", 4), (std::vector<std::string>{"0000", "0001", "1111"}));
  EXPECT_ERROR_CODE(expand_codes("012", 3), ErrorCode::kNonBinaryCode);
  EXPECT_ERROR_CODE(expand_codes("01", 3), ErrorCode::kInvalidConfig);
}

TEST(RunSweep, OrderingAndParallelCompleteness) {
  const auto codes = expand_codes("all", 4);
  std::atomic<int> calls{0};
  CellRunner runner = [&](const std::string& code, std::uint64_t seed) {
    ++calls;
    const double v = static_cast<double>(std::stoul(code, nullptr, 2)) + 0.001 * static_cast<double>(seed);
    return CellScores{v, -v};
  };
  for (std::size_t jobs : {1u, 3u}) {
    calls = 0;
    const auto rows = run_sweep("ner", "tiny", codes, std::vector<std::uint64_t>{120, 121, 122, 123, 124}, runner, jobs);
    EXPECT_EQ(calls, 80);
    ASSERT_EQ(rows.size(), 160u);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& r = rows[i];
      EXPECT_EQ(r.config, codes[i / 10]);
      EXPECT_EQ(r.seed, 120 + (i % 10) / 2);
      EXPECT_EQ(r.split, i % 2 == 0 ? "validation" : "test");
      const double v = static_cast<double>(std::stoul(r.config, nullptr, 2)) + 0.001 * static_cast<double>(r.seed);
      EXPECT_EQ(r.value, i % 2 == 0 ? v : -v);
    }
    EXPECT_EQ(aggregate(rows).size(), 32u);
  }
}

TEST(RunSweep, FailingCellAbortsSweep) {
  CellRunner runner = [](const std::string& code, std::uint64_t) -> CellScores {
    if (code == "11") throw Error(ErrorCode::kNonFiniteLoss, "boom");
    return {0.5, 0.5};
  };
  EXPECT_ERROR_CODE(run_sweep("ner", "tiny", expand_codes("all", 2), {120, 121}, runner, 2),
                    ErrorCode::kNonFiniteLoss);
}

TEST(Csv, ResultsAndAggregateRoundTrip) {
  const auto rows = full_grid(2, [](auto& code, auto seed, bool test) {
    return 1.0 / 3.0 * static_cast<double>(gray_rank(code)) + 1e-17 * static_cast<double>(seed) + (test ? 0.1 : 0.0);
  });
  std::stringstream rs;
  write_results_csv(rs, rows);
  EXPECT_EQ(rs.str().substr(0, rs.str().find('\n')), "task,model_id,config,seed,split,metric,value");
  EXPECT_EQ(read_results_csv(rs), rows);

  const auto agg = aggregate(rows);
  std::stringstream as;
  write_aggregate_csv(as, agg);
  EXPECT_EQ(as.str().substr(0, as.str().find('\n')), "task,model_id,config,split,mean,std,n_seeds");
  EXPECT_EQ(read_aggregate_csv(as), agg);

  std::stringstream bad("task,model_id,config,split,mean,std,n_seeds\nner,m,01,validation,0.5\n");
  EXPECT_ERROR_CODE(read_aggregate_csv(bad), ErrorCode::kRaggedColumns);
  std::stringstream wrong_header("a,b\n");
  EXPECT_ERROR_CODE(read_aggregate_csv(wrong_header), ErrorCode::kParse);
}

TEST(Synthetic, LabelsDependOnNextWordOnly) {
  const auto data = make_next_word_task(200, 5);
  ASSERT_EQ(data.size(), 200u);
  std::map<std::string, std::size_t> class_of;
  for (std::size_t c = 0; c <= synthetic_types().size(); ++c) {
    for (std::size_t w = 0; w < 6; ++w) class_of[synthetic_word(c, w)] = c;
  }
  EXPECT_EQ(class_of.size(), 30u);
  std::size_t typed = 0;
  for (const auto& s : data) {
    ASSERT_GE(s.words.size(), 5u);
    ASSERT_LE(s.words.size(), 12u);
    ASSERT_EQ(s.words.size(), s.labels.size());
    for (std::size_t t = 0; t < s.words.size(); ++t) {
      std::string expect = "O";
      if (t + 1 < s.words.size() && class_of.at(s.words[t + 1]) != 0) {
        expect = "B-" + synthetic_types()[class_of.at(s.words[t + 1]) - 1];
        ++typed;
      }
      EXPECT_EQ(s.labels[t], expect);
    }
  }
  EXPECT_GT(typed, 200u);
  EXPECT_EQ(make_next_word_task(200, 5), data);
  EXPECT_NE(make_next_word_task(200, 6), data);
}

}  // namespace
}  // namespace unmask
