#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "mcl/report.hpp"
#include "test_util.hpp"

using namespace mcl;

namespace {

RunRecord fake(Method m, bool momentum, std::uint64_t seed, double cil, double til, bool ok = true) {
  RunRecord r;
  r.config = mcl::testing::tiny_config();
  r.config.method = m;
  r.config.momentum = momentum;
  r.seed = seed;
  r.final_class_il = cil;
  r.final_task_il = til;
  if (!ok) r.status = "failed";
  return r;
}

}  // namespace

TEST(MeanStd, PopulationStatistics) {
  const auto one = mean_std({42.0});
  EXPECT_EQ(one.mean, 42.0);
  EXPECT_EQ(one.std, 0.0);
  EXPECT_EQ(fmt_mean_std(one.mean, one.std), "42.00 ± 0.00");
  const auto three = mean_std({1.0, 2.0, 3.0});
  EXPECT_EQ(fmt_mean_std(three.mean, three.std), "2.00 ± 0.82");
  EXPECT_THROW(mean_std({}), ContractError);
}

TEST(Summarize, GroupsBySettingAndSkipsFailures) {
  const std::vector<RunRecord> recs{fake(Method::sgd, false, 0, 10, 50), fake(Method::sgd, false, 1, 20, 70),
                                    fake(Method::sgd, true, 0, 30, 80), fake(Method::sgd, true, 1, 0, 0, false),
                                    fake(Method::derpp, true, 0, 60, 90)};
  std::size_t failed = 0;
  const auto cells = summarize(recs, &failed);
  EXPECT_EQ(failed, 1u);
  ASSERT_EQ(cells.size(), 6u);
  EXPECT_EQ(cells[0].method, "sgd");
  EXPECT_FALSE(cells[0].momentum);
  EXPECT_EQ(cells[0].protocol, EvalProtocol::class_il);
  EXPECT_EQ(cells[0].mean, 15.0);
  EXPECT_EQ(cells[0].std, 5.0);
  EXPECT_EQ(cells[0].n, 2u);
  EXPECT_EQ(cells[2].n, 1u);  // the failed seed is not averaged in
  EXPECT_EQ(cells[4].method, "derpp(20)");
}

TEST(Summarize, CsvReloadReproducesTable) {
  const std::vector<RunRecord> recs{fake(Method::oewc, false, 0, 33.3333333333, 60), fake(Method::oewc, false, 1, 35, 61),
                                    fake(Method::oewc, true, 0, 40.125, 70.5)};
  const auto cells = summarize(recs);
  const auto reloaded = parse_summary_csv(summary_csv(cells));
  EXPECT_EQ(reloaded, cells);
  EXPECT_EQ(summary_table(reloaded), summary_table(cells));
}

TEST(Summarize, TableLayout) {
  const auto table = summary_table(summarize({fake(Method::sgd, true, 0, 12.345, 67.891)}));
  EXPECT_NE(table.find("Class-IL"), std::string::npos);
  EXPECT_NE(table.find("12.35 ± 0.00"), std::string::npos);
  EXPECT_NE(table.find("67.89 ± 0.00"), std::string::npos);
  EXPECT_NE(table.find("yes"), std::string::npos);
}

TEST(Summarize, MalformedCsv) { EXPECT_THROW(parse_summary_csv("header\nsgd,no,class_il,1\n"), ParseError); }

TEST(Ablation, CsvAndTable) {
  std::vector<AblationRow> rows;
  for (const char* v : {"absent", "10"})
    for (std::uint64_t s : {0, 1}) rows.push_back({v, s, "sgd", s == 0 ? 40.0 : 50.0, 80.0, true, {}, {}});
  rows.push_back({"100", 0, "sgd", 0, 0, false, "boom", {}});
  const auto csv = ablation_csv(rows, Knob::restart_freq);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "restart_freq,seed,method,status,class_il,task_il");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  const auto table = ablation_table(rows, Knob::restart_freq);
  EXPECT_NE(table.find("45.00 ± 5.00"), std::string::npos);
  EXPECT_NE(table.find("failed"), std::string::npos);
}
