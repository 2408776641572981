#include <gtest/gtest.h>

#include <algorithm>

#include "alab/label_factory.hpp"
#include "helpers.hpp"

namespace alab {
namespace {

TEST(LabelFactory, BudgetValidationNamesTheField) {
  SolverBudget b;
  b.rho_growth = 0.5;
  try {
    b.validate();
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("budget.rho_growth"), std::string::npos) << e.what();
  }
  b = SolverBudget{};
  b.max_inner = 0;
  EXPECT_THROW(b.validate(), std::invalid_argument);
}

TEST(LabelFactory, TierNamesRoundTrip) {
  for (const BudgetTier t : kAllTiers) EXPECT_EQ(parse_tier(tier_name(t)), t);
  EXPECT_THROW(parse_tier("premium"), std::invalid_argument);
}

TEST(LabelFactory, TierBudgetsGrowMonotonically) {
  std::size_t prev = 0;
  for (const BudgetTier t : kAllTiers) {
    const SolverBudget b = tier_budget(t);
    EXPECT_NO_THROW(b.validate());
    EXPECT_GT(b.max_outer * b.max_inner, prev) << tier_name(t);
    prev = b.max_outer * b.max_inner;
  }
}

TEST(LabelFactory, RecordStatsMatchRecomputation) {
  const ProblemFamily f = test::desk_family();
  const Vector x = sample_parameter(f, 0, 0);
  const LabelRecord r = solve_instance(f, x, tier_budget(BudgetTier::low), 0);
  const SolutionStats s = solution_stats(f, r.y_hat, x, {});
  EXPECT_EQ(r.merit_at_eval_rho, s.merit);
  EXPECT_EQ(r.objective, s.objective);
  EXPECT_EQ(r.eq_l1, s.eq_l1);
  EXPECT_LE(r.iters_used, tier_budget(BudgetTier::low).max_outer * tier_budget(BudgetTier::low).max_inner);
  EXPECT_EQ(r.budget_id, tier_budget(BudgetTier::low).id);
}

TEST(LabelFactory, SolveIsDeterministicAndSeedSensitive) {
  const ProblemFamily f = test::desk_family();
  const Vector x = sample_parameter(f, 0, 3);
  const LabelRecord a = solve_instance(f, x, tier_budget(BudgetTier::cheap), 5);
  const LabelRecord b = solve_instance(f, x, tier_budget(BudgetTier::cheap), 5);
  const LabelRecord c = solve_instance(f, x, tier_budget(BudgetTier::cheap), 6);
  EXPECT_EQ(a.y_hat, b.y_hat);
  EXPECT_NE(a.y_hat, c.y_hat);
}

TEST(LabelFactory, LargerBudgetsGiveLowerMedianMerit) {
  const ProblemFamily f = test::desk_family();
  const Dataset cheap = build_dataset(f, 40, tier_budget(BudgetTier::cheap), 2);
  const Dataset mid = build_dataset(f, 40, tier_budget(BudgetTier::mid), 2);
  EXPECT_LT(mid.summary.median_merit, cheap.summary.median_merit);
  EXPECT_EQ(cheap.xs, mid.xs);  // same parameters, different budgets
}

TEST(LabelFactory, OracleLabelsAreMarkedAndConverge) {
  const ProblemFamily f = test::tiny_family();
  const Matrix xs = sample_parameters(f, 1, 4);
  const auto recs = oracle_solutions(f, xs, tier_budget(BudgetTier::oracle), 1);
  ASSERT_EQ(recs.size(), 4u);
  for (const auto& r : recs) {
    EXPECT_TRUE(r.oracle);
    EXPECT_TRUE(r.converged);
    EXPECT_LE(r.max_residual, tier_budget(BudgetTier::oracle).tol);
  }
}

TEST(LabelFactory, SummaryMedianAndRates) {
  std::vector<LabelRecord> recs(4);
  const double merits[] = {4.0, 1.0, 3.0, 2.0};
  for (std::size_t i = 0; i < 4; ++i) {
    recs[i].merit_at_eval_rho = merits[i];
    recs[i].converged = i < 3;
    recs[i].iters_used = 10 * i;
  }
  const DatasetSummary s = summarize(recs, 5);
  EXPECT_EQ(s.requested, 5u);
  EXPECT_EQ(s.produced, 4u);
  EXPECT_DOUBLE_EQ(s.median_merit, 2.5);
  EXPECT_DOUBLE_EQ(s.mean_merit, 2.5);
  EXPECT_DOUBLE_EQ(s.success_rate, 0.6);  // over requested instances
  EXPECT_DOUBLE_EQ(s.mean_iters, 15.0);
}

TEST(LabelFactory, PrefixKeepsLeadingSamples) {
  const ProblemFamily f = test::tiny_family();
  const Dataset ds = build_dataset(f, 10, tier_budget(BudgetTier::cheap), 0);
  const Dataset p = take_prefix(ds, 4);
  ASSERT_EQ(p.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < f.n(); ++j) EXPECT_EQ(p.ys(i, j), ds.ys(i, j));
  }
  // A smaller build is the prefix of a larger one.
  const Dataset small = build_dataset(f, 4, tier_budget(BudgetTier::cheap), 0);
  EXPECT_EQ(small.ys, p.ys);
}

TEST(LabelFactory, DatasetFilesRoundTripAndAreReproducible) {
  const auto dir = test::temp_dir("dataset");
  const ProblemFamily f = test::tiny_family();
  save_family(f, dir / "fam.json");
  const Dataset ds = build_dataset(f, 12, tier_budget(BudgetTier::low), 3);
  save_dataset(ds, dir / "a", dir / "fam.json");
  save_dataset(build_dataset(f, 12, tier_budget(BudgetTier::low), 3), dir / "b", dir / "fam.json");
  for (const char* name : {"dataset.json", "dataset.bin", "records.ndjson"}) {
    EXPECT_EQ(io::sha256_file(dir / "a" / name), io::sha256_file(dir / "b" / name)) << name;
  }
  const Dataset back = load_dataset(dir / "a", f);
  EXPECT_EQ(back.xs, ds.xs);
  EXPECT_EQ(back.ys, ds.ys);
  EXPECT_EQ(back.seed, ds.seed);
  EXPECT_EQ(back.budget.max_inner, ds.budget.max_inner);
  ASSERT_EQ(back.records.size(), ds.records.size());
  EXPECT_EQ(back.records[5].merit_at_eval_rho, ds.records[5].merit_at_eval_rho);
  EXPECT_DOUBLE_EQ(back.summary.median_merit, ds.summary.median_merit);
}

TEST(LabelFactory, LoadRejectsAnotherFamily) {
  const auto dir = test::temp_dir("dataset-family");
  const ProblemFamily f = test::tiny_family(1);
  save_family(f, dir / "fam.json");
  save_dataset(build_dataset(f, 3, tier_budget(BudgetTier::cheap), 0), dir / "d", dir / "fam.json");
  EXPECT_THROW(load_dataset(dir / "d", test::tiny_family(2)), std::exception);
}

}  // namespace
}  // namespace alab
