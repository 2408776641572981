#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "alab/config.hpp"
#include "alab/experiments.hpp"
#include "helpers.hpp"

namespace alab {
namespace {

io::json tiny_plan(const std::string& name, const std::string& method) {
  io::json p = io::json::parse(R"({
    "schema": "plan-v1",
    "family": {"n": 6, "n_eq": 3, "n_ineq": 3, "k": 2, "seed": 1},
    "network": {"depth": 1, "width": 8},
    "stage1": {"n_samples": 16},
    "stage2": {"epochs_max": 2, "eval_every": 1, "batch_size": 8},
    "stage3": {"epochs": 2, "eval_every": 1, "batch_size": 8},
    "seeds": [0, 1],
    "n_val": 8,
    "n_test": 8
  })");
  p["name"] = name;
  p["stage3"]["method"] = method;
  return p;
}

template <typename Parse>
std::string error_of(Parse&& parse) {
  try {
    parse();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(Experiments, SweepParseErrorsNameThePath) {
  io::json doc = {{"schema", "sweep-v1"}, {"plan", tiny_plan("q", "penalty")}, {"tiers", {"cheap", "gold"}}};
  EXPECT_NE(error_of([&] { parse_sweep(doc); }).find("sweep.tiers"), std::string::npos);
  doc["tiers"] = {"cheap"};
  doc["extra"] = 1;
  EXPECT_NE(error_of([&] { parse_sweep(doc); }).find("sweep.extra"), std::string::npos);
  doc.erase("extra");
  doc["plan"]["stage2"]["bogus"] = 1;
  EXPECT_NE(error_of([&] { parse_sweep(doc); }).find("sweep.plan.stage2.bogus"), std::string::npos);
  doc["plan"] = 5;
  EXPECT_NE(error_of([&] { parse_sweep(doc); }).find("sweep.plan"), std::string::npos);
}

TEST(Experiments, SweepPlanPathResolvesAgainstTheFile) {
  const auto dir = test::temp_dir("sweep-cfg");
  io::write_json(dir / "plan.json", tiny_plan("q", "dc3"));
  io::write_json(dir / "sweep.json", {{"schema", "sweep-v1"}, {"plan", "plan.json"}, {"sample_counts", {4, 8, 16}}});
  const SweepConfig cfg = load_sweep(dir / "sweep.json");
  EXPECT_EQ(cfg.plan.stage3.method, SslMethod::dc3);
  EXPECT_EQ(cfg.sample_counts, (std::vector<std::size_t>{4, 8, 16}));
  EXPECT_NE(error_of([&] { load_sweep(dir / "missing.json"); }).find("missing.json"), std::string::npos);
}

TEST(Experiments, DiagnoseParse) {
  io::json doc = {{"schema", "diagnose-v1"},
                  {"plan", tiny_plan("d", "penalty")},
                  {"n_oracle", 5},
                  {"basin", {{"radii", {0.1, 0.2}}, {"tol", 0.1}}}};
  const DiagnoseConfig cfg = parse_diagnose(doc);
  EXPECT_EQ(cfg.n_oracle, 5u);
  EXPECT_EQ(cfg.basin.radii, (std::vector<double>{0.1, 0.2}));
  EXPECT_EQ(cfg.basin.tol, 0.1);
  EXPECT_EQ(cfg.basin.seeds, (std::vector<std::uint64_t>{0, 1}));
  doc["basin"]["spread"] = 2;
  EXPECT_NE(error_of([&] { parse_diagnose(doc); }).find("diagnose.basin.spread"), std::string::npos);
  doc["basin"].erase("spread");
  doc["schema"] = "sweep-v1";
  EXPECT_NE(error_of([&] { parse_diagnose(doc); }).find("diagnose.schema"), std::string::npos);
}

TEST(Experiments, QualityCsvHasOneRowPerTier) {
  QualityRow a;
  a.tier = BudgetTier::cheap;
  a.seed_merits = {3.0, 1.0, 2.0};
  a.mean_merit = 2.0;
  QualityRow b;
  b.tier = BudgetTier::oracle;
  const std::string csv = quality_csv({a, b});
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "tier,seeds_ok,label_median_merit,mean_merit,max_merit,seed_min_merit,seed_max_merit");
  EXPECT_NE(csv.find("\ncheap,3,0,2,0,1,3\n"), std::string::npos) << csv;
  EXPECT_NE(csv.find("\noracle,0,"), std::string::npos) << csv;
}

TEST(Experiments, ProbeParametersAreDisjointFromTraining) {
  const StagePlan plan = parse_plan(tiny_plan("p", "penalty"));
  const ProblemFamily f = resolve_family(plan);
  const Matrix probe = probe_parameters(f, plan, 5);
  const Matrix train = sample_parameters(f, 0, 16);
  for (std::size_t a = 0; a < probe.rows(); ++a) {
    for (std::size_t b = 0; b < train.rows(); ++b) EXPECT_GT(dist2(probe.row(a), train.row(b)), 0.0);
  }
}

TEST(Experiments, MergeReportsAveragesSeeds) {
  const auto root = test::temp_dir("merge");
  run_pipeline(parse_plan(tiny_plan("pen", "penalty")), root / "pen");
  run_pipeline(parse_plan(tiny_plan("dc", "dc3")), root / "dc");
  const auto one = merge_reports({root / "pen"}, root / "one");
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].seeds_ok, 2u);
  EXPECT_EQ(one[0].method, "penalty+warm");
  const auto two = merge_reports({root / "pen", root / "dc"}, root / "two");
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[1].method, "dc3+warm");
  EXPECT_TRUE(std::filesystem::exists(root / "two" / "table1.csv"));
  EXPECT_TRUE(std::filesystem::exists(root / "two" / "ledger.csv"));
  EXPECT_EQ(two[0].test.mean_merit, one[0].test.mean_merit);
  const auto& t = two[1].ledger;
  EXPECT_NEAR(t.total_s, t.generation_s + t.supervised_s + t.self_supervised_s, 1e-12 * (1.0 + t.total_s));
  // DC3 outputs satisfy the equalities.
  EXPECT_LE(two[1].test.max_eq_l1, 1e-8);
  std::size_t lines = 0;
  std::ifstream in(root / "two" / "table1.csv");
  for (std::string line; std::getline(in, line);) ++lines;
  EXPECT_EQ(lines, 3u);
}

}  // namespace
}  // namespace alab
