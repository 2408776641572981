#include <gtest/gtest.h>

#include <fstream>

#include "alab/config.hpp"
#include "alab/pipeline.hpp"
#include "helpers.hpp"

namespace alab {
namespace {

io::json tiny_plan_doc() {
  return io::json::parse(R"({
    "schema": "plan-v1",
    "name": "tiny",
    "family": {"n": 6, "n_eq": 3, "n_ineq": 3, "k": 2, "seed": 1},
    "network": {"depth": 1, "width": 8},
    "stage1": {"n_samples": 24, "tier": "cheap"},
    "stage2": {"epochs_max": 4, "eval_every": 2, "batch_size": 8},
    "stage3": {"method": "penalty", "epochs": 2, "eval_every": 1, "batch_size": 8},
    "seeds": [0, 1],
    "n_val": 10,
    "n_test": 10
  })");
}

std::string config_error(const io::json& doc) {
  try {
    parse_plan(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

TEST(Pipeline, ParseErrorsNameThePath) {
  io::json doc = tiny_plan_doc();
  doc["stage2"]["epochs"] = 3;
  EXPECT_NE(config_error(doc).find("plan.stage2.epochs"), std::string::npos) << config_error(doc);

  doc = tiny_plan_doc();
  doc["stage1"]["tier"] = "platinum";
  EXPECT_NE(config_error(doc).find("plan.stage1.tier"), std::string::npos) << config_error(doc);

  doc = tiny_plan_doc();
  doc["stage1"]["enabled"] = false;
  EXPECT_NE(config_error(doc).find("plan.stage2"), std::string::npos) << config_error(doc);

  doc = tiny_plan_doc();
  doc["stage3"]["method"] = "magic";
  EXPECT_NE(config_error(doc).find("plan.stage3.method"), std::string::npos) << config_error(doc);

  doc = tiny_plan_doc();
  doc["schema"] = "plan-v0";
  EXPECT_NE(config_error(doc).find("plan.schema"), std::string::npos) << config_error(doc);

  doc = tiny_plan_doc();
  doc["stage2"]["eval_every"] = 10;
  EXPECT_NE(config_error(doc).find("plan.stage2.eval_every"), std::string::npos) << config_error(doc);
}

TEST(Pipeline, PlanJsonRoundTrip) {
  const StagePlan p = parse_plan(tiny_plan_doc());
  EXPECT_EQ(p.family.dims.n, 6u);
  EXPECT_EQ(p.seeds, (std::vector<std::uint64_t>{0, 1}));
  const io::json j = to_json(p);
  EXPECT_EQ(to_json(parse_plan(j)), j);
}

TEST(Pipeline, MethodWeightsAreValid) {
  for (auto m : {SslMethod::penalty, SslMethod::adaptive_penalty, SslMethod::dc3}) {
    EXPECT_NO_THROW(method_weights(m).validate());
    EXPECT_EQ(parse_method(method_name(m)), m);
  }
  EXPECT_TRUE(method_weights(SslMethod::adaptive_penalty).adaptive.has_value());
}

TEST(Pipeline, EvaluationStreamsAreDisjoint) {
  const StagePlan p = parse_plan(tiny_plan_doc());
  const ProblemFamily f = resolve_family(p);
  const Matrix val = validation_parameters(f, p), test = test_parameters(f, p);
  const Matrix train = sample_parameters(f, 0, 24);
  for (std::size_t a = 0; a < val.rows(); ++a) {
    for (std::size_t b = 0; b < test.rows(); ++b) EXPECT_GT(dist2(val.row(a), test.row(b)), 0.0);
    for (std::size_t b = 0; b < train.rows(); ++b) EXPECT_GT(dist2(val.row(a), train.row(b)), 0.0);
  }
}

TEST(Pipeline, PretrainReturnsTheMinimumMeritNetwork) {
  const ProblemFamily f = test::tiny_family();
  const Matrix xs = sample_parameters(f, 0, 16), val = sample_parameters(f, 0, 8, 1'000'000'000);
  Matrix labels(16, f.n());
  for (std::size_t b = 0; b < 16; ++b) std::copy(f.anchor.begin(), f.anchor.end(), labels.row(b).begin());
  Stage2Plan plan;
  plan.epochs_max = 6;
  plan.eval_every = 2;
  plan.patience = 0;
  plan.batch_size = 4;
  const PretrainResult r = pretrain_with_merit_stop(f, xs, labels, val, plan, mlp(f.n_eq(), 1, 8, f.n()), 0);
  ASSERT_FALSE(r.log.empty());
  double best = r.log.front().val.mean_merit;
  for (const auto& pt : r.log) best = std::min(best, pt.val.mean_merit);
  EXPECT_EQ(r.best_merit, best);
  const MeritReport again = evaluate_model(f, r.best, val, {}, {});
  EXPECT_EQ(again.mean_merit, best);
  EXPECT_EQ(r.epochs_run, 6u);
}

class TinyRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_a = test::temp_dir("run-a");
    dir_b = test::temp_dir("run-b");
    const StagePlan p = parse_plan(tiny_plan_doc());
    result_a = run_pipeline(p, dir_a);
    run_pipeline(p, dir_b);
  }
  static inline std::filesystem::path dir_a, dir_b;
  static inline PipelineResult result_a;
};

TEST_F(TinyRun, AllSeedsSucceedAndLedgerSums) {
  ASSERT_EQ(result_a.seeds.size(), 2u);
  for (const auto& s : result_a.seeds) {
    EXPECT_TRUE(s.ok) << s.error;
    const auto& t = s.ledger;
    EXPECT_EQ(t.total_s, t.generation_s + t.supervised_s + t.self_supervised_s);
    EXPECT_GE(t.generation_s, 0.0);
  }
}

TEST_F(TinyRun, RerunIsByteIdentical) {
  for (const char* file : {"report.csv", "plan.json", "seed-0/final.json", "seed-1/final.bin"}) {
    ASSERT_TRUE(std::filesystem::exists(dir_a / file)) << file;
    EXPECT_EQ(slurp(dir_a / file), slurp(dir_b / file)) << file;
  }
}

TEST_F(TinyRun, ManifestDetectsTampering) {
  EXPECT_NO_THROW(verify_run_manifest(dir_b));
  {
    std::ofstream out(dir_b / "report.csv", std::ios::app);
    out << "x\n";
  }
  try {
    verify_run_manifest(dir_b);
    FAIL() << "tampering not detected";
  } catch (const io::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("report.csv"), std::string::npos) << e.what();
  }
}

TEST(Pipeline, LedgerCsvAndJson) {
  TimeLedger t{1.5, 2.25, 3.0, 0.0};
  t.finalize();
  EXPECT_EQ(t.total_s, 6.75);
  const TimeLedger back = time_ledger_from_json(to_json(t));
  EXPECT_EQ(back.total_s, t.total_s);
  EXPECT_EQ(back.supervised_s, 2.25);
  EXPECT_NE(ledger_csv_header().find("total"), std::string::npos);
  EXPECT_EQ(ledger_csv_row("r", t).substr(0, 2), "r,");
}

}  // namespace
}  // namespace alab
