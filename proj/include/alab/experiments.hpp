#pragma once

// Multi-run experiments over a base plan (label quality and label quantity
// sweeps) and the merge of finished run directories into summary tables.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "alab/diagnostics.hpp"
#include "alab/pipeline.hpp"

namespace alab {

// sweep-v1: {"schema": "sweep-v1", "plan": <plan-v1 object or path>,
//            "tiers": [...], "sample_counts": [...], "n_probe": 100}
struct SweepConfig {
  StagePlan plan;
  std::vector<BudgetTier> tiers;
  std::vector<std::size_t> sample_counts;
  std::size_t n_probe = 100;  // oracle-labelled probe inputs for the scaling fit
};

SweepConfig parse_sweep(const io::json& doc, const std::filesystem::path& base_dir = ".");
SweepConfig load_sweep(const std::filesystem::path& path);

struct QualityRow {
  BudgetTier tier = BudgetTier::cheap;
  std::vector<double> seed_merits;  // mean test merit of each successful seed
  std::vector<double> seed_max_merits;
  double label_median_merit = 0.0;  // stage-1 summary, averaged over seeds
  double mean_merit = 0.0;
  double max_merit = 0.0;
};

/// Runs the full pipeline once per tier into <out>/<tier>/ and writes
/// <out>/quality.csv (one row per tier, in the given order).
std::vector<QualityRow> sweep_quality(const SweepConfig& cfg, const std::filesystem::path& out);
std::string quality_csv(const std::vector<QualityRow>& rows);

/// Label-count sweep through fit_sample_scaling; writes quantity.csv and
/// scaling.json under <out>. Throws ConfigError on an empty count list.
ScalingFit sweep_quantity(const SweepConfig& cfg, const std::filesystem::path& out);

/// Probe inputs of the scaling fit: a parameter range disjoint from
/// training, validation and test draws.
Matrix probe_parameters(const ProblemFamily& family, const StagePlan& plan, std::size_t count);

// diagnose-v1: {"schema": "diagnose-v1", "plan": <plan-v1 object or path>,
//               "n_oracle": 200, "sample_counts": [...], "n_probe": 100,
//               "basin": {"radii": [...], "tol": 0.05, "threshold": 0.8,
//                         "cold_control": true, "reference": "<ckpt-v1 path>"}}
struct DiagnoseConfig {
  StagePlan plan;
  std::size_t n_oracle = 200;  // decomposition subset with oracle labels
  std::vector<std::size_t> sample_counts;
  std::size_t n_probe = 100;
  BasinProbeConfig basin;  // seeds come from the plan
  std::optional<std::filesystem::path> reference;  // basin center; pretrained from the plan otherwise
};

DiagnoseConfig parse_diagnose(const io::json& doc, const std::filesystem::path& base_dir = ".");
DiagnoseConfig load_diagnose(const std::filesystem::path& path);

/// Error decomposition for every plan seed. Writes decomposition.ndjson (one
/// trajectory point per line) and decomposition.csv (one row per seed).
std::vector<Decomposition> diagnose_decomposition(const DiagnoseConfig& cfg, const std::filesystem::path& out);
/// Basin probe around the reference (or the first seed's pretrained
/// network). Writes basin.ndjson (one radius per line), basin.csv and
/// basin.json.
BasinProbe diagnose_basin(const DiagnoseConfig& cfg, const std::filesystem::path& out);
/// Label-count scaling; writes scaling.ndjson (one run per line) next to the
/// sweep_quantity outputs.
ScalingFit diagnose_scaling(const DiagnoseConfig& cfg, const std::filesystem::path& out);

struct RunSummary {
  std::string label;
  std::string method;
  std::size_t seeds_ok = 0;
  MeritReport test;  // means averaged over seeds, maxima over seeds
  TimeLedger ledger; // per-seed mean of each component
};

/// Reads run directories written by run_pipeline.
RunSummary summarize_run(const std::filesystem::path& dir);
std::string table1_csv(const std::vector<RunSummary>& runs);
std::string offline_time_csv(const std::vector<RunSummary>& runs);
/// Writes table1.csv and ledger.csv under `out`.
std::vector<RunSummary> merge_reports(const std::vector<std::filesystem::path>& dirs,
                                      const std::filesystem::path& out);

}  // namespace alab
