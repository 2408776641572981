#include "alab/experiments.hpp"

#include <algorithm>
#include <limits>

#include "alab/config.hpp"

namespace alab {

namespace fs = std::filesystem;

SweepConfig parse_sweep(const io::json& doc, const fs::path& base_dir) {
  ConfigObject root(doc, "sweep");
  const auto schema = root.get<std::string>("schema", "");
  if (schema != "sweep-v1") throw ConfigError("sweep.schema: expected \"sweep-v1\", got \"" + schema + "\"");
  SweepConfig cfg;
  const io::json& plan = root.raw("plan");
  if (plan.is_string()) {
    fs::path p = plan.get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    cfg.plan = load_plan(p);
  } else if (plan.is_object()) {
    try {
      cfg.plan = parse_plan(plan, base_dir);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("sweep.") + e.what());
    }
  } else {
    root.fail("plan", "expected a plan-v1 object or a path");
  }
  for (const auto& t : root.get<std::vector<std::string>>("tiers", {})) {
    try {
      cfg.tiers.push_back(parse_tier(t));
    } catch (const std::invalid_argument& e) {
      root.fail("tiers", e.what());
    }
  }
  cfg.sample_counts = root.get<std::vector<std::size_t>>("sample_counts", {});
  cfg.n_probe = root.get<std::size_t>("n_probe", cfg.n_probe);
  if (cfg.n_probe == 0) root.fail("n_probe", "must be >= 1");
  root.finish();
  return cfg;
}

SweepConfig load_sweep(const fs::path& path) {
  io::json doc;
  try {
    doc = io::read_json(path);
  } catch (const std::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return parse_sweep(doc, path.has_parent_path() ? path.parent_path() : fs::path("."));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::vector<QualityRow> sweep_quality(const SweepConfig& cfg, const fs::path& out) {
  if (cfg.tiers.empty()) throw ConfigError("sweep.tiers: must be nonempty");
  fs::create_directories(out);
  std::vector<QualityRow> rows;
  for (const BudgetTier tier : cfg.tiers) {
    StagePlan plan = cfg.plan;
    plan.stage1.budget = tier_budget(tier);
    plan.name = tier_name(tier);
    const fs::path dir = out / tier_name(tier);
    const PipelineResult res = run_pipeline(plan, dir);
    QualityRow row;
    row.tier = tier;
    double label_sum = 0.0;
    std::size_t label_count = 0;
    for (const auto& s : res.seeds) {
      if (!s.ok) continue;
      row.seed_merits.push_back(s.test_final.mean_merit);
      row.seed_max_merits.push_back(s.test_final.max_merit);
      const fs::path ds = dir / ("seed-" + std::to_string(s.seed)) / "dataset" / "dataset.json";
      if (fs::exists(ds)) {
        label_sum += io::read_json(ds).at("summary").at("median_merit").get<double>();
        ++label_count;
      }
    }
    if (!row.seed_merits.empty()) {
      for (double m : row.seed_merits) row.mean_merit += m;
      row.mean_merit /= static_cast<double>(row.seed_merits.size());
      row.max_merit = *std::max_element(row.seed_max_merits.begin(), row.seed_max_merits.end());
    } else {
      row.mean_merit = row.max_merit = std::numeric_limits<double>::quiet_NaN();
    }
    row.label_median_merit = label_count ? label_sum / static_cast<double>(label_count) : 0.0;
    rows.push_back(std::move(row));
  }
  io::write_file_atomic(out / "quality.csv", quality_csv(rows));
  return rows;
}

std::string quality_csv(const std::vector<QualityRow>& rows) {
  std::string out = "tier,seeds_ok,label_median_merit,mean_merit,max_merit,seed_min_merit,seed_max_merit\n";
  for (const auto& r : rows) {
    double lo = std::numeric_limits<double>::quiet_NaN(), hi = lo;
    if (!r.seed_merits.empty()) {
      lo = *std::min_element(r.seed_merits.begin(), r.seed_merits.end());
      hi = *std::max_element(r.seed_merits.begin(), r.seed_merits.end());
    }
    out += tier_name(r.tier) + "," + std::to_string(r.seed_merits.size()) + "," + io::fmt_real(r.label_median_merit) +
           "," + io::fmt_real(r.mean_merit) + "," + io::fmt_real(r.max_merit) + "," + io::fmt_real(lo) + "," +
           io::fmt_real(hi) + "\n";
  }
  return out;
}

Matrix probe_parameters(const ProblemFamily& family, const StagePlan& plan, std::size_t count) {
  return sample_parameters(family, plan.data_seed, count, 3'000'000'000ULL);
}

ScalingFit sweep_quantity(const SweepConfig& cfg, const fs::path& out) {
  if (cfg.sample_counts.empty()) throw ConfigError("sweep.sample_counts: must be nonempty");
  const StagePlan& plan = cfg.plan;
  const ProblemFamily family = resolve_family(plan);
  ScalingRequest req;
  req.sample_counts = cfg.sample_counts;
  std::sort(req.sample_counts.begin(), req.sample_counts.end());
  req.budget = plan.stage1.budget;
  req.stage2 = plan.stage2;
  if (plan.stage3.enabled) req.stage3 = plan.stage3;
  req.n_inputs = plan.stage3.n_inputs;
  req.seeds = plan.seeds;
  req.arch = plan.network.resolve(family);
  req.merit = plan.merit;
  req.val_xs = validation_parameters(family, plan);
  req.eval_xs = test_parameters(family, plan);
  req.probe_xs = probe_parameters(family, plan, cfg.n_probe);
  const auto oracle = oracle_solutions(family, req.probe_xs, tier_budget(BudgetTier::oracle), plan.data_seed);
  std::vector<Vector> ys;
  for (const auto& r : oracle) ys.push_back(r.y_hat);
  req.probe_oracle = rows_to_matrix(ys);

  ScalingFit fit = fit_sample_scaling(family, req);
  fs::create_directories(out);
  io::write_json(out / "plan.json", to_json(plan));
  io::write_file_atomic(out / "quantity.csv", scaling_csv(fit));
  io::write_json(out / "scaling.json", to_json(fit));
  return fit;
}

// ---------------------------------------------------------------------------
// Diagnostics driven by a config file

DiagnoseConfig parse_diagnose(const io::json& doc, const fs::path& base_dir) {
  ConfigObject root(doc, "diagnose");
  const auto schema = root.get<std::string>("schema", "");
  if (schema != "diagnose-v1") {
    throw ConfigError("diagnose.schema: expected \"diagnose-v1\", got \"" + schema + "\"");
  }
  DiagnoseConfig cfg;
  const io::json& plan = root.raw("plan");
  if (plan.is_string()) {
    fs::path p = plan.get<std::string>();
    if (p.is_relative()) p = base_dir / p;
    cfg.plan = load_plan(p);
  } else if (plan.is_object()) {
    try {
      cfg.plan = parse_plan(plan, base_dir);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("diagnose.") + e.what());
    }
  } else {
    root.fail("plan", "expected a plan-v1 object or a path");
  }
  cfg.n_oracle = root.get<std::size_t>("n_oracle", cfg.n_oracle);
  if (cfg.n_oracle == 0) root.fail("n_oracle", "must be >= 1");
  cfg.sample_counts = root.get<std::vector<std::size_t>>("sample_counts", {});
  cfg.n_probe = root.get<std::size_t>("n_probe", cfg.n_probe);
  if (cfg.n_probe == 0) root.fail("n_probe", "must be >= 1");
  {
    ConfigObject b = root.object("basin");
    cfg.basin.radii = b.get<std::vector<double>>("radii", {});
    for (double r : cfg.basin.radii) {
      if (!(r >= 0.0)) b.fail("radii", "entries must be >= 0");
    }
    cfg.basin.tol = b.get<double>("tol", cfg.basin.tol);
    if (!(cfg.basin.tol >= 0.0)) b.fail("tol", "must be >= 0");
    cfg.basin.threshold = b.get<double>("threshold", cfg.basin.threshold);
    if (!(cfg.basin.threshold > 0.0 && cfg.basin.threshold <= 1.0)) b.fail("threshold", "must lie in (0, 1]");
    cfg.basin.cold_control = b.get<bool>("cold_control", cfg.basin.cold_control);
    if (auto ref = b.optional<std::string>("reference")) {
      fs::path p = *ref;
      if (p.is_relative()) p = base_dir / p;
      cfg.reference = p;
    }
    b.finish();
  }
  cfg.basin.seeds = cfg.plan.seeds;
  root.finish();
  return cfg;
}

DiagnoseConfig load_diagnose(const fs::path& path) {
  io::json doc;
  try {
    doc = io::read_json(path);
  } catch (const std::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  try {
    return parse_diagnose(doc, path.has_parent_path() ? path.parent_path() : fs::path("."));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

namespace {

Dataset plan_dataset(const ProblemFamily& family, const StagePlan& plan, std::uint64_t seed) {
  if (plan.stage1.dataset) return load_dataset(*plan.stage1.dataset, family);
  return build_dataset(family, plan.stage1.n_samples, plan.stage1.budget, seed);
}

}  // namespace

std::vector<Decomposition> diagnose_decomposition(const DiagnoseConfig& cfg, const fs::path& out) {
  const StagePlan& plan = cfg.plan;
  const ProblemFamily family = resolve_family(plan);
  const Matrix val_xs = validation_parameters(family, plan);
  const Architecture arch = plan.network.resolve(family);
  io::NdjsonLog log;
  std::string csv = "seed,delta_proxy,d_perp,max_triangle_slack,best_merit_epoch,final_total_error\n";
  std::vector<Decomposition> result;
  for (const std::uint64_t seed : plan.seeds) {
    const Dataset ds = plan_dataset(family, plan, seed);
    const std::size_t m = std::min(cfg.n_oracle, ds.size());
    std::vector<std::size_t> head(m);
    for (std::size_t i = 0; i < m; ++i) head[i] = i;
    std::vector<Vector> ys;
    for (const auto& r : oracle_solutions(family, gather_rows(ds.xs, head), tier_budget(BudgetTier::oracle), seed)) {
      ys.push_back(r.y_hat);
    }
    Decomposition d = trace_error_decomposition(family, ds.xs, ds.ys, rows_to_matrix(ys), val_xs, plan.stage2, arch,
                                                seed, plan.merit);
    for (const auto& p : d.points) {
      io::json j = to_json(p);
      j["seed"] = seed;
      j["delta_proxy"] = d.delta_proxy;
      log.append(j);
    }
    csv += std::to_string(seed) + "," + io::fmt_real(d.delta_proxy) + "," + io::fmt_real(d.d_perp) + "," +
           io::fmt_real(d.max_triangle_slack) + "," + std::to_string(d.best_merit_epoch) + "," +
           io::fmt_real(d.points.back().total_error) + "\n";
    d.predictions.clear();
    result.push_back(std::move(d));
  }
  fs::create_directories(out);
  log.write(out / "decomposition.ndjson");
  io::write_file_atomic(out / "decomposition.csv", csv);
  return result;
}

BasinProbe diagnose_basin(const DiagnoseConfig& cfg, const fs::path& out) {
  if (cfg.basin.radii.empty()) throw ConfigError("diagnose.basin.radii: must be nonempty");
  const StagePlan& plan = cfg.plan;
  const ProblemFamily family = resolve_family(plan);
  const Matrix val_xs = validation_parameters(family, plan);
  const std::uint64_t seed = plan.seeds.front();
  std::optional<Dataset> ds;
  if (!plan.stage3.n_inputs || !cfg.reference) ds = plan_dataset(family, plan, seed);
  Network reference;
  if (cfg.reference) {
    reference = load_checkpoint(*cfg.reference).net;
  } else {
    reference = pretrain_with_merit_stop(family, ds->xs, ds->ys, val_xs, plan.stage2, plan.network.resolve(family),
                                         seed, plan.merit)
                    .best;
  }
  const Matrix train_xs =
      plan.stage3.n_inputs > 0 ? sample_parameters(family, seed, plan.stage3.n_inputs) : ds->xs;
  BasinProbe probe = probe_basin_radius(family, reference, train_xs, val_xs, plan.stage3, cfg.basin, plan.merit);

  const io::json full = to_json(probe);
  io::NdjsonLog log;
  std::string csv = "radius,successes,trials,raw_rate,smoothed_rate\n";
  for (const auto& row : full.at("rows")) log.append(row);
  for (const auto& r : probe.rows) {
    csv += io::fmt_real(r.radius) + "," + std::to_string(r.successes) + "," + std::to_string(r.trials) + "," +
           io::fmt_real(r.raw_rate) + "," + io::fmt_real(r.smoothed_rate) + "\n";
  }
  fs::create_directories(out);
  log.write(out / "basin.ndjson");
  io::write_file_atomic(out / "basin.csv", csv);
  io::write_json(out / "basin.json", full);
  return probe;
}

ScalingFit diagnose_scaling(const DiagnoseConfig& cfg, const fs::path& out) {
  if (cfg.sample_counts.empty()) throw ConfigError("diagnose.sample_counts: must be nonempty");
  SweepConfig sweep;
  sweep.plan = cfg.plan;
  sweep.sample_counts = cfg.sample_counts;
  sweep.n_probe = cfg.n_probe;
  ScalingFit fit = sweep_quantity(sweep, out);
  io::NdjsonLog log;
  for (const auto& run : to_json(fit).at("runs")) log.append(run);
  log.write(out / "scaling.ndjson");
  return fit;
}

// ---------------------------------------------------------------------------
// Report merge

RunSummary summarize_run(const fs::path& dir) {
  const io::json plan = io::read_json(dir / "plan.json");
  RunSummary s;
  s.label = plan.at("name").get<std::string>();
  const bool ssl = plan.at("stage3").at("enabled").get<bool>();
  const bool warm = plan.at("stage2").at("enabled").get<bool>();
  s.method = ssl ? plan.at("stage3").at("method").get<std::string>() : "supervised";
  s.method += warm && ssl ? "+warm" : "";

  std::vector<MeritReport> reports;
  std::vector<TimeLedger> ledgers;
  for (const auto seed : plan.at("seeds").get<std::vector<std::uint64_t>>()) {
    const fs::path sd = dir / ("seed-" + std::to_string(seed));
    const io::json status = io::read_json(sd / "report.json");
    ledgers.push_back(time_ledger_from_json(io::read_json(sd / "ledger.json")));
    if (!status.at("ok").get<bool>()) continue;
    reports.push_back(merit_report_from_json(status.at("test_final")));
  }
  s.seeds_ok = reports.size();
  if (!reports.empty()) {
    const double n = static_cast<double>(reports.size());
    s.test.n_instances = reports.front().n_instances;
    s.test.max_objective = s.test.max_eq_l1 = s.test.max_ineq_l1 = s.test.max_merit =
        -std::numeric_limits<double>::infinity();
    for (const auto& r : reports) {
      s.test.mean_objective += r.mean_objective / n;
      s.test.mean_eq_l1 += r.mean_eq_l1 / n;
      s.test.mean_ineq_l1 += r.mean_ineq_l1 / n;
      s.test.mean_merit += r.mean_merit / n;
      s.test.max_objective = std::max(s.test.max_objective, r.max_objective);
      s.test.max_eq_l1 = std::max(s.test.max_eq_l1, r.max_eq_l1);
      s.test.max_ineq_l1 = std::max(s.test.max_ineq_l1, r.max_ineq_l1);
      s.test.max_merit = std::max(s.test.max_merit, r.max_merit);
    }
  }
  if (!ledgers.empty()) {
    const double n = static_cast<double>(ledgers.size());
    for (const auto& l : ledgers) {
      s.ledger.generation_s += l.generation_s / n;
      s.ledger.supervised_s += l.supervised_s / n;
      s.ledger.self_supervised_s += l.self_supervised_s / n;
    }
    s.ledger.finalize();
  }
  return s;
}

std::string table1_csv(const std::vector<RunSummary>& runs) {
  std::string out =
      "run,method,seeds_ok,mean_objective,mean_eq_l1,max_eq_l1,mean_ineq_l1,max_ineq_l1,mean_merit,max_merit\n";
  for (const auto& r : runs) {
    const auto& t = r.test;
    out += r.label + "," + r.method + "," + std::to_string(r.seeds_ok) + "," + io::fmt_real(t.mean_objective) + "," +
           io::fmt_real(t.mean_eq_l1) + "," + io::fmt_real(t.max_eq_l1) + "," + io::fmt_real(t.mean_ineq_l1) + "," +
           io::fmt_real(t.max_ineq_l1) + "," + io::fmt_real(t.mean_merit) + "," + io::fmt_real(t.max_merit) + "\n";
  }
  return out;
}

std::string offline_time_csv(const std::vector<RunSummary>& runs) {
  std::string out = ledger_csv_header() + "\n";
  for (const auto& r : runs) out += ledger_csv_row(r.label, r.ledger) + "\n";
  return out;
}

std::vector<RunSummary> merge_reports(const std::vector<fs::path>& dirs, const fs::path& out) {
  if (dirs.empty()) throw std::invalid_argument("report: no run directories given");
  std::vector<RunSummary> runs;
  for (const auto& d : dirs) runs.push_back(summarize_run(d));
  fs::create_directories(out);
  io::write_file_atomic(out / "table1.csv", table1_csv(runs));
  io::write_file_atomic(out / "ledger.csv", offline_time_csv(runs));
  return runs;
}

}  // namespace alab
