// Command-line front end. Exit status: 0 ok, 1 config or runtime error,
// 2 usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "alab/experiments.hpp"
#include "alab/landscape.hpp"
#include "alab/pipeline.hpp"

namespace fs = std::filesystem;
using namespace alab;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

HeadConfig checkpoint_head(const Checkpoint& c) {
  return c.meta.contains("head") ? head_from_json(c.meta.at("head")) : HeadConfig{};
}

void write_eval_log(const fs::path& path, const std::vector<EvalPoint>& log) {
  io::NdjsonLog out;
  for (const auto& p : log) out.append(to_json(p));
  out.write(path);
}

Dataset dataset_for(const ProblemFamily& family, const StagePlan& plan, const std::optional<fs::path>& data,
                    std::uint64_t seed, const fs::path& out) {
  if (data) return load_dataset(*data, family);
  if (plan.stage1.dataset) return load_dataset(*plan.stage1.dataset, family);
  Dataset ds = build_dataset(family, plan.stage1.n_samples, plan.stage1.budget, seed);
  const fs::path fam = out / "family.json";
  save_family(family, fam);
  save_dataset(ds, out / "dataset", fam);
  return ds;
}

void print_json(const io::json& j) { std::cout << j.dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Amortized constrained-optimization lab: labels, surrogate training, diagnostics, landscapes", "alab"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  // gen-family
  auto* gen_family = app.add_subcommand("gen-family", "Generate a problem family (pf-v1)");
  FamilyDims dims{0, 0, 0, 3};
  std::uint64_t family_seed = 0;
  std::string family_out = "family.json";
  gen_family->add_option("--n", dims.n, "Decision dimension")->required();
  gen_family->add_option("--eq", dims.n_eq, "Equality constraints")->required();
  gen_family->add_option("--ineq", dims.n_ineq, "Second-order cone constraints")->required();
  gen_family->add_option("--k", dims.k, "Rows per cone block")->capture_default_str();
  gen_family->add_option("--seed", family_seed, "Family seed")->capture_default_str();
  gen_family->add_option("--out", family_out, "Manifest path (a .bin blob is written beside it)")
      ->capture_default_str();

  // gen-data
  auto* gen_data = app.add_subcommand("gen-data", "Solve sampled instances under a budget tier (ds-v1)");
  std::string data_family, data_tier = "cheap", data_out;
  std::size_t data_n = 0;
  std::uint64_t data_seed = 0, data_first = 0;
  gen_data->add_option("--family", data_family, "pf-v1 manifest")->required();
  gen_data->add_option("--n", data_n, "Number of instances")->required();
  gen_data->add_option("--tier", data_tier, "cheap|low|mid|high|oracle")->capture_default_str();
  gen_data->add_option("--seed", data_seed, "Parameter and start seed")->capture_default_str();
  gen_data->add_option("--first-index", data_first, "Index of the first parameter draw")->capture_default_str();
  gen_data->add_option("--out", data_out, "Output directory")->required();

  // pretrain / train-ssl / eval
  std::string plan_path, out_dir, init_ckpt, data_dir;
  std::uint64_t run_seed = 0;
  auto* pretrain = app.add_subcommand("pretrain", "Stage 2 only: supervised pretraining with merit-based stopping");
  pretrain->add_option("--config", plan_path, "plan-v1 file")->required();
  pretrain->add_option("--data", data_dir, "ds-v1 directory (default: the plan's stage 1)");
  pretrain->add_option("--seed", run_seed, "Run seed")->capture_default_str();
  pretrain->add_option("--out", out_dir, "Output directory")->required();

  auto* train_ssl = app.add_subcommand("train-ssl", "Stage 3 only: self-supervised training");
  train_ssl->add_option("--config", plan_path, "plan-v1 file")->required();
  train_ssl->add_option("--init", init_ckpt, "Warm-start checkpoint (default: fresh initialization)");
  train_ssl->add_option("--data", data_dir, "ds-v1 directory whose inputs are used for training");
  train_ssl->add_option("--seed", run_seed, "Run seed")->capture_default_str();
  train_ssl->add_option("--out", out_dir, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Merit reports of checkpoints on the plan's validation or test set");
  std::vector<std::string> eval_ckpts;
  std::string eval_split = "test", eval_out;
  eval->add_option("--config", plan_path, "plan-v1 file")->required();
  eval->add_option("--ckpt", eval_ckpts, "Checkpoint(s); one NDJSON line each")->required();
  eval->add_option("--split", eval_split, "val|test")->capture_default_str()->check(CLI::IsMember({"val", "test"}));
  eval->add_option("--out", eval_out, "NDJSON output (default: stdout)");

  auto* pipeline = app.add_subcommand("pipeline", "Run all stages for every seed of a plan");
  pipeline->add_option("--config", plan_path, "plan-v1 file")->required();
  pipeline->add_option("--out", out_dir, "Run directory")->required();

  auto* sweep_q = app.add_subcommand("sweep-quality", "One pipeline per budget tier; writes quality.csv");
  sweep_q->add_option("--config", plan_path, "sweep-v1 file")->required();
  sweep_q->add_option("--out", out_dir, "Output directory")->required();

  auto* sweep_n = app.add_subcommand("sweep-quantity", "Label-count sweep; writes quantity.csv and scaling.json");
  sweep_n->add_option("--config", plan_path, "sweep-v1 file")->required();
  sweep_n->add_option("--out", out_dir, "Output directory")->required();

  auto* diagnose = app.add_subcommand("diagnose", "Error decomposition, basin probe or label-count scaling");
  std::string diag_kind;
  diagnose->add_option("kind", diag_kind, "decomposition|basin|scaling")
      ->required()
      ->check(CLI::IsMember({"decomposition", "basin", "scaling"}));
  diagnose->add_option("--config", plan_path, "diagnose-v1 file")->required();
  diagnose->add_option("--out", out_dir, "Output directory")->required();

  auto* landscape = app.add_subcommand("landscape", "Merit or loss along a segment or on a random plane");
  std::string land_kind, ckpt_a, ckpt_b, metric = "merit", grid_out;
  std::size_t n_points = 51, n_grid = 21, n_eval = 256;
  double extent = 1.0;
  std::uint64_t plane_seed = 0;
  landscape->add_option("kind", land_kind, "interp|plane")->required()->check(CLI::IsMember({"interp", "plane"}));
  landscape->add_option("--config", plan_path, "plan-v1 file (family, data seed, loss weights)")->required();
  landscape->add_option("--ckpt-a", ckpt_a, "Start (interp) or center (plane)")->required();
  landscape->add_option("--ckpt-b", ckpt_b, "End of the segment (interp)");
  landscape->add_option("--metric", metric, "merit|train_loss")
      ->capture_default_str()
      ->check(CLI::IsMember({"merit", "train_loss"}));
  landscape->add_option("--points", n_points, "Interpolation points")->capture_default_str();
  landscape->add_option("--grid", n_grid, "Plane grid points per axis")->capture_default_str();
  landscape->add_option("--extent", extent, "Plane half-width in direction units")->capture_default_str();
  landscape->add_option("--seed", plane_seed, "Direction seed")->capture_default_str();
  landscape->add_option("--n-eval", n_eval, "Held-out evaluation instances")->capture_default_str();
  landscape->add_option("--out", grid_out, "Grid CSV (a .json sidecar is written beside it)")->required();

  auto* report = app.add_subcommand("report", "Merge run directories into table1.csv and ledger.csv");
  std::vector<std::string> run_dirs;
  report->add_option("runs", run_dirs, "Run directories written by pipeline")->required();
  report->add_option("--out", out_dir, "Output directory")->required();

  if (argc <= 1) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen_family) {
      if (dims.n_eq == 0 || dims.n_eq >= dims.n) throw UsageError("gen-family: need 0 < --eq < --n");
      const ProblemFamily family = generate_family(dims, family_seed);
      save_family(family, family_out);
      std::cout << family_out << "\n";
    } else if (*gen_data) {
      const ProblemFamily family = load_family(data_family);
      BudgetTier tier;
      try {
        tier = parse_tier(data_tier);
      } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("gen-data --tier: ") + e.what());
      }
      const Dataset ds = build_dataset(family, data_n, tier_budget(tier), data_seed, data_first);
      save_dataset(ds, data_out, data_family);
      print_json(to_json(ds.summary));
    } else if (*pretrain) {
      const StagePlan plan = load_plan(plan_path);
      const ProblemFamily family = resolve_family(plan);
      fs::create_directories(out_dir);
      const Dataset ds = dataset_for(family, plan, data_dir.empty() ? std::nullopt : std::optional<fs::path>(data_dir),
                                     run_seed, out_dir);
      const PretrainResult pre = pretrain_with_merit_stop(family, ds.xs, ds.ys, validation_parameters(family, plan),
                                                          plan.stage2, plan.network.resolve(family), run_seed,
                                                          plan.merit);
      const io::json head = to_json(HeadConfig{});
      save_checkpoint({pre.best, std::nullopt, {{"stage", "pretrain_best"}, {"epoch", pre.best_epoch}, {"head", head}}},
                      fs::path(out_dir) / "pretrain_best.json");
      save_checkpoint({pre.final_net, std::nullopt, {{"stage", "pretrain_final"}, {"head", head}}},
                      fs::path(out_dir) / "pretrain_final.json");
      write_eval_log(fs::path(out_dir) / "pretrain.ndjson", pre.log);
      print_json({{"best_epoch", pre.best_epoch},
                  {"best_val_merit", pre.best_merit},
                  {"epochs_run", pre.epochs_run},
                  {"stopped_early", pre.stopped_early}});
    } else if (*train_ssl) {
      const StagePlan plan = load_plan(plan_path);
      const ProblemFamily family = resolve_family(plan);
      const Architecture arch = plan.network.resolve(family);
      Network init = init_ckpt.empty() ? init_network(arch, run_seed) : load_checkpoint(init_ckpt).net;
      if (!(init.arch() == arch)) throw ConfigError(init_ckpt + ": architecture does not match the plan's network");
      Matrix train_xs;
      if (plan.stage3.n_inputs > 0) {
        train_xs = sample_parameters(family, run_seed, plan.stage3.n_inputs);
      } else if (!data_dir.empty()) {
        train_xs = load_dataset(data_dir, family).xs;
      } else if (plan.stage1.dataset) {
        train_xs = load_dataset(*plan.stage1.dataset, family).xs;
      } else {
        train_xs = sample_parameters(family, run_seed, plan.stage1.n_samples);
      }
      const SslResult ssl =
          run_ssl(family, init, train_xs, validation_parameters(family, plan), plan.stage3, run_seed, plan.merit);
      const io::json head = to_json(plan.stage3.head());
      fs::create_directories(out_dir);
      save_checkpoint({ssl.final_net, std::nullopt, {{"stage", "final"}, {"head", head}}},
                      fs::path(out_dir) / "final.json");
      save_checkpoint({ssl.best, std::nullopt, {{"stage", "best"}, {"epoch", ssl.best_epoch}, {"head", head}}},
                      fs::path(out_dir) / "best.json");
      write_eval_log(fs::path(out_dir) / "ssl.ndjson", ssl.log);
      print_json({{"best_epoch", ssl.best_epoch},
                  {"best_val_merit", ssl.best_merit},
                  {"final_val_merit", ssl.log.back().val.mean_merit}});
    } else if (*eval) {
      const StagePlan plan = load_plan(plan_path);
      const ProblemFamily family = resolve_family(plan);
      const Matrix xs = eval_split == "val" ? validation_parameters(family, plan) : test_parameters(family, plan);
      io::NdjsonLog log;
      for (const auto& path : eval_ckpts) {
        const Checkpoint c = load_checkpoint(path);
        io::json j = to_json(evaluate_model(family, c.net, xs, checkpoint_head(c), plan.merit));
        j["checkpoint"] = path;
        j["split"] = eval_split;
        log.append(j);
      }
      if (eval_out.empty()) {
        std::cout << log.text();
      } else {
        log.write(eval_out);
      }
    } else if (*pipeline) {
      const PipelineResult res = run_pipeline(load_plan(plan_path), out_dir);
      std::size_t ok = 0;
      for (const auto& s : res.seeds) {
        if (s.ok) {
          ++ok;
        } else {
          std::cerr << "seed " << s.seed << " failed: " << s.error << "\n";
        }
      }
      std::cout << io::read_file(fs::path(out_dir) / "report.csv");
      if (ok == 0) return 1;
    } else if (*sweep_q) {
      sweep_quality(load_sweep(plan_path), out_dir);
      std::cout << io::read_file(fs::path(out_dir) / "quality.csv");
    } else if (*sweep_n) {
      const ScalingFit fit = sweep_quantity(load_sweep(plan_path), out_dir);
      std::cout << scaling_csv(fit);
      std::cout << "elbow index " << fit.elbow.index << ", drop then plateau: "
                << (fit.elbow.drop_then_plateau ? "yes" : "no") << "\n";
    } else if (*diagnose) {
      const DiagnoseConfig cfg = load_diagnose(plan_path);
      if (diag_kind == "decomposition") {
        diagnose_decomposition(cfg, out_dir);
        std::cout << io::read_file(fs::path(out_dir) / "decomposition.csv");
      } else if (diag_kind == "basin") {
        const BasinProbe probe = diagnose_basin(cfg, out_dir);
        std::cout << io::read_file(fs::path(out_dir) / "basin.csv");
        std::cout << "admissible radius " << io::fmt_real(probe.admissible_radius) << "\n";
      } else {
        diagnose_scaling(cfg, out_dir);
        std::cout << io::read_file(fs::path(out_dir) / "quantity.csv");
      }
    } else if (*landscape) {
      const StagePlan plan = load_plan(plan_path);
      const ProblemFamily family = resolve_family(plan);
      const Checkpoint a = load_checkpoint(ckpt_a);
      MetricSpec spec;
      spec.metric = parse_metric(metric);
      spec.head = checkpoint_head(a);
      spec.weights = plan.stage3.weights;
      spec.merit = plan.merit;
      const Matrix xs = landscape_parameters(family, plan.data_seed, n_eval);
      LandscapeGrid grid;
      if (land_kind == "interp") {
        if (ckpt_b.empty()) throw UsageError("landscape interp: --ckpt-b is required");
        grid = interpolate_1d(family, a.net, load_checkpoint(ckpt_b).net, xs, spec, n_points);
        std::vector<double> col(grid.alphas.size());
        for (std::size_t i = 0; i < col.size(); ++i) col[i] = grid.values(i, 0);
        grid.meta["interior_strict_maxima"] = count_interior_strict_maxima(col);
        std::cout << "interior strict maxima: " << count_interior_strict_maxima(col) << "\n";
      } else {
        grid = random_plane_2d(family, a.net, xs, spec, extent, n_grid, plane_seed);
      }
      write_grid(grid, grid_out);
      std::cout << grid_out << "\n";
    } else if (*report) {
      std::vector<fs::path> dirs(run_dirs.begin(), run_dirs.end());
      merge_reports(dirs, out_dir);
      std::cout << io::read_file(fs::path(out_dir) / "table1.csv");
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
