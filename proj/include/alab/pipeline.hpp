#pragma once

// Three-stage orchestration: label acquisition, merit-monitored supervised
// pretraining with early stopping, and self-supervised training from either a
// warm start or a fresh initialization. Owns the plan-v1 config schema, the
// run-directory layout and the offline time ledger.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "alab/config.hpp"
#include "alab/label_factory.hpp"
#include "alab/merit.hpp"
#include "alab/neural_map.hpp"
#include "alab/training_objectives.hpp"

namespace alab {

struct LrProfile {
  double lr = 1e-3;
  double lr_min = 0.0;
  double warmup_fraction = 0.05;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;

  AdamwConfig adamw(std::size_t total_steps) const;
};

struct NetworkSpec {
  std::size_t depth = 3;
  std::size_t width = 256;
  Activation activation = Activation::relu;
  double dropout = 0.0;
  OutputTransform output = OutputTransform::identity;
  bool standardize_inputs = true;
  bool anchor_outputs = true;  // offset the last layer by the family anchor

  Architecture resolve(const ProblemFamily& family) const;
};

struct FamilySpec {
  std::optional<std::filesystem::path> path;  // existing pf-v1 manifest
  FamilyDims dims{20, 10, 10, 3};             // otherwise generated from these
  std::uint64_t seed = 0;
};

struct Stage1Plan {
  bool enabled = true;
  std::optional<std::filesystem::path> dataset;  // preexisting ds-v1 directory
  SolverBudget budget = tier_budget(BudgetTier::cheap);
  std::size_t n_samples = 1000;
};

struct Stage2Plan {
  bool enabled = true;
  std::size_t epochs_max = 200;
  std::size_t eval_every = 10;
  std::size_t patience = 5;  // evaluations without improvement; 0 disables early stopping
  std::size_t batch_size = 64;
  LossWeights weights;
  LrProfile lr;
};

enum class SslMethod { penalty, adaptive_penalty, dc3 };
std::string method_name(SslMethod m);
SslMethod parse_method(const std::string& s);

/// Loss weights of each method at the published settings.
LossWeights method_weights(SslMethod m);
LossWeights supervised_weights();

struct Stage3Plan {
  bool enabled = true;
  SslMethod method = SslMethod::penalty;
  std::size_t epochs = 100;
  std::size_t eval_every = 5;
  std::size_t batch_size = 64;
  // Inputs for self-supervised training: 0 reuses the stage-1 inputs, N > 0
  // draws the first N parameters of the run seed (a superset of generated
  // stage-1 inputs, so label count and unlabeled pool vary independently).
  std::size_t n_inputs = 0;
  LossWeights weights = method_weights(SslMethod::penalty);
  Dc3Config dc3;
  LrProfile lr;

  HeadConfig head() const;
};

struct StagePlan {
  std::string name = "run";
  FamilySpec family;
  NetworkSpec network;
  Stage1Plan stage1;
  Stage2Plan stage2;
  Stage3Plan stage3;
  std::vector<std::uint64_t> seeds{0};
  MeritConfig merit;
  std::uint64_t data_seed = 0;  // validation / test parameter stream
  std::size_t n_val = 200;
  std::size_t n_test = 200;

  /// Throws ConfigError naming the offending path.
  void validate() const;
};

/// Parses a plan-v1 document; relative paths resolve against `base_dir`.
StagePlan parse_plan(const io::json& doc, const std::filesystem::path& base_dir = ".");
StagePlan load_plan(const std::filesystem::path& path);
io::json to_json(const StagePlan& plan);

// ---------------------------------------------------------------------------
// Training loops

struct EvalPoint {
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean over the epoch's minibatches; 0 at epoch 0
  MeritReport val;
  double lambda_eq = 0.0;
  double lambda_ineq = 0.0;
};
io::json to_json(const EvalPoint& p);

/// Called at every evaluation with the network being evaluated.
using EvalHook = std::function<void(std::size_t epoch, const Network& net)>;

struct PretrainResult {
  Network best;
  Network final_net;
  std::size_t best_epoch = 0;
  double best_merit = 0.0;
  std::size_t epochs_run = 0;
  bool stopped_early = false;
  std::vector<EvalPoint> log;
};

/// Supervised training on (train_xs, labels) evaluated on val_xs every
/// eval_every epochs (and at the last epoch). Returns the minimum-merit
/// network, not the final one. Starts from `init` or a fresh init from `seed`.
PretrainResult pretrain_with_merit_stop(const ProblemFamily& family, const Matrix& train_xs, const Matrix& labels,
                                        const Matrix& val_xs, const Stage2Plan& plan, const Architecture& arch,
                                        std::uint64_t seed, const MeritConfig& merit = {},
                                        const Network* init = nullptr, const EvalHook& hook = {});

struct SslResult {
  Network final_net;
  Network best;
  std::size_t best_epoch = 0;
  double best_merit = 0.0;
  std::vector<EvalPoint> log;  // includes the epoch-0 evaluation of `init`
  LossWeights final_weights;
};

/// Self-supervised training from `init`; warm and cold runs differ only in it.
SslResult run_ssl(const ProblemFamily& family, const Network& init, const Matrix& train_xs, const Matrix& val_xs,
                  const Stage3Plan& plan, std::uint64_t seed, const MeritConfig& merit = {},
                  const EvalHook& hook = {});

MeritReport evaluate_model(const ProblemFamily& family, const Network& net, const Matrix& xs,
                           const HeadConfig& head, const MeritConfig& merit);

// ---------------------------------------------------------------------------
// Whole runs

struct TimeLedger {
  double generation_s = 0.0;
  double supervised_s = 0.0;
  double self_supervised_s = 0.0;
  double total_s = 0.0;

  void finalize() { total_s = generation_s + supervised_s + self_supervised_s; }
};
io::json to_json(const TimeLedger& t);
TimeLedger time_ledger_from_json(const io::json& j);
std::string ledger_csv_header();
std::string ledger_csv_row(const std::string& label, const TimeLedger& t);

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MeritReport test_final;
  MeritReport test_best;
  TimeLedger ledger;
  std::size_t pretrain_best_epoch = 0;
  std::size_t ssl_best_epoch = 0;
};

struct PipelineResult {
  std::filesystem::path dir;
  std::vector<SeedOutcome> seeds;
};

/// Validation and test parameters shared by every seed of a plan.
Matrix validation_parameters(const ProblemFamily& family, const StagePlan& plan);
Matrix test_parameters(const ProblemFamily& family, const StagePlan& plan);

/// Resolves the family of a plan (load or generate).
ProblemFamily resolve_family(const StagePlan& plan);

/// Runs every seed into <out>/seed-<s>/ and writes report.csv, ledger.csv,
/// plan.json and manifest.json at the top level. Seeds that fail are recorded
/// and the rest continue.
PipelineResult run_pipeline(const StagePlan& plan, const std::filesystem::path& out);

// ---------------------------------------------------------------------------
// Run manifest

inline constexpr const char* kToolVersion = "0.1.0";

/// Records every file of a run directory with its hash. Creation time is the
/// only nondeterministic field.
io::json build_run_manifest(const std::filesystem::path& dir, const io::json& resolved_config,
                            const std::vector<std::uint64_t>& seeds);
/// Re-hashes every listed file; throws io::FormatError naming the first mismatch.
void verify_run_manifest(const std::filesystem::path& dir);

}  // namespace alab
