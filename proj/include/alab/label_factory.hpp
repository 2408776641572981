#pragma once

// Iteration-budgeted penalty / augmented-Lagrangian solver producing labels of
// controllable quality, plus the dataset container and its ds-v1 file format.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "alab/io.hpp"
#include "alab/merit.hpp"
#include "alab/problem_family.hpp"

namespace alab {

enum class SolverMode { quadratic_penalty, augmented_lagrangian };

struct SolverBudget {
  std::size_t max_outer = 1;
  std::size_t max_inner = 5;
  double tol = 1e-8;           // target on ‖stacked‖∞
  double rho_init = 10.0;
  double rho_growth = 10.0;
  double rho_max = 1e8;
  double step_size = 1e-2;     // first trial step of the line search
  SolverMode mode = SolverMode::quadratic_penalty;
  std::string id = "custom";

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

enum class BudgetTier { cheap, low, mid, high, oracle };

/// Fixed iteration budgets behind the named tiers, cheapest first.
SolverBudget tier_budget(BudgetTier tier);
BudgetTier parse_tier(const std::string& name);
std::string tier_name(BudgetTier tier);
inline constexpr BudgetTier kAllTiers[] = {BudgetTier::cheap, BudgetTier::low, BudgetTier::mid,
                                           BudgetTier::high, BudgetTier::oracle};

struct SolveOptions {
  double init_noise = 0.1;  // std-dev of the Gaussian perturbation of the anchor
  MeritConfig eval{};
  double armijo_slope = 1e-4;
  double armijo_shrink = 0.5;
  double grad_tol = 1e-10;   // inner loop exits early below this ‖∇‖∞
};

struct LabelRecord {
  Vector x;
  Vector y_hat;
  double objective = 0.0;
  double eq_l1 = 0.0;
  double ineq_l1 = 0.0;
  double merit_at_eval_rho = 0.0;
  double max_residual = 0.0;  // ‖stacked‖∞
  std::size_t iters_used = 0;
  bool converged = false;
  bool oracle = false;
  std::string budget_id;
};

/// Minimizes the penalty (or augmented Lagrangian) objective from the
/// perturbed anchor under `budget`. `seed` drives only the start
/// perturbation. Returns a non-converged record when the budget runs out;
/// throws std::runtime_error on non-finite iterates.
LabelRecord solve_instance(const ProblemFamily& family, std::span<const double> x, const SolverBudget& budget,
                           std::uint64_t seed, const SolveOptions& options = {});

struct DatasetSummary {
  std::size_t requested = 0;
  std::size_t produced = 0;
  std::size_t skipped = 0;
  double mean_objective = 0.0;
  double mean_eq_l1 = 0.0;
  double mean_ineq_l1 = 0.0;
  double mean_merit = 0.0;
  double median_merit = 0.0;
  double success_rate = 0.0;
  double mean_iters = 0.0;
  double wall_seconds = 0.0;  // excluded from the dataset files
};

struct Dataset {
  Matrix xs;  // produced x N x n_eq
  Matrix ys;  // produced x N x n
  std::vector<LabelRecord> records;
  DatasetSummary summary;
  SolverBudget budget;
  std::uint64_t seed = 0;
  std::uint64_t first_index = 0;

  std::size_t size() const { return xs.rows(); }
};

DatasetSummary summarize(std::span<const LabelRecord> records, std::size_t requested);

/// Samples x_i = sample_parameter(family, seed, first_index + i) and solves
/// each under `budget`, parallel over instances with per-index start streams.
Dataset build_dataset(const ProblemFamily& family, std::size_t n_samples, const SolverBudget& budget,
                      std::uint64_t seed, std::uint64_t first_index = 0, const SolveOptions& options = {});

/// Solves the given parameters with `oracle_budget`; records are marked oracle.
std::vector<LabelRecord> oracle_solutions(const ProblemFamily& family, const Matrix& xs,
                                          const SolverBudget& oracle_budget, std::uint64_t seed,
                                          const SolveOptions& options = {});

/// Keeps the first `count` samples.
Dataset take_prefix(const Dataset& ds, std::size_t count);

// ds-v1: <dir>/dataset.json + dataset.bin + records.ndjson. Wall-clock goes to
// timing.json so the other three files are reproducible byte for byte.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir,
                  const std::filesystem::path& family_manifest);
Dataset load_dataset(const std::filesystem::path& dir, const ProblemFamily& family);

io::json to_json(const SolverBudget& b);
SolverBudget budget_from_json(const io::json& j);
io::json to_json(const DatasetSummary& s);

}  // namespace alab
