#pragma once

#include <span>
#include <string>
#include <vector>

#include "alab/io.hpp"
#include "alab/problem_family.hpp"

namespace alab {

/// Evaluation penalty weight used throughout unless configured otherwise.
inline constexpr double kDefaultEvalRho = 1e5;

struct MeritConfig {
  double rho = kDefaultEvalRho;
};

/// Per-instance statistics of one candidate solution.
struct SolutionStats {
  double objective = 0.0;
  double eq_l1 = 0.0;    // Σ|A y - x|
  double ineq_l1 = 0.0;  // Σ max(g, 0)
  double residual_sq = 0.0;
  double merit = 0.0;
};

SolutionStats solution_stats(const ProblemFamily& family, std::span<const double> y,
                             std::span<const double> x, const MeritConfig& cfg);

/// f(y;x) + ρ‖c(y,x)‖².
double merit(const ProblemFamily& family, std::span<const double> y, std::span<const double> x,
             const MeritConfig& cfg);

struct MeritReport {
  double mean_objective = 0.0;
  double max_objective = 0.0;
  double mean_eq_l1 = 0.0;
  double max_eq_l1 = 0.0;
  double mean_ineq_l1 = 0.0;
  double max_ineq_l1 = 0.0;
  double mean_merit = 0.0;
  double max_merit = 0.0;
  std::size_t n_instances = 0;
};

/// Aggregates per-instance stats. Sums are compensated (Neumaier) so the
/// result does not depend on instance order beyond the last few ulps.
MeritReport aggregate(std::span<const SolutionStats> stats);

/// Report over predicted solutions, one row of `ys` per row of `xs`.
MeritReport evaluate_solutions(const ProblemFamily& family, const Matrix& ys, const Matrix& xs,
                               const MeritConfig& cfg);

std::string merit_csv_header();
/// One CSV row; `label` fills the leading `run` column.
std::string merit_csv_row(const std::string& label, const MeritReport& r);
io::json to_json(const MeritReport& r);
MeritReport merit_report_from_json(const io::json& j);

/// Neumaier-compensated accumulator.
class CompensatedSum {
 public:
  void add(double v);
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace alab
