#pragma once

// Measurable counterparts of the basin-admissibility analysis: error
// decomposition along a supervised trajectory, the effective-target gap, an
// empirical basin-radius probe and the label-count scaling fit.
//
// The true optimum is unavailable for these nonconvex instances, so every
// "oracle" quantity below is relative to the oracle solver tier.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "alab/label_factory.hpp"
#include "alab/pipeline.hpp"

namespace alab {

/// Mean Euclidean distance between corresponding rows.
double mean_row_distance(const Matrix& a, const Matrix& b);

struct TrajectoryPoint {
  std::size_t epoch = 0;
  double fitting_error = 0.0;  // mean ‖π(x) - ŷ(x)‖ on the diagnostic subset
  double total_error = 0.0;    // mean ‖π(x) - y*(x)‖
  double val_merit = 0.0;
};
io::json to_json(const TrajectoryPoint& p);

struct Decomposition {
  double delta_proxy = 0.0;  // mean ‖ŷ - y*‖
  std::vector<TrajectoryPoint> points;  // epoch 0 (initialization) first
  std::vector<Matrix> predictions;      // diagnostic-subset outputs per point
  double d_perp = 0.0;
  double max_triangle_slack = 0.0;  // max over points of total - fitting - delta_proxy
  std::size_t best_merit_epoch = 0;
};

/// Supervised pretraining on (xs, labels) with per-evaluation logging of the
/// fitting and total errors on the first oracle_labels.rows() inputs. Throws
/// std::invalid_argument when the oracle labels do not fit that subset and
/// std::logic_error if a logged point breaks the triangle inequality.
Decomposition trace_error_decomposition(const ProblemFamily& family, const Matrix& xs, const Matrix& labels,
                                        const Matrix& oracle_labels, const Matrix& val_xs, const Stage2Plan& plan,
                                        const Architecture& arch, std::uint64_t seed, const MeritConfig& merit = {});

/// Mean over inputs of the closest logged prediction to the oracle label.
double effective_target_gap(std::span<const Matrix> predictions, const Matrix& oracle_labels);

// ---------------------------------------------------------------------------
// Basin-radius probe

struct BasinProbeConfig {
  std::vector<double> radii;            // output-space displacements
  std::vector<std::uint64_t> seeds{0};  // perturbation and training seeds
  double tol = 0.05;                    // success: merit <= ref + tol * |ref|
  double threshold = 0.8;               // success rate defining "admissible"
  bool cold_control = true;             // also train from fresh inits
};

struct BasinRow {
  double radius = 0.0;
  std::vector<double> scales;         // parameter-noise scale per seed
  std::vector<double> displacements;  // achieved mean output displacement per seed
  std::vector<double> final_merits;
  std::size_t successes = 0;
  std::size_t trials = 0;
  double raw_rate = 0.0;
  double smoothed_rate = 0.0;  // running minimum over increasing radius
};

struct BasinProbe {
  std::vector<double> reference_merits;  // SSL from the unperturbed reference, per seed
  std::vector<BasinRow> rows;            // ascending radius
  double admissible_radius = 0.0;        // largest radius with smoothed rate >= threshold
  std::optional<double> cold_rate;
  std::vector<double> cold_merits;
};

/// Adds isotropic Gaussian noise to θ, scaled by bisection so that the mean
/// output displacement over `xs` is `radius` (to a relative 1e-6).
Network perturb_to_displacement(const Network& reference, const Matrix& xs, double radius, std::uint64_t seed,
                                double* scale = nullptr, double* displacement = nullptr);

BasinProbe probe_basin_radius(const ProblemFamily& family, const Network& reference, const Matrix& train_xs,
                              const Matrix& val_xs, const Stage3Plan& plan, const BasinProbeConfig& cfg,
                              const MeritConfig& merit = {});
io::json to_json(const BasinProbe& probe);

// ---------------------------------------------------------------------------
// Label-count scaling

struct LogLogFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};
/// Least squares of log(y) on log(x); needs >= 2 points with positive values.
LogLogFit fit_log_log(std::span<const double> xs, std::span<const double> ys);

struct Elbow {
  std::size_t index = 0;     // point farthest below the chord on log-x axes
  double drop_before = 0.0;  // values[0] - values[index]
  double change_after = 0.0; // |values[index] - values.back()|
  bool drop_then_plateau = false;  // decreasing and drop_before > 2 * change_after
};
/// Kneedle-style elbow on (log count, value) for a decreasing curve.
Elbow detect_elbow(std::span<const double> counts, std::span<const double> values);

struct ScalingRequest {
  std::vector<std::size_t> sample_counts;  // increasing, at least 3
  SolverBudget budget = tier_budget(BudgetTier::cheap);
  Stage2Plan stage2;
  std::optional<Stage3Plan> stage3;  // run self-supervised training after warm start
  std::size_t n_inputs = 0;          // stage-3 input pool; 0 means the largest count
  std::vector<std::uint64_t> seeds{0};
  Architecture arch;
  MeritConfig merit;
  Matrix val_xs;        // early stopping
  Matrix eval_xs;       // merit reported per run
  Matrix probe_xs;      // fixed probe set for the total error
  Matrix probe_oracle;  // oracle labels of probe_xs
};

struct ScalingRun {
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  double total_error = 0.0;   // warm start vs oracle on the probe set
  double warm_merit = 0.0;    // warm start on eval_xs
  double final_merit = 0.0;   // after stage 3, or the warm start without it
  std::size_t best_epoch = 0;
};

struct ScalingFit {
  std::vector<std::size_t> sample_counts;
  std::vector<double> achieved_errors;  // mean over seeds
  std::vector<double> mean_merits;      // mean final merit over seeds
  std::vector<double> min_merits;       // per-seed spread
  std::vector<double> max_merits;
  std::vector<ScalingRun> runs;
  double fitted_slope = 0.0;
  double fit_r2 = 0.0;
  Elbow elbow;
};

/// For each count N and seed: the first N labels of a dataset of the largest
/// count (so smaller sets are nested in larger ones), supervised warm start,
/// optional stage 3 on a fixed input pool. Fits log(error) against log(N).
ScalingFit fit_sample_scaling(const ProblemFamily& family, const ScalingRequest& req);
io::json to_json(const ScalingFit& fit);
std::string scaling_csv(const ScalingFit& fit);

}  // namespace alab
