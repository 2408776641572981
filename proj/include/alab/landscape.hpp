#pragma once

// Loss and merit landscapes as data: 1-D linear interpolation between two
// weight vectors and 2-D planes spanned by filter-normalized random
// directions around a center.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "alab/merit.hpp"
#include "alab/neural_map.hpp"
#include "alab/training_objectives.hpp"

namespace alab {

enum class LandscapeMetric { merit, train_loss };
std::string metric_name(LandscapeMetric m);
LandscapeMetric parse_metric(const std::string& s);

struct MetricSpec {
  LandscapeMetric metric = LandscapeMetric::merit;
  HeadConfig head;
  LossWeights weights;  // train_loss: the self-supervised loss at these weights
  MeritConfig merit;
};

/// Mean merit, or mean self-supervised loss, of the network over `xs`
/// (inference mode).
double evaluate_metric(const ProblemFamily& family, const Network& net, const Matrix& xs, const MetricSpec& spec);

struct LandscapeGrid {
  LandscapeMetric metric = LandscapeMetric::merit;
  std::vector<double> alphas;
  std::vector<double> betas;  // empty for 1-D grids
  Matrix values;              // alphas.size() x max(1, betas.size())
  io::json meta = io::json::object();

  bool is_plane() const { return !betas.empty(); }
};

/// θ(α) = (1-α)θ_a + αθ_b on n_points uniform α in [0, 1]. The endpoint
/// values are checked against direct evaluation (std::logic_error on drift).
LandscapeGrid interpolate_1d(const ProblemFamily& family, const Network& a, const Network& b, const Matrix& xs,
                             const MetricSpec& spec, std::size_t n_points);

struct PlaneDirections {
  Vector d1, d2;
};

/// Two Gaussian directions from (seed, landscape). Every weight row is rescaled
/// to the norm of the matching row of `center`; bias entries are zero. d2 is
/// then orthogonalized against d1. Throws if a weight matrix of `center` is
/// entirely zero.
PlaneDirections filter_normalized_directions(const Network& center, std::uint64_t seed);

/// Grid over center + α d1 + β d2 with α, β uniform in [-extent, extent].
LandscapeGrid random_plane_2d(const ProblemFamily& family, const Network& center, const Matrix& xs,
                              const MetricSpec& spec, double extent, std::size_t n_grid, std::uint64_t seed);

/// Held-out evaluation inputs for landscapes: `count` parameters of
/// `data_seed` from a range disjoint from training, validation, test and probe
/// draws.
Matrix landscape_parameters(const ProblemFamily& family, std::uint64_t data_seed, std::size_t count = 256);

/// Indices i in (0, n-1) with v[i-1] < v[i] > v[i+1].
std::size_t count_interior_strict_maxima(std::span<const double> values);

/// alpha,value or alpha,beta,value rows; values in shortest round-trip form.
std::string grid_csv(const LandscapeGrid& grid);
void write_grid(const LandscapeGrid& grid, const std::filesystem::path& csv_path);
/// Reads a grid CSV (and the .json sidecar metadata when present).
LandscapeGrid read_grid(const std::filesystem::path& csv_path);

}  // namespace alab
