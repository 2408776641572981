#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>

#include "alab/problem_family.hpp"
#include "alab/rng.hpp"

namespace alab::test {

inline ProblemFamily tiny_family(std::uint64_t seed = 1) { return generate_family({6, 3, 3, 2}, seed); }
inline ProblemFamily desk_family() { return generate_family({20, 10, 10, 3}, 0); }

/// Central difference of f along coordinate i of `at`.
inline double central_difference(const std::function<double(const Vector&)>& f, Vector at, std::size_t i,
                                 double h = 1e-6) {
  const double x0 = at[i];
  at[i] = x0 + h;
  const double up = f(at);
  at[i] = x0 - h;
  const double down = f(at);
  return (up - down) / (2.0 * h);
}

/// Worst |fd - g| / max(|fd|, |g|, rel_floor * ||g||_inf) over all coordinates.
inline double gradient_mismatch(const std::function<double(const Vector&)>& f, const Vector& at, const Vector& grad,
                                double rel_floor = 1e-3, double h = 1e-6) {
  double gmax = 0.0;
  for (double g : grad) gmax = std::max(gmax, std::abs(g));
  double worst = 0.0;
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double fd = central_difference(f, at, i, h);
    worst = std::max(worst, std::abs(fd - grad[i]) / std::max({std::abs(fd), std::abs(grad[i]), rel_floor * gmax}));
  }
  return worst;
}

inline Vector gaussian(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  Rng rng = make_rng(seed, Stream::perturbation, 77);
  Vector v(n);
  for (auto& x : v) x = scale * standard_normal(rng);
  return v;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("alab-unit-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace alab::test
