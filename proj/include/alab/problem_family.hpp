#pragma once

// Parametric nonsmooth nonconvex program
//
//   min_{y}  ½ yᵀQy + pᵀ sin(y) + λ‖y‖₂
//   s.t.     A y = x
//            ‖G_i cos(y) + h_i‖₂ ≤ c_iᵀy + d_i,   i = 1..n_ineq
//            L ≤ y ≤ U
//
// with the equality right-hand side x as the problem parameter.
//
// Residual layout (fixed, part of every file format):
//   ineq    = [ SOC slacks (n_ineq) ; L - y (n) ; y - U (n) ]
//   eq      = A y - x                                          (n_eq)
//   stacked = [ max(ineq, 0) ; eq ]

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "alab/tensor.hpp"

namespace alab {

/// Norm threshold below which ‖·‖₂ terms contribute a zero (sub)gradient.
inline constexpr double kNormEpsilon = 1e-12;

struct SocBlock {
  Matrix G;  // k x n
  Vector h;  // k
  Vector c;  // n
  double d = 0.0;
};

struct FamilyDims {
  std::size_t n = 0;
  std::size_t n_eq = 0;
  std::size_t n_ineq = 0;
  std::size_t k = 5;
};

struct GeneratorOptions {
  double lambda_reg = 1.0;
  double lower = -5.0;
  double upper = 5.0;
  double margin = 0.5;            // SOC slack at the anchor, and box inset for sampling it
  double param_halfwidth = 0.5;   // x = A y0 + U[-w, w]
  double completion_cond_cap = 1e6;
  int max_attempts = 25;
};

/// Immutable after construction; safe to share across threads.
struct ProblemFamily {
  FamilyDims dims;
  std::uint64_t seed = 0;
  GeneratorOptions options;

  Matrix Q;  // n x n, symmetric PSD
  Vector p;  // n
  double lambda_reg = 1.0;
  Matrix A;  // n_eq x n
  std::vector<SocBlock> soc;
  Vector lower;
  Vector upper;
  Vector anchor;  // certified strictly feasible for x0 = A anchor

  std::vector<std::size_t> free_idx;       // n - n_eq decision coordinates predicted directly
  std::vector<std::size_t> completed_idx;  // n_eq coordinates recovered by completion

  // Derived operators, filled by prepare_derived().
  Matrix completion_inv;       // (A[:, completed])^-1, n_eq x n_eq
  Matrix completion_map;       // (A[:, completed])^-1 A[:, free], n_eq x (n - n_eq)
  Matrix nullspace_projector;  // I - Aᵀ(AAᵀ)^-1 A, n x n
  double completion_cond = 0.0;

  std::size_t n() const { return dims.n; }
  std::size_t n_eq() const { return dims.n_eq; }
  std::size_t n_free() const { return dims.n - dims.n_eq; }
  std::size_t n_soc() const { return dims.n_ineq; }
  std::size_t n_ineq_rows() const { return dims.n_ineq + 2 * dims.n; }
  std::size_t n_stacked() const { return n_ineq_rows() + dims.n_eq; }
};

struct ConstraintResidual {
  Vector eq;       // n_eq
  Vector ineq;     // n_ineq + 2n, signed
  Vector stacked;  // [max(ineq, 0); eq]
};

/// Builds a family around a strictly feasible anchor. Deterministic in
/// (dims, seed, options). Throws std::runtime_error if no well-conditioned
/// completion block is found within options.max_attempts draws of A.
ProblemFamily generate_family(const FamilyDims& dims, std::uint64_t seed,
                              const GeneratorOptions& options = {});

/// Recomputes the completion and projection operators from A and the index
/// split. Throws if the completion block is singular.
void prepare_derived(ProblemFamily& family);

double objective(const ProblemFamily& family, std::span<const double> y);
Vector objective_grad(const ProblemFamily& family, std::span<const double> y);

ConstraintResidual residuals(const ProblemFamily& family, std::span<const double> y,
                             std::span<const double> x);

/// (∂c/∂y)ᵀ v for the stacked residual c; rows whose inequality is not
/// strictly violated contribute nothing.
Vector residual_jacobian_vec(const ProblemFamily& family, std::span<const double> y,
                             std::span<const double> x, std::span<const double> v);

/// Σ_i w_ineq[i] ∇g_i(y) + Aᵀ w_eq with no activity masking.
Vector constraint_jacobian_vec(const ProblemFamily& family, std::span<const double> y,
                               std::span<const double> w_ineq, std::span<const double> w_eq);

/// Penalty energy w_ineq‖max(g,0)‖² + w_eq‖h‖² and its y-gradient.
double violation_energy(const ProblemFamily& family, std::span<const double> y,
                        std::span<const double> x, double w_eq, double w_ineq,
                        std::span<double> grad_out);

/// φ(y) = ½‖max(g(y), 0)‖² over all inequality rows, its gradient and the
/// Hessian-vector product ∇²φ(y) v (generalized: inactive rows dropped).
double ineq_energy(const ProblemFamily& family, std::span<const double> y, std::span<double> grad_out);
Vector ineq_energy_hvp(const ProblemFamily& family, std::span<const double> y,
                       std::span<const double> v);

/// x = A anchor + U[-w, w]^{n_eq}, drawn from stream (seed, parameters, index).
Vector sample_parameter(const ProblemFamily& family, std::uint64_t seed, std::uint64_t index);
Matrix sample_parameters(const ProblemFamily& family, std::uint64_t seed, std::size_t count,
                         std::uint64_t first_index = 0);

/// Anchor parameter x0 = A anchor.
Vector anchor_parameter(const ProblemFamily& family);

/// SHA-256 over the problem data and anchor; identifies a family independent
/// of where its files live.
std::string family_fingerprint(const ProblemFamily& family);

// pf-v1 serialization: <stem>.json manifest + <stem>.bin blob.
void save_family(const ProblemFamily& family, const std::filesystem::path& manifest_path);
ProblemFamily load_family(const std::filesystem::path& manifest_path);

}  // namespace alab
