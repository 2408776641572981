#pragma once

// Training losses on the surrogate's predictions: supervised Huber regression
// with violation penalties, the self-supervised penalty loss, the adaptive
// penalty schedule, DC3 completion + correction, and the mixed variants.
//
// Every batch loss is a mean over samples and returns the θ-gradient through
// neural_map's backward pass.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "alab/io.hpp"
#include "alab/neural_map.hpp"
#include "alab/problem_family.hpp"

namespace alab {

struct AdaptiveSchedule {
  double rate = 2.0;
  double eq_cap = 500.0;
  double ineq_cap = 100.0;
  std::size_t patience = 3;  // validation checks without improvement before escalating
};

struct LossWeights {
  double lambda_obj = 1.0;
  double lambda_eq = 10.0;
  double lambda_ineq = 10.0;
  double lambda_sup = 1.0;
  double huber_delta = 1.0;
  std::optional<AdaptiveSchedule> adaptive;

  void validate() const;
};

struct Dc3Config {
  std::size_t correction_steps = 20;
  double correction_lr = 1e-6;

  void validate() const;
};

io::json to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const io::json& j);
io::json to_json(const Dc3Config& c);
Dc3Config dc3_from_json(const io::json& j);

double huber(double r, double delta);
double huber_grad(double r, double delta);

struct LossResult {
  double loss = 0.0;
  Vector grad;  // ∂loss/∂θ
};

/// Forward-pass options shared by all batch losses.
struct PassOptions {
  Mode mode = Mode::train;
  Rng* rng = nullptr;  // dropout stream; required in train mode when dropout > 0
};

// Per-sample output-space terms; each returns the value and adds its y-gradient
// into grad (which must have length n).
double supervised_term(const ProblemFamily& family, std::span<const double> y, std::span<const double> label,
                       std::span<const double> x, const LossWeights& w, std::span<double> grad);
double self_supervised_term(const ProblemFamily& family, std::span<const double> y, std::span<const double> x,
                            const LossWeights& w, std::span<double> grad);

/// mean[λ_sup Σ Huber_δ(π - ŷ) + λ_obj f(π) + λ_eq‖h‖² + λ_ineq‖max(g,0)‖²].
LossResult sl_loss_and_grad(const ProblemFamily& family, const Network& net, const Matrix& xs, const Matrix& labels,
                            const LossWeights& w, const PassOptions& pass = {});

/// mean[λ_obj f(π) + λ_eq‖h‖² + λ_ineq‖max(g,0)‖²].
LossResult ssl_penalty_loss_and_grad(const ProblemFamily& family, const Network& net, const Matrix& xs,
                                     const LossWeights& w, const PassOptions& pass = {});

/// Escalates λ_eq and λ_ineq by `rate` (clamped at the caps) when the minimum
/// of the last `patience` entries of `history` is no better than the minimum
/// before them. Weights without an adaptive block are returned unchanged.
LossWeights adaptive_update(const LossWeights& w, std::span<const double> history);

// ---------------------------------------------------------------------------
// DC3

struct Dc3Trace {
  Vector x;
  std::vector<Vector> iterates;  // y after completion, then after each correction step
  const Vector& output() const { return iterates.back(); }
};

/// Completes the free coordinates so that A y = x, then takes
/// `correction_steps` projected gradient steps on ½‖max(g,0)‖².
Dc3Trace dc3_forward(const ProblemFamily& family, std::span<const double> partial, std::span<const double> x,
                     const Dc3Config& cfg);

/// Gradient w.r.t. the free coordinates given ∂loss/∂y_out.
Vector dc3_backward(const ProblemFamily& family, const Dc3Trace& trace, std::span<const double> output_grad,
                    const Dc3Config& cfg);

/// Self-supervised loss on DC3 outputs. The network predicts all n
/// coordinates; only the free ones feed the completion.
LossResult dc3_loss_and_grad(const ProblemFamily& family, const Network& net, const Matrix& xs, const LossWeights& w,
                             const Dc3Config& cfg, const PassOptions& pass = {});

enum class Variant { hybrid, semi_supervised, warmstart_feasibility_only, warmstart_obj_plus_feasibility };
std::string variant_name(Variant v);
Variant parse_variant(const std::string& s);

/// hybrid: λ_sup Huber on the labeled batch plus the self-supervised loss on
///   the same inputs.
/// semi_supervised: sl loss on the labeled batch plus self-supervised loss on
///   the unlabeled one (skipped when empty).
/// warmstart_*: self-supervised loss (λ_obj forced to 0 for feasibility_only)
///   on the unlabeled inputs, or the labeled inputs when none are given.
LossResult variant_losses(const ProblemFamily& family, const Network& net, const Matrix& labeled_xs,
                          const Matrix& labels, const Matrix& unlabeled_xs, const LossWeights& w, Variant variant,
                          const PassOptions& pass = {});

// ---------------------------------------------------------------------------
// Prediction heads

enum class Head { direct, dc3 };

struct HeadConfig {
  Head kind = Head::direct;
  Dc3Config dc3;
};

io::json to_json(const HeadConfig& h);
HeadConfig head_from_json(const io::json& j);

/// Inference-mode predictions, optionally passed through DC3.
Matrix predict(const ProblemFamily& family, const Network& net, const Matrix& xs, const HeadConfig& head = {});

}  // namespace alab
