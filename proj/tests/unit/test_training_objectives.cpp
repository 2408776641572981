#include <gtest/gtest.h>

#include <cmath>

#include "alab/training_objectives.hpp"
#include "helpers.hpp"

namespace alab {
namespace {

Vector perturbed_anchor(const ProblemFamily& f, std::uint64_t seed, double scale) {
  Vector y = f.anchor;
  const Vector noise = test::gaussian(y.size(), seed, scale);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += noise[i];
  return y;
}

TEST(TrainingObjectives, HuberIsQuadraticThenLinear) {
  EXPECT_DOUBLE_EQ(huber(0.5, 1.0), 0.125);
  EXPECT_DOUBLE_EQ(huber(-3.0, 1.0), 2.5);
  EXPECT_DOUBLE_EQ(huber_grad(0.5, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(huber_grad(-3.0, 1.0), -1.0);
  for (double r : {-2.3, -0.4, 0.1, 0.9, 1.7}) {
    const double fd = (huber(r + 1e-6, 0.8) - huber(r - 1e-6, 0.8)) / 2e-6;
    EXPECT_NEAR(huber_grad(r, 0.8), fd, 1e-8);
  }
}

TEST(TrainingObjectives, OutputSpaceTermsMatchFiniteDifferences) {
  const ProblemFamily f = test::tiny_family();
  const Vector x = sample_parameter(f, 0, 3);
  const Vector label = perturbed_anchor(f, 1, 0.3);
  const Vector y = perturbed_anchor(f, 2, 2.0);
  LossWeights w;
  w.lambda_sup = 2.0;
  w.huber_delta = 0.5;

  Vector g_sup(f.n(), 0.0), g_ssl(f.n(), 0.0);
  supervised_term(f, y, label, x, w, g_sup);
  self_supervised_term(f, y, x, w, g_ssl);
  const auto sup = [&](const Vector& v) {
    Vector scratch(f.n(), 0.0);
    return supervised_term(f, v, label, x, w, scratch);
  };
  const auto ssl = [&](const Vector& v) {
    Vector scratch(f.n(), 0.0);
    return self_supervised_term(f, v, x, w, scratch);
  };
  EXPECT_LT(test::gradient_mismatch(sup, y, g_sup), 1e-6);
  EXPECT_LT(test::gradient_mismatch(ssl, y, g_ssl), 1e-6);
}

TEST(TrainingObjectives, TermsAccumulateIntoGrad) {
  const ProblemFamily f = test::tiny_family();
  const Vector x = sample_parameter(f, 0, 0);
  const Vector y = perturbed_anchor(f, 3, 1.0);
  const LossWeights w;
  Vector once(f.n(), 0.0), twice(f.n(), 0.0);
  self_supervised_term(f, y, x, w, once);
  self_supervised_term(f, y, x, w, twice);
  self_supervised_term(f, y, x, w, twice);
  for (std::size_t i = 0; i < f.n(); ++i) EXPECT_NEAR(twice[i], 2.0 * once[i], 1e-12 * (1.0 + std::abs(once[i])));
}

TEST(TrainingObjectives, PureObjectiveWeightsGiveMeanObjective) {
  const ProblemFamily f = test::tiny_family();
  const Network net = init_network(mlp(f.n_eq(), 1, 8, f.n()), 0);
  const Matrix xs = sample_parameters(f, 0, 6);
  LossWeights w;
  w.lambda_eq = 0.0;
  w.lambda_ineq = 0.0;
  const LossResult r = ssl_penalty_loss_and_grad(f, net, xs, w, {Mode::infer});
  const Matrix ys = forward(net, xs);
  double mean = 0.0;
  for (std::size_t b = 0; b < xs.rows(); ++b) mean += objective(f, ys.row(b)) / 6.0;
  EXPECT_NEAR(r.loss, mean, 1e-12 * std::abs(mean));
}

TEST(TrainingObjectives, FeasibilityOnlyWarmStartDropsTheObjective) {
  const ProblemFamily f = test::tiny_family();
  const Network net = init_network(mlp(f.n_eq(), 1, 8, f.n()), 1);
  const Matrix xs = sample_parameters(f, 0, 5);
  LossWeights w;
  w.lambda_obj = 3.0;
  LossWeights no_obj = w;
  no_obj.lambda_obj = 0.0;
  const LossResult a =
      variant_losses(f, net, xs, Matrix(5, f.n()), Matrix(), w, Variant::warmstart_feasibility_only, {Mode::infer});
  const LossResult b = ssl_penalty_loss_and_grad(f, net, xs, no_obj, {Mode::infer});
  EXPECT_DOUBLE_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grad, b.grad);
}

TEST(TrainingObjectives, Dc3BackwardMatchesFiniteDifferences) {
  const ProblemFamily f = test::tiny_family();
  const Vector x = sample_parameter(f, 0, 1);
  for (std::size_t steps : {0u, 1u, 4u}) {
    Dc3Config cfg;
    cfg.correction_steps = steps;
    cfg.correction_lr = 1e-2;
    const Vector y0 = perturbed_anchor(f, 4, 3.0);
    Vector partial(f.n_free());
    for (std::size_t j = 0; j < partial.size(); ++j) partial[j] = y0[f.free_idx[j]];
    const Vector w = test::gaussian(f.n(), 5);
    const Dc3Trace trace = dc3_forward(f, partial, x, cfg);
    const Vector g = dc3_backward(f, trace, w, cfg);
    const auto fn = [&](const Vector& p) {
      const Vector out = dc3_forward(f, p, x, cfg).output();
      double acc = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) acc += w[i] * out[i];
      return acc;
    };
    EXPECT_LT(test::gradient_mismatch(fn, partial, g), 1e-6) << steps << " correction steps";
  }
}

TEST(TrainingObjectives, Dc3KeepsEqualityAndLogsEveryIterate) {
  const ProblemFamily f = test::tiny_family();
  const Vector x = sample_parameter(f, 0, 2);
  Dc3Config cfg;
  cfg.correction_steps = 5;
  cfg.correction_lr = 1e-2;
  const Dc3Trace trace = dc3_forward(f, test::gaussian(f.n_free(), 6, 4.0), x, cfg);
  ASSERT_EQ(trace.iterates.size(), 6u);
  for (const auto& y : trace.iterates) {
    for (double r : residuals(f, y, x).eq) EXPECT_LE(std::abs(r), 1e-9);
  }
  EXPECT_THROW(dc3_forward(f, Vector(f.n()), x, cfg), std::invalid_argument);
}

TEST(TrainingObjectives, PredictWithDc3HeadIsEqualityFeasible) {
  const ProblemFamily f = test::tiny_family();
  const Network net = init_network(mlp(f.n_eq(), 1, 8, f.n()), 2);
  const Matrix xs = sample_parameters(f, 0, 10);
  const Matrix ys = predict(f, net, xs, {Head::dc3, {}});
  for (std::size_t b = 0; b < xs.rows(); ++b) {
    for (double r : residuals(f, ys.row(b), xs.row(b)).eq) EXPECT_LE(std::abs(r), 1e-9);
  }
}

TEST(TrainingObjectives, AdaptiveScheduleEscalatesOnStallAndClamps) {
  LossWeights w;
  w.lambda_eq = 100.0;
  w.lambda_ineq = 80.0;
  w.adaptive = AdaptiveSchedule{2.0, 500.0, 100.0, 2};
  const std::vector<double> improving = {5.0, 4.0, 3.0, 2.0};
  const std::vector<double> stalled = {5.0, 1.0, 3.0, 2.0};
  EXPECT_EQ(adaptive_update(w, improving).lambda_eq, 100.0);
  const LossWeights up = adaptive_update(w, stalled);
  EXPECT_EQ(up.lambda_eq, 200.0);
  EXPECT_EQ(up.lambda_ineq, 100.0);  // capped
  EXPECT_EQ(adaptive_update(w, std::vector<double>{5.0, 6.0}).lambda_eq, 100.0);  // not enough history
  LossWeights fixed = w;
  fixed.adaptive.reset();
  EXPECT_EQ(adaptive_update(fixed, stalled).lambda_eq, 100.0);
  EXPECT_THROW(adaptive_update(w, std::vector<double>{}), std::invalid_argument);
}

void expect_invalid(const LossWeights& w, const std::string& field) {
  try {
    w.validate();
    FAIL() << "no error for " << field;
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
  }
}

TEST(TrainingObjectives, WeightValidationNamesTheField) {
  LossWeights w;
  w.lambda_eq = -1.0;
  expect_invalid(w, "weights.lambda_eq");
  w = {};
  w.huber_delta = 0.0;
  expect_invalid(w, "weights.huber_delta");
  w = {};
  w.adaptive = AdaptiveSchedule{1.0};
  expect_invalid(w, "weights.adaptive.rate");
  Dc3Config c;
  c.correction_lr = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(TrainingObjectives, ConfigJsonRoundTrip) {
  LossWeights w;
  w.lambda_obj = 0.5;
  w.lambda_sup = 3.0;
  w.adaptive = AdaptiveSchedule{1.5, 600.0, 200.0, 4};
  const LossWeights back = loss_weights_from_json(to_json(w));
  EXPECT_EQ(to_json(back), to_json(w));
  Dc3Config c;
  c.correction_steps = 7;
  c.correction_lr = 3e-3;
  const Dc3Config cb = dc3_from_json(to_json(c));
  EXPECT_EQ(cb.correction_steps, 7u);
  EXPECT_EQ(cb.correction_lr, 3e-3);
  for (auto v : {Variant::hybrid, Variant::semi_supervised, Variant::warmstart_feasibility_only,
                 Variant::warmstart_obj_plus_feasibility}) {
    EXPECT_EQ(parse_variant(variant_name(v)), v);
  }
}

}  // namespace
}  // namespace alab
