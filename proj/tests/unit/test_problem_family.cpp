#include <gtest/gtest.h>

#include <cmath>

#include "alab/io.hpp"
#include "alab/problem_family.hpp"
#include "helpers.hpp"

namespace alab {
namespace {

Vector interior_point(const ProblemFamily& f, std::uint64_t seed, double scale = 0.3) {
  Vector y = f.anchor;
  const Vector d = test::gaussian(f.n(), seed, scale);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += d[i];
  return y;
}

TEST(ProblemFamily, GenerationIsDeterministic) {
  const ProblemFamily a = test::desk_family(), b = test::desk_family();
  EXPECT_EQ(a.A, b.A);
  EXPECT_EQ(a.Q, b.Q);
  EXPECT_EQ(a.anchor, b.anchor);
  const ProblemFamily c = generate_family({20, 10, 10, 3}, 1);
  EXPECT_NE(a.A, c.A);
}

TEST(ProblemFamily, AnchorIsStrictlyFeasible) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ProblemFamily f = generate_family({20, 10, 10, 3}, seed);
    const auto r = residuals(f, f.anchor, anchor_parameter(f));
    for (double g : r.ineq) EXPECT_LT(g, 0.0);
    for (double h : r.eq) EXPECT_NEAR(h, 0.0, 1e-12);
  }
}

TEST(ProblemFamily, RejectsBadDimensions) {
  EXPECT_THROW(generate_family({5, 0, 2, 2}, 0), std::invalid_argument);
  EXPECT_THROW(generate_family({5, 5, 2, 2}, 0), std::invalid_argument);
}

TEST(ProblemFamily, ResidualLayout) {
  const ProblemFamily f = test::tiny_family();
  const Vector y = interior_point(f, 1);
  const Vector x = anchor_parameter(f);
  const auto r = residuals(f, y, x);
  ASSERT_EQ(r.ineq.size(), f.n_ineq_rows());
  ASSERT_EQ(r.eq.size(), f.n_eq());
  ASSERT_EQ(r.stacked.size(), f.n_stacked());
  for (std::size_t i = 0; i < f.n(); ++i) {
    EXPECT_DOUBLE_EQ(r.ineq[f.n_soc() + i], f.lower[i] - y[i]);
    EXPECT_DOUBLE_EQ(r.ineq[f.n_soc() + f.n() + i], y[i] - f.upper[i]);
  }
  for (std::size_t i = 0; i < r.ineq.size(); ++i) EXPECT_EQ(r.stacked[i], std::max(r.ineq[i], 0.0));
  for (std::size_t i = 0; i < r.eq.size(); ++i) EXPECT_EQ(r.stacked[r.ineq.size() + i], r.eq[i]);
}

TEST(ProblemFamily, ObjectiveGradientMatchesFiniteDifferences) {
  const ProblemFamily f = test::desk_family();
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Vector y = interior_point(f, s, 1.0);
    const auto fn = [&](const Vector& v) { return objective(f, v); };
    EXPECT_LT(test::gradient_mismatch(fn, y, objective_grad(f, y)), 1e-5) << "seed " << s;
  }
}

TEST(ProblemFamily, ResidualJacobianTransposeMatchesFiniteDifferences) {
  const ProblemFamily f = test::desk_family();
  const Vector x = anchor_parameter(f);
  for (std::uint64_t s = 0; s < 10; ++s) {
    // Large moves so that some inequality rows are violated.
    const Vector y = interior_point(f, s, 2.0);
    const Vector w = test::gaussian(f.n_stacked(), 100 + s);
    const auto fn = [&](const Vector& v) {
      const auto r = residuals(f, v, x);
      double acc = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * r.stacked[i];
      return acc;
    };
    EXPECT_LT(test::gradient_mismatch(fn, y, residual_jacobian_vec(f, y, x, w)), 1e-5) << "seed " << s;
  }
}

TEST(ProblemFamily, ViolationEnergyGradient) {
  const ProblemFamily f = test::desk_family();
  const Vector x = anchor_parameter(f);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Vector y = interior_point(f, s, 2.0);
    Vector g(f.n());
    const double e = violation_energy(f, y, x, 10.0, 3.0, g);
    const auto r = residuals(f, y, x);
    double ref = 0.0;
    for (double h : r.eq) ref += 10.0 * h * h;
    for (double v : r.ineq) ref += 3.0 * std::max(v, 0.0) * std::max(v, 0.0);
    EXPECT_NEAR(e, ref, 1e-10 * std::max(1.0, ref));
    const auto fn = [&](const Vector& v) {
      Vector scratch(f.n());
      return violation_energy(f, v, x, 10.0, 3.0, scratch);
    };
    EXPECT_LT(test::gradient_mismatch(fn, y, g), 1e-6);
  }
}

TEST(ProblemFamily, InequalityEnergyHessianVectorProduct) {
  const ProblemFamily f = test::desk_family();
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Vector y = interior_point(f, s, 2.0);
    const Vector v = test::gaussian(f.n(), 50 + s);
    const Vector hv = ineq_energy_hvp(f, y, v);
    // Directional difference of the gradient.
    const double h = 1e-6;
    Vector yp = y, ym = y;
    for (std::size_t i = 0; i < y.size(); ++i) {
      yp[i] += h * v[i];
      ym[i] -= h * v[i];
    }
    Vector gp(f.n()), gm(f.n());
    ineq_energy(f, yp, gp);
    ineq_energy(f, ym, gm);
    double scale = 0.0;
    for (double x : hv) scale = std::max(scale, std::abs(x));
    for (std::size_t i = 0; i < y.size(); ++i) {
      EXPECT_NEAR((gp[i] - gm[i]) / (2 * h), hv[i], 1e-5 * std::max(1.0, scale)) << "seed " << s << " i " << i;
    }
  }
}

TEST(ProblemFamily, InequalityEnergyVanishesWhenFeasible) {
  const ProblemFamily f = test::desk_family();
  Vector g(f.n());
  EXPECT_EQ(ineq_energy(f, f.anchor, g), 0.0);
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(ProblemFamily, ConstraintJacobianIncludesEqualityRows) {
  const ProblemFamily f = test::tiny_family();
  const Vector y = interior_point(f, 3);
  const Vector w_ineq(f.n_ineq_rows(), 0.0);
  const Vector w_eq = test::gaussian(f.n_eq(), 4);
  const Vector out = constraint_jacobian_vec(f, y, w_ineq, w_eq);
  for (std::size_t j = 0; j < f.n(); ++j) {
    double ref = 0.0;
    for (std::size_t r = 0; r < f.n_eq(); ++r) ref += f.A(r, j) * w_eq[r];
    EXPECT_NEAR(out[j], ref, 1e-12);
  }
}

TEST(ProblemFamily, ParametersStayInTheDocumentedBox) {
  const ProblemFamily f = test::desk_family();
  const Vector x0 = anchor_parameter(f);
  const Matrix xs = sample_parameters(f, 3, 200);
  for (std::size_t b = 0; b < xs.rows(); ++b) {
    for (std::size_t j = 0; j < f.n_eq(); ++j) {
      EXPECT_LE(std::abs(xs(b, j) - x0[j]), f.options.param_halfwidth + 1e-12);
    }
  }
  // Stream derivation: an offset batch equals the tail of a longer batch.
  const Matrix tail = sample_parameters(f, 3, 5, 195);
  for (std::size_t b = 0; b < 5; ++b) {
    for (std::size_t j = 0; j < f.n_eq(); ++j) EXPECT_EQ(tail(b, j), xs(195 + b, j));
  }
}

TEST(ProblemFamily, CompletionOperatorsAreConsistent) {
  const ProblemFamily f = test::desk_family();
  // P A^T = 0 and P^2 = P for the null-space projector.
  for (std::size_t i = 0; i < f.n(); ++i) {
    for (std::size_t r = 0; r < f.n_eq(); ++r) {
      double acc = 0.0;
      for (std::size_t j = 0; j < f.n(); ++j) acc += f.nullspace_projector(i, j) * f.A(r, j);
      EXPECT_NEAR(acc, 0.0, 1e-10);
    }
  }
  EXPECT_LT(f.completion_cond, f.options.completion_cond_cap);
}

TEST(ProblemFamily, SaveLoadRoundTrip) {
  const auto dir = test::temp_dir("family");
  const ProblemFamily f = test::desk_family();
  save_family(f, dir / "fam.json");
  const ProblemFamily g = load_family(dir / "fam.json");
  EXPECT_EQ(f.Q, g.Q);
  EXPECT_EQ(f.p, g.p);
  EXPECT_EQ(f.A, g.A);
  EXPECT_EQ(f.anchor, g.anchor);
  EXPECT_EQ(f.lower, g.lower);
  EXPECT_EQ(f.free_idx, g.free_idx);
  EXPECT_EQ(f.completion_map, g.completion_map);
  ASSERT_EQ(f.soc.size(), g.soc.size());
  for (std::size_t i = 0; i < f.soc.size(); ++i) {
    EXPECT_EQ(f.soc[i].G, g.soc[i].G);
    EXPECT_EQ(f.soc[i].d, g.soc[i].d);
  }
  const Vector y = interior_point(f, 9);
  EXPECT_EQ(objective(f, y), objective(g, y));
}

TEST(ProblemFamily, LoadRejectsCorruptedBlob) {
  const auto dir = test::temp_dir("family-corrupt");
  save_family(test::tiny_family(), dir / "fam.json");
  std::string blob = io::read_file(dir / "fam.bin");
  blob[blob.size() / 2] ^= 0x1;
  io::write_file_atomic(dir / "fam.bin", blob);
  try {
    load_family(dir / "fam.json");
    FAIL() << "expected a format error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("fam"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace alab
