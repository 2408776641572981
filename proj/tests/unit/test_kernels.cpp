#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "alab/kernels.hpp"
#include "helpers.hpp"

namespace alab {
namespace {

namespace k = kernels;

class KernelEquivalence : public ::testing::TestWithParam<std::size_t> {
 protected:
  void SetUp() override {
    if (!k::avx2::available()) GTEST_SKIP() << "AVX2 not available on this CPU";
  }
};

TEST_P(KernelEquivalence, ReductionsAreBitIdentical) {
  const std::size_t n = GetParam();
  const Vector a = test::gaussian(n, 1), b = test::gaussian(n, 2);
  EXPECT_EQ(k::scalar::dot(a.data(), b.data(), n), k::avx2::dot(a.data(), b.data(), n));
  EXPECT_EQ(k::scalar::sum_squares(a.data(), n), k::avx2::sum_squares(a.data(), n));
}

TEST_P(KernelEquivalence, ElementwiseKernelsAreBitIdentical) {
  const std::size_t n = GetParam();
  const Vector x = test::gaussian(n, 3), y0 = test::gaussian(n, 4);
  Vector ys = y0, yv = y0;
  k::scalar::axpy(ys.data(), x.data(), 0.37, n);
  k::avx2::axpy(yv.data(), x.data(), 0.37, n);
  EXPECT_EQ(ys, yv);

  Vector rs(n), rv(n);
  k::scalar::relu_forward(rs.data(), x.data(), n);
  k::avx2::relu_forward(rv.data(), x.data(), n);
  EXPECT_EQ(rs, rv);

  Vector gs = y0, gv = y0;
  k::scalar::relu_backward(gs.data(), x.data(), n);
  k::avx2::relu_backward(gv.data(), x.data(), n);
  EXPECT_EQ(gs, gv);
}

TEST_P(KernelEquivalence, AffineIsBitIdentical) {
  const std::size_t cols = GetParam(), rows = 7;
  const Vector w = test::gaussian(rows * cols, 5), b = test::gaussian(rows, 6), x = test::gaussian(cols, 7);
  Vector os(rows), ov(rows);
  k::scalar::affine(os.data(), w.data(), b.data(), x.data(), rows, cols);
  k::avx2::affine(ov.data(), w.data(), b.data(), x.data(), rows, cols);
  EXPECT_EQ(os, ov);
  k::scalar::affine(os.data(), w.data(), nullptr, x.data(), rows, cols);
  k::avx2::affine(ov.data(), w.data(), nullptr, x.data(), rows, cols);
  EXPECT_EQ(os, ov);
}

TEST_P(KernelEquivalence, AdamwUpdateIsBitIdentical) {
  const std::size_t n = GetParam();
  Vector ts = test::gaussian(n, 8), ms = test::gaussian(n, 9, 0.1), vs(n);
  for (std::size_t i = 0; i < n; ++i) vs[i] = std::abs(ms[i]) + 0.01;
  Vector tv = ts, mv = ms, vv = vs;
  const Vector g = test::gaussian(n, 10);
  k::AdamwCoeffs c;
  c.lr = 3e-3;
  c.weight_decay = 1e-2;
  c.bias_correction1 = 1.0 - std::pow(c.beta1, 3);
  c.bias_correction2 = 1.0 - std::pow(c.beta2, 3);
  k::scalar::adamw_update(ts.data(), ms.data(), vs.data(), g.data(), n, c);
  k::avx2::adamw_update(tv.data(), mv.data(), vv.data(), g.data(), n, c);
  EXPECT_EQ(ts, tv);
  EXPECT_EQ(ms, mv);
  EXPECT_EQ(vs, vv);
}

// Lengths around the 4-wide and 16-wide boundaries plus larger tails.
INSTANTIATE_TEST_SUITE_P(Lengths, KernelEquivalence, ::testing::Values(0, 1, 3, 4, 5, 15, 16, 17, 31, 33, 128, 1001));

TEST(Kernels, DotMatchesExtendedPrecisionReference) {
  for (std::size_t n : {1u, 16u, 100u, 4097u}) {
    const Vector a = test::gaussian(n, 11), b = test::gaussian(n, 12);
    long double ref = 0.0L, mag = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      ref += static_cast<long double>(a[i]) * b[i];
      mag += std::abs(static_cast<long double>(a[i]) * b[i]);
    }
    EXPECT_NEAR(k::scalar::dot(a.data(), b.data(), n), static_cast<double>(ref),
                static_cast<double>(mag) * 1e-15 * std::log2(static_cast<double>(n) + 2.0));
  }
}

TEST(Kernels, AdamwUpdateMatchesTextbookFormula) {
  Vector theta = {1.0, -2.0}, m = {0.0, 0.0}, v = {0.0, 0.0};
  const Vector g = {0.5, -0.25};
  k::AdamwCoeffs c;
  c.lr = 0.1;
  c.weight_decay = 0.01;
  c.bias_correction1 = 1.0 - c.beta1;
  c.bias_correction2 = 1.0 - c.beta2;
  k::scalar::adamw_update(theta.data(), m.data(), v.data(), g.data(), 2, c);
  // First step: m_hat = g, v_hat = g^2, so the step is sign(g) * |g| / (|g| + eps).
  for (std::size_t i = 0; i < 2; ++i) {
    const double start = i == 0 ? 1.0 : -2.0;
    const double expected = start * (1.0 - 0.1 * 0.01) - 0.1 * g[i] / (std::abs(g[i]) + 1e-8);
    EXPECT_NEAR(theta[i], expected, 1e-15);
  }
}

TEST(Kernels, ForceIsaSwitchesDispatch) {
  const k::Isa before = k::active_isa();
  ASSERT_TRUE(k::force_isa(k::Isa::scalar));
  EXPECT_EQ(k::active_isa(), k::Isa::scalar);
  EXPECT_EQ(k::isa_name(k::Isa::scalar), "scalar");
  EXPECT_EQ(k::force_isa(k::Isa::avx2), k::avx2::available());
  k::force_isa(before);
}

}  // namespace
}  // namespace alab
