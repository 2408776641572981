#include <cmath>

#include "alab/kernels.hpp"

namespace alab::kernels::scalar {

// The reductions mirror the 16-wide accumulator layout of the vector variant
// (four accumulators of four lanes) so both paths sum in the same order.

namespace {
constexpr std::size_t kLanes = 16;

double reduce_lanes(const double (&acc)[kLanes]) noexcept {
  double quad[4];
  for (std::size_t l = 0; l < 4; ++l) {
    quad[l] = (acc[l] + acc[4 + l]) + (acc[8 + l] + acc[12 + l]);
  }
  return (quad[0] + quad[2]) + (quad[1] + quad[3]);
}
}  // namespace

double dot(const double* a, const double* b, std::size_t n) noexcept {
  double acc[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] = std::fma(a[i + l], b[i + l], acc[l]);
  }
  double s = reduce_lanes(acc);
  for (; i < n; ++i) s = std::fma(a[i], b[i], s);
  return s;
}

double sum_squares(const double* a, std::size_t n) noexcept { return dot(a, a, n); }

void axpy(double* y, const double* x, double alpha, std::size_t n) noexcept {
  for (std::size_t i = 0; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void affine(double* out, const double* weight, const double* bias, const double* x,
            std::size_t rows, std::size_t cols) noexcept {
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = dot(weight + r * cols, x, cols) + (bias ? bias[r] : 0.0);
  }
}

void relu_forward(double* out, const double* in, std::size_t n) noexcept {
  for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_backward(double* grad, const double* pre, std::size_t n) noexcept {
  for (std::size_t i = 0; i < n; ++i) grad[i] = pre[i] > 0.0 ? grad[i] : 0.0;
}

void adamw_update(double* theta, double* m, double* v, const double* g, std::size_t n,
                  const AdamwCoeffs& c) noexcept {
  const double decay = 1.0 - c.lr * c.weight_decay;
  const double one_minus_b1 = 1.0 - c.beta1;
  const double one_minus_b2 = 1.0 - c.beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = g[i];
    m[i] = std::fma(c.beta1, m[i], one_minus_b1 * gi);
    v[i] = std::fma(c.beta2, v[i], (one_minus_b2 * gi) * gi);
    const double denom = std::sqrt(v[i] / c.bias_correction2) + c.eps;
    const double step = (m[i] / c.bias_correction1) / denom;
    theta[i] = theta[i] * decay - c.lr * step;
  }
}

}  // namespace alab::kernels::scalar
