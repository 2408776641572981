// Compiled with -mavx2 -mfma. Nothing in here may run before avx2::available()
// has returned true.

#include "alab/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

#include <cmath>

namespace alab::kernels::avx2 {

bool available() noexcept {
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

namespace {

inline double hsum_quads(__m256d a0, __m256d a1, __m256d a2, __m256d a3) noexcept {
  const __m256d q = _mm256_add_pd(_mm256_add_pd(a0, a1), _mm256_add_pd(a2, a3));
  const __m128d lo = _mm256_castpd256_pd128(q);
  const __m128d hi = _mm256_extractf128_pd(q, 1);
  const __m128d pair = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(pair) + _mm_cvtsd_f64(_mm_unpackhi_pd(pair, pair));
}

}  // namespace

double dot(const double* a, const double* b, std::size_t n) noexcept {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  __m256d acc2 = _mm256_setzero_pd();
  __m256d acc3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    acc2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8), _mm256_loadu_pd(b + i + 8), acc2);
    acc3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12), _mm256_loadu_pd(b + i + 12), acc3);
  }
  double s = hsum_quads(acc0, acc1, acc2, acc3);
  for (; i < n; ++i) s = std::fma(a[i], b[i], s);
  return s;
}

double sum_squares(const double* a, std::size_t n) noexcept { return dot(a, a, n); }

void axpy(double* y, const double* x, double alpha, std::size_t n) noexcept {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void affine(double* out, const double* weight, const double* bias, const double* x,
            std::size_t rows, std::size_t cols) noexcept {
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = dot(weight + r * cols, x, cols) + (bias ? bias[r] : 0.0);
  }
}

void relu_forward(double* out, const double* in, std::size_t n) noexcept {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  // max_pd returns the second operand for NaN and signed zeros, matching the
  // scalar `in > 0 ? in : 0` exactly.
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(in + i), zero));
  for (; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_backward(double* grad, const double* pre, std::size_t n) noexcept {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(pre + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(grad + i, _mm256_and_pd(_mm256_loadu_pd(grad + i), mask));
  }
  for (; i < n; ++i) grad[i] = pre[i] > 0.0 ? grad[i] : 0.0;
}

void adamw_update(double* theta, double* m, double* v, const double* g, std::size_t n,
                  const AdamwCoeffs& c) noexcept {
  const double decay_s = 1.0 - c.lr * c.weight_decay;
  const __m256d decay = _mm256_set1_pd(decay_s);
  const __m256d b1 = _mm256_set1_pd(c.beta1);
  const __m256d b2 = _mm256_set1_pd(c.beta2);
  const __m256d omb1 = _mm256_set1_pd(1.0 - c.beta1);
  const __m256d omb2 = _mm256_set1_pd(1.0 - c.beta2);
  const __m256d bc1 = _mm256_set1_pd(c.bias_correction1);
  const __m256d bc2 = _mm256_set1_pd(c.bias_correction2);
  const __m256d eps = _mm256_set1_pd(c.eps);
  const __m256d lr = _mm256_set1_pd(c.lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gi = _mm256_loadu_pd(g + i);
    const __m256d mi = _mm256_fmadd_pd(b1, _mm256_loadu_pd(m + i), _mm256_mul_pd(omb1, gi));
    const __m256d vi =
        _mm256_fmadd_pd(b2, _mm256_loadu_pd(v + i), _mm256_mul_pd(_mm256_mul_pd(omb2, gi), gi));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(_mm256_div_pd(vi, bc2)), eps);
    const __m256d step = _mm256_div_pd(_mm256_div_pd(mi, bc1), denom);
    const __m256d ti = _mm256_loadu_pd(theta + i);
    _mm256_storeu_pd(theta + i, _mm256_sub_pd(_mm256_mul_pd(ti, decay), _mm256_mul_pd(lr, step)));
  }
  if (i < n) scalar::adamw_update(theta + i, m + i, v + i, g + i, n - i, c);
}

}  // namespace alab::kernels::avx2

#else

namespace alab::kernels::avx2 {

bool available() noexcept { return false; }

// Never dispatched to; forward to the reference so the symbols exist.
double dot(const double* a, const double* b, std::size_t n) noexcept { return scalar::dot(a, b, n); }
double sum_squares(const double* a, std::size_t n) noexcept { return scalar::sum_squares(a, n); }
void axpy(double* y, const double* x, double alpha, std::size_t n) noexcept { scalar::axpy(y, x, alpha, n); }
void affine(double* out, const double* weight, const double* bias, const double* x, std::size_t rows,
            std::size_t cols) noexcept {
  scalar::affine(out, weight, bias, x, rows, cols);
}
void relu_forward(double* out, const double* in, std::size_t n) noexcept { scalar::relu_forward(out, in, n); }
void relu_backward(double* grad, const double* pre, std::size_t n) noexcept { scalar::relu_backward(grad, pre, n); }
void adamw_update(double* theta, double* m, double* v, const double* g, std::size_t n,
                  const AdamwCoeffs& c) noexcept {
  scalar::adamw_update(theta, m, v, g, n, c);
}

}  // namespace alab::kernels::avx2

#endif
