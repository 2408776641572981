#pragma once

// Dense inner loops of the surrogate network and its optimizer.
//
// Every kernel has a scalar reference in `kernels::scalar` and, on x86-64, an
// AVX2+FMA variant in `kernels::avx2`. The unqualified entry points dispatch to
// the best variant the CPU supports, chosen once at first use. Elementwise
// kernels are bit-identical across variants; reductions (dot, sum_squares,
// affine) use a fixed lane partition so each variant is deterministic, and the
// variants agree to rounding.
//
// Set AMORTIZE_LAB_ISA=scalar to force the reference path.

#include <cstddef>
#include <string_view>

namespace alab::kernels {

enum class Isa { scalar, avx2 };

struct AdamwCoeffs {
  double lr = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double bias_correction1 = 1.0;  // 1 - beta1^t
  double bias_correction2 = 1.0;  // 1 - beta2^t
};

#define ALAB_KERNEL_DECLS                                                                    \
  double dot(const double* a, const double* b, std::size_t n) noexcept;                     \
  double sum_squares(const double* a, std::size_t n) noexcept;                              \
  void axpy(double* y, const double* x, double alpha, std::size_t n) noexcept;              \
  void affine(double* out, const double* weight, const double* bias, const double* x,       \
              std::size_t rows, std::size_t cols) noexcept;                                 \
  void relu_forward(double* out, const double* in, std::size_t n) noexcept;                 \
  void relu_backward(double* grad, const double* pre, std::size_t n) noexcept;              \
  void adamw_update(double* theta, double* m, double* v, const double* g, std::size_t n,    \
                    const AdamwCoeffs& c) noexcept;

namespace scalar {
ALAB_KERNEL_DECLS
}

namespace avx2 {
ALAB_KERNEL_DECLS
/// True when this binary carries the AVX2 variants and the CPU can run them.
bool available() noexcept;
}  // namespace avx2

ALAB_KERNEL_DECLS

#undef ALAB_KERNEL_DECLS

Isa active_isa() noexcept;
/// Overrides the dispatch choice; returns false (and changes nothing) if the
/// requested variant cannot run here.
bool force_isa(Isa isa) noexcept;
std::string_view isa_name(Isa isa) noexcept;

}  // namespace alab::kernels
