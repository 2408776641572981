#include <atomic>
#include <cstdlib>
#include <string_view>

#include "alab/kernels.hpp"

namespace alab::kernels {

namespace {

Isa detect() noexcept {
  if (const char* env = std::getenv("AMORTIZE_LAB_ISA")) {
    if (std::string_view(env) == "scalar") return Isa::scalar;
  }
  return avx2::available() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& current() noexcept {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

Isa active_isa() noexcept { return current().load(std::memory_order_relaxed); }

bool force_isa(Isa isa) noexcept {
  if (isa == Isa::avx2 && !avx2::available()) return false;
  current().store(isa, std::memory_order_relaxed);
  return true;
}

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

#define ALAB_DISPATCH(call) \
  return active_isa() == Isa::avx2 ? avx2::call : scalar::call

double dot(const double* a, const double* b, std::size_t n) noexcept { ALAB_DISPATCH(dot(a, b, n)); }

double sum_squares(const double* a, std::size_t n) noexcept { ALAB_DISPATCH(sum_squares(a, n)); }

void axpy(double* y, const double* x, double alpha, std::size_t n) noexcept {
  ALAB_DISPATCH(axpy(y, x, alpha, n));
}

void affine(double* out, const double* weight, const double* bias, const double* x,
            std::size_t rows, std::size_t cols) noexcept {
  ALAB_DISPATCH(affine(out, weight, bias, x, rows, cols));
}

void relu_forward(double* out, const double* in, std::size_t n) noexcept {
  ALAB_DISPATCH(relu_forward(out, in, n));
}

void relu_backward(double* grad, const double* pre, std::size_t n) noexcept {
  ALAB_DISPATCH(relu_backward(grad, pre, n));
}

void adamw_update(double* theta, double* m, double* v, const double* g, std::size_t n,
                  const AdamwCoeffs& c) noexcept {
  ALAB_DISPATCH(adamw_update(theta, m, v, g, n, c));
}

#undef ALAB_DISPATCH

}  // namespace alab::kernels
