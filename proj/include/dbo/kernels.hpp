#pragma once

// Dense double-precision inner loops. Every kernel has a scalar reference
// implementation and, where the target supports it, a SIMD variant picked once
// at startup. The chosen backend never changes mid-run, so results are
// reproducible on a given machine; backends agree with each other only up to
// floating-point reassociation.

#include <cstddef>
#include <string_view>

namespace dbo::kernels {

enum class Backend { Scalar, Avx2, Neon };

std::string_view to_string(Backend b) noexcept;

struct KernelTable {
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // x *= a
  void (*scal)(double a, double* x, std::size_t n);
  // y = A x, A row-major rows x cols
  void (*gemv)(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y);
  // y = A^T x, A row-major rows x cols, y has cols entries
  void (*gemv_t)(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y);
};

const KernelTable& scalar_table() noexcept;
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_table() noexcept;
#endif
#if defined(__aarch64__)
const KernelTable& neon_table() noexcept;
#endif

/// Best backend supported by the running CPU, honouring DBO_SIMD=scalar.
Backend detect_backend() noexcept;
bool backend_available(Backend b) noexcept;

/// Switches the process-wide table. Intended for tests and benchmarks; not
/// safe to call while other threads run kernels.
void set_backend(Backend b);
Backend active_backend() noexcept;
const KernelTable& active() noexcept;

inline double dot(const double* x, const double* y, std::size_t n) { return active().dot(x, y, n); }
inline void axpy(double a, const double* x, double* y, std::size_t n) { active().axpy(a, x, y, n); }
inline void scal(double a, double* x, std::size_t n) { active().scal(a, x, n); }
inline void gemv(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
  active().gemv(a, rows, cols, x, y);
}
inline void gemv_t(const double* a, std::size_t rows, std::size_t cols, const double* x, double* y) {
  active().gemv_t(a, rows, cols, x, y);
}

}  // namespace dbo::kernels
