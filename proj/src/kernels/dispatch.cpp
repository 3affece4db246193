#include <atomic>
#include <cstdlib>
#include <string>

#include "dbo/error.hpp"
#include "dbo/kernels.hpp"

namespace dbo::kernels {
namespace {

bool cpu_has_avx2() noexcept {
#if defined(__x86_64__) || defined(_M_X64)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& table_for(Backend b) noexcept {
  switch (b) {
#if defined(__x86_64__) || defined(_M_X64)
    case Backend::Avx2:
      return avx2_table();
#endif
#if defined(__aarch64__)
    case Backend::Neon:
      return neon_table();
#endif
    default:
      return scalar_table();
  }
}

struct State {
  std::atomic<Backend> backend;
  std::atomic<const KernelTable*> table;
  State() {
    const Backend b = detect_backend();
    backend.store(b);
    table.store(&table_for(b));
  }
};

State& state() {
  static State s;
  return s;
}

}  // namespace

std::string_view to_string(Backend b) noexcept {
  switch (b) {
    case Backend::Scalar: return "scalar";
    case Backend::Avx2: return "avx2";
    case Backend::Neon: return "neon";
  }
  return "unknown";
}

bool backend_available(Backend b) noexcept {
  switch (b) {
    case Backend::Scalar: return true;
    case Backend::Avx2: return cpu_has_avx2();
#if defined(__aarch64__)
    case Backend::Neon: return true;
#endif
    default: return false;
  }
}

Backend detect_backend() noexcept {
  if (const char* env = std::getenv("DBO_SIMD"); env != nullptr && std::string(env) == "scalar") {
    return Backend::Scalar;
  }
  if (backend_available(Backend::Avx2)) return Backend::Avx2;
  if (backend_available(Backend::Neon)) return Backend::Neon;
  return Backend::Scalar;
}

void set_backend(Backend b) {
  require(backend_available(b), ErrorKind::BadParameter,
          "SIMD backend '" + std::string(to_string(b)) + "' not supported on this CPU");
  state().backend.store(b);
  state().table.store(&table_for(b));
}

Backend active_backend() noexcept { return state().backend.load(); }

const KernelTable& active() noexcept { return *state().table.load(std::memory_order_relaxed); }

}  // namespace dbo::kernels
