#include <cstdlib>
#include <string>

#include "augsub/errors.hpp"
#include "augsub/kernels.hpp"
#include "augsub/threading.hpp"

namespace augsub::kernels {

namespace detail {

const Impl& scalar_impl();
#if AUGSUB_HAVE_AVX2
const Impl& avx2_impl();
#endif
#if AUGSUB_HAVE_NEON
const Impl& neon_impl();
#endif

bool backend_supported(Backend b) {
  switch (b) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
#if AUGSUB_HAVE_AVX2
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Backend::neon:
#if AUGSUB_HAVE_NEON
      return true;
#else
      return false;
#endif
  }
  return false;
}

const Impl& impl(Backend b) {
  if (!backend_supported(b)) {
    throw ConfigError(std::string("kernel backend not supported here: ") +
                      backend_name(b));
  }
  switch (b) {
#if AUGSUB_HAVE_AVX2
    case Backend::avx2:
      return avx2_impl();
#endif
#if AUGSUB_HAVE_NEON
    case Backend::neon:
      return neon_impl();
#endif
    default:
      return scalar_impl();
  }
}

}  // namespace detail

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::scalar:
      return "scalar";
    case Backend::avx2:
      return "avx2";
    case Backend::neon:
      return "neon";
  }
  return "?";
}

Backend active_backend() {
  static const Backend chosen = [] {
    const char* env = std::getenv("AUGSUB_SIMD");
    if (env != nullptr && *env != '\0') {
      const std::string s(env);
      Backend want;
      if (s == "scalar") {
        want = Backend::scalar;
      } else if (s == "avx2") {
        want = Backend::avx2;
      } else if (s == "neon") {
        want = Backend::neon;
      } else {
        throw ConfigError("AUGSUB_SIMD must be scalar, avx2 or neon; got \"" +
                          s + "\"");
      }
      if (!detail::backend_supported(want)) {
        throw ConfigError(std::string("AUGSUB_SIMD=") + s +
                          " is not supported on this machine");
      }
      return want;
    }
    if (detail::backend_supported(Backend::avx2)) {
      return Backend::avx2;
    }
    if (detail::backend_supported(Backend::neon)) {
      return Backend::neon;
    }
    return Backend::scalar;
  }();
  return chosen;
}

namespace {

// Below this, thread spawn overhead beats the work saved.
constexpr std::int64_t kParallelFlopFloor = 1 << 18;

template <typename T, typename Fn>
void gemm_threaded(Fn fn, const T* a, const T* b, T* c, std::int64_t m,
                   std::int64_t n, std::int64_t k, bool accumulate,
                   int workers) {
  if (workers > 1 && m > 1 && m * n * k >= kParallelFlopFloor) {
    parallel_for(m, workers, [&](std::int64_t lo, std::int64_t hi) {
      fn(a + lo * k, b, c + lo * n, hi - lo, n, k, accumulate);
    });
  } else {
    fn(a, b, c, m, n, k, accumulate);
  }
}

}  // namespace

void gemm_rowdot(const float* a, const float* b, float* c, std::int64_t m,
                 std::int64_t n, std::int64_t k, bool accumulate) {
  gemm_threaded<float>(detail::impl(active_backend()).gemm_f32, a, b, c, m, n,
                       k, accumulate, thread_count());
}

void gemm_rowdot(const double* a, const double* b, double* c, std::int64_t m,
                 std::int64_t n, std::int64_t k, bool accumulate) {
  gemm_threaded<double>(detail::impl(active_backend()).gemm_f64, a, b, c, m, n,
                        k, accumulate, thread_count());
}

void gemm_rowdot_workers(const float* a, const float* b, float* c,
                         std::int64_t m, std::int64_t n, std::int64_t k,
                         bool accumulate, int workers) {
  gemm_threaded<float>(detail::impl(active_backend()).gemm_f32, a, b, c, m, n,
                       k, accumulate, workers);
}

void gemm_rowdot_workers(const double* a, const double* b, double* c,
                         std::int64_t m, std::int64_t n, std::int64_t k,
                         bool accumulate, int workers) {
  gemm_threaded<double>(detail::impl(active_backend()).gemm_f64, a, b, c, m, n,
                        k, accumulate, workers);
}

float sumsq(const float* x, std::int64_t n) {
  return detail::impl(active_backend()).sumsq_f32(x, n);
}

double sumsq(const double* x, std::int64_t n) {
  return detail::impl(active_backend()).sumsq_f64(x, n);
}

void adamw_update(float* p, float* m, float* v, const float* g, std::int64_t n,
                  float lr, float beta1, float beta2, float eps, float wd,
                  float bc1, float bc2) {
  detail::impl(active_backend())
      .adamw_f32(p, m, v, g, n, lr, beta1, beta2, eps, wd, bc1, bc2);
}

}  // namespace augsub::kernels
