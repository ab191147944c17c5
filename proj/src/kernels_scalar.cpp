// Scalar reference backend. Deliberately plain: lane arrays in place of
// vector registers, std::fma in place of vfmadd. Must stay bit-identical to
// the SIMD backends; see the semantics block in kernels.hpp before touching
// reduction order.

#include <cmath>
#include <cstdint>

#include "augsub/kernels.hpp"

namespace augsub::kernels::detail {
namespace {

using std::int64_t;

template <typename T, int L>
T lane_dot(const T* a, const T* b, int64_t k) {
  T acc[L] = {};
  int64_t i = 0;
  for (; i + L <= k; i += L) {
    for (int l = 0; l < L; ++l) {
      acc[l] = std::fma(a[i + l], b[i + l], acc[l]);
    }
  }
  for (int l = 0; i + l < k; ++l) {
    acc[l] = std::fma(a[i + l], b[i + l], acc[l]);
  }
  if constexpr (L == 8) {
    return combine8(acc);
  } else {
    return combine4(acc);
  }
}

template <typename T, int L>
void gemm_impl(const T* a, const T* b, T* c, int64_t m, int64_t n, int64_t k,
               bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T r = lane_dot<T, L>(ai, b + j * k, k);
      ci[j] = accumulate ? ci[j] + r : r;
    }
  }
}

template <typename T, int L>
T sumsq_impl(const T* x, int64_t n) {
  return lane_dot<T, L>(x, x, n);
}

void adamw_impl(float* p, float* m, float* v, const float* g, int64_t n,
                float lr, float beta1, float beta2, float eps, float wd,
                float bc1, float bc2) {
  const float om1 = 1.0f - beta1;
  const float om2 = 1.0f - beta2;
  const float lrwd = lr * wd;
  for (int64_t i = 0; i < n; ++i) {
    const float gi = g[i];
    const float mi = beta1 * m[i] + om1 * gi;
    const float vi = beta2 * v[i] + om2 * (gi * gi);
    m[i] = mi;
    v[i] = vi;
    const float pd = p[i] - lrwd * p[i];
    p[i] = pd - lr * ((mi / bc1) / (std::sqrt(vi / bc2) + eps));
  }
}

}  // namespace

const Impl& scalar_impl() {
  static const Impl k = {
      &gemm_impl<float, 8>, &gemm_impl<double, 4>, &sumsq_impl<float, 8>,
      &sumsq_impl<double, 4>, &adamw_impl,
  };
  return k;
}

}  // namespace augsub::kernels::detail
