// AVX2+FMA backend. Compiled with -mavx2 -mfma; only reached when the CPU
// reports both. Per-lane fma chains and the shared combine trees keep every
// result bit-identical to the scalar reference: vfmadd and std::fma are the
// same exactly rounded operation, and +,-,*,/,sqrt are exactly rounded too.

#include <immintrin.h>

#include <cmath>
#include <cstdint>

#include "augsub/kernels.hpp"

namespace augsub::kernels::detail {
namespace {

using std::int64_t;

// Finishes one dot: spills the vector accumulator, folds the k-tail into the
// lanes it belongs to, then runs the shared combine tree.
inline float finish_dot8(__m256 acc, const float* a, const float* b,
                         int64_t kb, int64_t k) {
  alignas(32) float lanes[8];
  _mm256_store_ps(lanes, acc);
  for (int l = 0; kb + l < k; ++l) {
    lanes[l] = std::fma(a[kb + l], b[kb + l], lanes[l]);
  }
  return combine8(lanes);
}

inline double finish_dot4(__m256d acc, const double* a, const double* b,
                          int64_t kb, int64_t k) {
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  for (int l = 0; kb + l < k; ++l) {
    lanes[l] = std::fma(a[kb + l], b[kb + l], lanes[l]);
  }
  return combine4(lanes);
}

inline float dot_f32(const float* a, const float* b, int64_t k) {
  __m256 acc = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= k; i += 8) {
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
  }
  return finish_dot8(acc, a, b, i, k);
}

inline double dot_f64(const double* a, const double* b, int64_t k) {
  __m256d acc = _mm256_setzero_pd();
  int64_t i = 0;
  for (; i + 4 <= k; i += 4) {
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  }
  return finish_dot4(acc, a, b, i, k);
}

// 4x2 register-blocked panel: 8 independent accumulators amortize the loads
// of a and b. Each (row, col) accumulator sees the same fma chain as a lone
// dot, so edge paths below can fall back to dot_* without changing results.
void gemm_f32(const float* a, const float* b, float* c, int64_t m, int64_t n,
              int64_t k, bool accumulate) {
  int64_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const float* a0 = a + (i + 0) * k;
    const float* a1 = a + (i + 1) * k;
    const float* a2 = a + (i + 2) * k;
    const float* a3 = a + (i + 3) * k;
    int64_t j = 0;
    for (; j + 2 <= n; j += 2) {
      const float* b0 = b + (j + 0) * k;
      const float* b1 = b + (j + 1) * k;
      __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
      __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
      __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
      __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
      int64_t p = 0;
      for (; p + 8 <= k; p += 8) {
        const __m256 vb0 = _mm256_loadu_ps(b0 + p);
        const __m256 vb1 = _mm256_loadu_ps(b1 + p);
        const __m256 va0 = _mm256_loadu_ps(a0 + p);
        const __m256 va1 = _mm256_loadu_ps(a1 + p);
        const __m256 va2 = _mm256_loadu_ps(a2 + p);
        const __m256 va3 = _mm256_loadu_ps(a3 + p);
        c00 = _mm256_fmadd_ps(va0, vb0, c00);
        c01 = _mm256_fmadd_ps(va0, vb1, c01);
        c10 = _mm256_fmadd_ps(va1, vb0, c10);
        c11 = _mm256_fmadd_ps(va1, vb1, c11);
        c20 = _mm256_fmadd_ps(va2, vb0, c20);
        c21 = _mm256_fmadd_ps(va2, vb1, c21);
        c30 = _mm256_fmadd_ps(va3, vb0, c30);
        c31 = _mm256_fmadd_ps(va3, vb1, c31);
      }
      const float r[4][2] = {
          {finish_dot8(c00, a0, b0, p, k), finish_dot8(c01, a0, b1, p, k)},
          {finish_dot8(c10, a1, b0, p, k), finish_dot8(c11, a1, b1, p, k)},
          {finish_dot8(c20, a2, b0, p, k), finish_dot8(c21, a2, b1, p, k)},
          {finish_dot8(c30, a3, b0, p, k), finish_dot8(c31, a3, b1, p, k)},
      };
      for (int r_i = 0; r_i < 4; ++r_i) {
        float* cr = c + (i + r_i) * n + j;
        for (int c_i = 0; c_i < 2; ++c_i) {
          cr[c_i] = accumulate ? cr[c_i] + r[r_i][c_i] : r[r_i][c_i];
        }
      }
    }
    for (; j < n; ++j) {
      const float* bj = b + j * k;
      const float r0 = dot_f32(a0, bj, k);
      const float r1 = dot_f32(a1, bj, k);
      const float r2 = dot_f32(a2, bj, k);
      const float r3 = dot_f32(a3, bj, k);
      float* cj = c + i * n + j;
      cj[0 * n] = accumulate ? cj[0 * n] + r0 : r0;
      cj[1 * n] = accumulate ? cj[1 * n] + r1 : r1;
      cj[2 * n] = accumulate ? cj[2 * n] + r2 : r2;
      cj[3 * n] = accumulate ? cj[3 * n] + r3 : r3;
    }
  }
  for (; i < m; ++i) {
    const float* ai = a + i * k;
    float* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const float r = dot_f32(ai, b + j * k, k);
      ci[j] = accumulate ? ci[j] + r : r;
    }
  }
}

void gemm_f64(const double* a, const double* b, double* c, int64_t m,
              int64_t n, int64_t k, bool accumulate) {
  int64_t i = 0;
  for (; i + 2 <= m; i += 2) {
    const double* a0 = a + (i + 0) * k;
    const double* a1 = a + (i + 1) * k;
    int64_t j = 0;
    for (; j + 2 <= n; j += 2) {
      const double* b0 = b + (j + 0) * k;
      const double* b1 = b + (j + 1) * k;
      __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
      __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
      int64_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d vb0 = _mm256_loadu_pd(b0 + p);
        const __m256d vb1 = _mm256_loadu_pd(b1 + p);
        const __m256d va0 = _mm256_loadu_pd(a0 + p);
        const __m256d va1 = _mm256_loadu_pd(a1 + p);
        c00 = _mm256_fmadd_pd(va0, vb0, c00);
        c01 = _mm256_fmadd_pd(va0, vb1, c01);
        c10 = _mm256_fmadd_pd(va1, vb0, c10);
        c11 = _mm256_fmadd_pd(va1, vb1, c11);
      }
      const double r[2][2] = {
          {finish_dot4(c00, a0, b0, p, k), finish_dot4(c01, a0, b1, p, k)},
          {finish_dot4(c10, a1, b0, p, k), finish_dot4(c11, a1, b1, p, k)},
      };
      for (int r_i = 0; r_i < 2; ++r_i) {
        double* cr = c + (i + r_i) * n + j;
        for (int c_i = 0; c_i < 2; ++c_i) {
          cr[c_i] = accumulate ? cr[c_i] + r[r_i][c_i] : r[r_i][c_i];
        }
      }
    }
    for (; j < n; ++j) {
      const double* bj = b + j * k;
      const double r0 = dot_f64(a0, bj, k);
      const double r1 = dot_f64(a1, bj, k);
      double* cj = c + i * n + j;
      cj[0 * n] = accumulate ? cj[0 * n] + r0 : r0;
      cj[1 * n] = accumulate ? cj[1 * n] + r1 : r1;
    }
  }
  for (; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const double r = dot_f64(ai, b + j * k, k);
      ci[j] = accumulate ? ci[j] + r : r;
    }
  }
}

float sumsq_f32(const float* x, int64_t n) { return dot_f32(x, x, n); }
double sumsq_f64(const double* x, int64_t n) { return dot_f64(x, x, n); }

// Elementwise; mirrors the scalar expression tree op for op, no fma anywhere.
void adamw_f32(float* p, float* m, float* v, const float* g, int64_t n,
               float lr, float beta1, float beta2, float eps, float wd,
               float bc1, float bc2) {
  const float om1 = 1.0f - beta1;
  const float om2 = 1.0f - beta2;
  const float lrwd = lr * wd;
  const __m256 vb1 = _mm256_set1_ps(beta1), vom1 = _mm256_set1_ps(om1);
  const __m256 vb2 = _mm256_set1_ps(beta2), vom2 = _mm256_set1_ps(om2);
  const __m256 vlr = _mm256_set1_ps(lr), vlrwd = _mm256_set1_ps(lrwd);
  const __m256 vbc1 = _mm256_set1_ps(bc1), vbc2 = _mm256_set1_ps(bc2);
  const __m256 veps = _mm256_set1_ps(eps);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 gi = _mm256_loadu_ps(g + i);
    const __m256 mi = _mm256_add_ps(_mm256_mul_ps(vb1, _mm256_loadu_ps(m + i)),
                                    _mm256_mul_ps(vom1, gi));
    const __m256 vi =
        _mm256_add_ps(_mm256_mul_ps(vb2, _mm256_loadu_ps(v + i)),
                      _mm256_mul_ps(vom2, _mm256_mul_ps(gi, gi)));
    _mm256_storeu_ps(m + i, mi);
    _mm256_storeu_ps(v + i, vi);
    const __m256 pi = _mm256_loadu_ps(p + i);
    const __m256 pd = _mm256_sub_ps(pi, _mm256_mul_ps(vlrwd, pi));
    const __m256 upd = _mm256_div_ps(
        _mm256_div_ps(mi, vbc1),
        _mm256_add_ps(_mm256_sqrt_ps(_mm256_div_ps(vi, vbc2)), veps));
    _mm256_storeu_ps(p + i, _mm256_sub_ps(pd, _mm256_mul_ps(vlr, upd)));
  }
  for (; i < n; ++i) {
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

const Impl& avx2_impl() {
  static const Impl k = {
      &gemm_f32, &gemm_f64, &sumsq_f32, &sumsq_f64, &adamw_f32,
  };
  return k;
}

}  // namespace augsub::kernels::detail
