// NEON backend (aarch64). Emulates the 8-wide f32 lane layout with a pair of
// float32x4_t (low register holds lanes 0..3, high holds 4..7) so the lane
// partition matches AVX2 and scalar exactly. f64 uses two float64x2_t the
// same way. vfmaq is the same exactly rounded fma as the other backends.

#include <arm_neon.h>

#include <cmath>
#include <cstdint>

#include "augsub/kernels.hpp"

namespace augsub::kernels::detail {
namespace {

using std::int64_t;

inline float dot_f32(const float* a, const float* b, int64_t k) {
  float32x4_t lo = vdupq_n_f32(0.0f);
  float32x4_t hi = vdupq_n_f32(0.0f);
  int64_t i = 0;
  for (; i + 8 <= k; i += 8) {
    lo = vfmaq_f32(lo, vld1q_f32(a + i), vld1q_f32(b + i));
    hi = vfmaq_f32(hi, vld1q_f32(a + i + 4), vld1q_f32(b + i + 4));
  }
  float lanes[8];
  vst1q_f32(lanes, lo);
  vst1q_f32(lanes + 4, hi);
  for (int l = 0; i + l < k; ++l) {
    lanes[l] = std::fma(a[i + l], b[i + l], lanes[l]);
  }
  return combine8(lanes);
}

inline double dot_f64(const double* a, const double* b, int64_t k) {
  float64x2_t lo = vdupq_n_f64(0.0);
  float64x2_t hi = vdupq_n_f64(0.0);
  int64_t i = 0;
  for (; i + 4 <= k; i += 4) {
    lo = vfmaq_f64(lo, vld1q_f64(a + i), vld1q_f64(b + i));
    hi = vfmaq_f64(hi, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double lanes[4];
  vst1q_f64(lanes, lo);
  vst1q_f64(lanes + 2, hi);
  for (int l = 0; i + l < k; ++l) {
    lanes[l] = std::fma(a[i + l], b[i + l], lanes[l]);
  }
  return combine4(lanes);
}

template <typename T, T (*Dot)(const T*, const T*, int64_t)>
void gemm_impl(const T* a, const T* b, T* c, int64_t m, int64_t n, int64_t k,
               bool accumulate) {
  for (int64_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (int64_t j = 0; j < n; ++j) {
      const T r = Dot(ai, b + j * k, k);
      ci[j] = accumulate ? ci[j] + r : r;
    }
  }
}

float sumsq_f32(const float* x, int64_t n) { return dot_f32(x, x, n); }
double sumsq_f64(const double* x, int64_t n) { return dot_f64(x, x, n); }

void adamw_f32(float* p, float* m, float* v, const float* g, int64_t n,
               float lr, float beta1, float beta2, float eps, float wd,
               float bc1, float bc2) {
  const float om1 = 1.0f - beta1;
  const float om2 = 1.0f - beta2;
  const float lrwd = lr * wd;
  const float32x4_t vb1 = vdupq_n_f32(beta1), vom1 = vdupq_n_f32(om1);
  const float32x4_t vb2 = vdupq_n_f32(beta2), vom2 = vdupq_n_f32(om2);
  const float32x4_t vlr = vdupq_n_f32(lr), vlrwd = vdupq_n_f32(lrwd);
  const float32x4_t vbc1 = vdupq_n_f32(bc1), vbc2 = vdupq_n_f32(bc2);
  const float32x4_t veps = vdupq_n_f32(eps);
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t gi = vld1q_f32(g + i);
    const float32x4_t mi =
        vaddq_f32(vmulq_f32(vb1, vld1q_f32(m + i)), vmulq_f32(vom1, gi));
    const float32x4_t vi = vaddq_f32(vmulq_f32(vb2, vld1q_f32(v + i)),
                                     vmulq_f32(vom2, vmulq_f32(gi, gi)));
    vst1q_f32(m + i, mi);
    vst1q_f32(v + i, vi);
    const float32x4_t pi = vld1q_f32(p + i);
    const float32x4_t pd = vsubq_f32(pi, vmulq_f32(vlrwd, pi));
    const float32x4_t upd = vdivq_f32(
        vdivq_f32(mi, vbc1),
        vaddq_f32(vsqrtq_f32(vdivq_f32(vi, vbc2)), veps));
    vst1q_f32(p + i, vsubq_f32(pd, vmulq_f32(vlr, upd)));
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

const Impl& neon_impl() {
  static const Impl k = {
      &gemm_impl<float, dot_f32>, &gemm_impl<double, dot_f64>, &sumsq_f32,
      &sumsq_f64, &adamw_f32,
  };
  return k;
}

}  // namespace augsub::kernels::detail
