#pragma once

#include <cstdint>

// Numeric kernels with scalar reference and SIMD variants selected at
// runtime. Every backend implements the same fixed reduction semantics so
// outputs are bit-identical across backends, runs and thread counts:
//
//   * Dot products use L accumulator lanes (8 for f32, 4 for f64). Lane l
//     accumulates indices k with k % L == l, in increasing k, each step a
//     single fused multiply-add (exactly rounded, so vfmadd and std::fma
//     agree bitwise).
//   * Lanes combine through a fixed pairwise tree:
//       f32: t[i] = acc[i] + acc[i+4]; u[i] = t[i] + t[i+2]; r = u[0] + u[1]
//       f64: t[i] = acc[i] + acc[i+2];                       r = t[0] + t[1]
//   * The adamw update is elementwise with one fixed expression tree and no
//     fma, using only exactly rounded ops (+ - * / sqrt).
//
// AVX-512 is deliberately not used: a 16-lane path would change the lane
// partition and break cross-backend equality.

namespace augsub::kernels {

enum class Backend { scalar, avx2, neon };

const char* backend_name(Backend b);

// Best backend this binary+CPU supports, or the AUGSUB_SIMD override
// (scalar|avx2|neon). An override naming an unsupported backend throws.
Backend active_backend();

namespace detail {

// The fixed combine trees, shared by every backend.
template <typename T>
inline T combine8(const T* acc) {
  const T t0 = acc[0] + acc[4], t1 = acc[1] + acc[5];
  const T t2 = acc[2] + acc[6], t3 = acc[3] + acc[7];
  const T u0 = t0 + t2, u1 = t1 + t3;
  return u0 + u1;
}

template <typename T>
inline T combine4(const T* acc) {
  const T t0 = acc[0] + acc[2], t1 = acc[1] + acc[3];
  return t0 + t1;
}

// c[m x n] (+)= a[m x k] * b[n x k]^T. Row-major, contiguous. Both operands
// are traversed along k, which is what the lane-blocked dot defines.
struct Impl {
  void (*gemm_f32)(const float*, const float*, float*, std::int64_t,
                   std::int64_t, std::int64_t, bool);
  void (*gemm_f64)(const double*, const double*, double*, std::int64_t,
                   std::int64_t, std::int64_t, bool);
  float (*sumsq_f32)(const float*, std::int64_t);
  double (*sumsq_f64)(const double*, std::int64_t);
  void (*adamw_f32)(float*, float*, float*, const float*, std::int64_t, float,
                    float, float, float, float, float, float);
};

bool backend_supported(Backend b);
const Impl& impl(Backend b);

}  // namespace detail

// Dispatched entry points. gemm computes c (+)= a * b^T with a[m x k] and
// b[n x k]; rows of c are split across workers (bit-identical for any count).
void gemm_rowdot(const float* a, const float* b, float* c, std::int64_t m,
                 std::int64_t n, std::int64_t k, bool accumulate);
void gemm_rowdot(const double* a, const double* b, double* c, std::int64_t m,
                 std::int64_t n, std::int64_t k, bool accumulate);

// Same, with the worker count given instead of taken from AUGSUB_THREADS:
// the seam behind the any-worker-count guarantee.
void gemm_rowdot_workers(const float* a, const float* b, float* c,
                         std::int64_t m, std::int64_t n, std::int64_t k,
                         bool accumulate, int workers);
void gemm_rowdot_workers(const double* a, const double* b, double* c,
                         std::int64_t m, std::int64_t n, std::int64_t k,
                         bool accumulate, int workers);

float sumsq(const float* x, std::int64_t n);
double sumsq(const double* x, std::int64_t n);

// One AdamW step over a parameter tensor. bc1/bc2 are the bias corrections
// 1 - beta^t, computed by the caller. Decay applies before the moment update
// term: p -= lr*wd*p; p -= lr*(m/bc1) / (sqrt(v/bc2) + eps).
void adamw_update(float* p, float* m, float* v, const float* g, std::int64_t n,
                  float lr, float beta1, float beta2, float eps, float wd,
                  float bc1, float bc2);

}  // namespace augsub::kernels
