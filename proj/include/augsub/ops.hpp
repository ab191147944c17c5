#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "augsub/kernels.hpp"
#include "augsub/tensor.hpp"

// Differentiable ops. Each computes forward values, then (if the graph is
// recording and some input carries grads) records one backward closure that
// accumulates into input grads. Reductions that feed gradients run in fixed
// row-major order; matmul reductions run through the lane-blocked kernels.
// Both are deterministic per machine and across backends.

namespace augsub {

namespace opdet {

template <typename T>
inline std::int64_t rows_of(const Tensor<T>& x) {
  return x.numel() / x.shape().back();
}

template <typename T>
inline void transpose_pack(const T* src, std::int64_t m, std::int64_t n,
                           T* dst) {
  // dst[n x m] = src[m x n]^T
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      dst[j * m + i] = src[i * n + j];
    }
  }
}

template <typename T>
inline void check_last_dim(const Tensor<T>& x, const Tensor<T>& vec,
                           const char* what) {
  if (vec.rank() != 1 || vec.dim(0) != x.shape().back()) {
    throw ContractError(std::string(what) + " expects a vector matching the " +
                        "last dim of " + shape_str(x.shape()) + "; got " +
                        shape_str(vec.shape()));
  }
}

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                             const char* what) {
  if (a.shape() != b.shape()) {
    throw ContractError(std::string(what) + " expects equal shapes; got " +
                        shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
}

}  // namespace opdet

// out[..., n] = a[..., k] . w[k, n]; leading dims of a are batch rows.
template <typename T>
Tensor<T> matmul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& w) {
  if (a.rank() < 2 || w.rank() != 2 || a.shape().back() != w.dim(0)) {
    throw ContractError("matmul shapes incompatible: " + shape_str(a.shape()) +
                        " . " + shape_str(w.shape()));
  }
  const std::int64_t k = a.shape().back();
  const std::int64_t n = w.dim(1);
  const std::int64_t m = opdet::rows_of(a);
  Shape out_shape = a.shape();
  out_shape.back() = n;
  const bool rg = a.requires_grad() || w.requires_grad();
  Tensor<T> out = op_result(g, std::move(out_shape), rg);

  std::vector<T> wt(static_cast<std::size_t>(n * k));
  opdet::transpose_pack(w.val().data(), k, n, wt.data());
  kernels::gemm_rowdot(a.val().data(), wt.data(), out.val().data(), m, n, k,
                       false);

  if (g.recording && rg) {
    g.record({out}, [a, w, out, m, n, k] {
      const T* gc = out->grad.data();
      if (a.requires_grad()) {
        a->ensure_grad();
        // dA = gC . W^T; W stored [k x n] is exactly the row-dot operand.
        kernels::gemm_rowdot(gc, w.val().data(), a->grad.data(), m, k, n,
                             true);
        a->grad_live = true;
      }
      if (w.requires_grad()) {
        w->ensure_grad();
        // dW = A^T . gC via packed transposes of both.
        std::vector<T> at(static_cast<std::size_t>(k * m));
        std::vector<T> gt(static_cast<std::size_t>(n * m));
        opdet::transpose_pack(a.val().data(), m, k, at.data());
        opdet::transpose_pack(gc, m, n, gt.data());
        kernels::gemm_rowdot(at.data(), gt.data(), w->grad.data(), k, n, m,
                             true);
        w->grad_live = true;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  opdet::check_same_shape(a, b, "add");
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor<T> out = op_result(g, a.shape(), rg);
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    out.val()[i] = a.val()[i] + b.val()[i];
  }
  if (g.recording && rg) {
    g.record({out}, [a, b, out] {
      if (a.requires_grad()) {
        accum_grad(a, out->grad.data());
      }
      if (b.requires_grad()) {
        accum_grad(b, out->grad.data());
      }
    });
  }
  return out;
}

// out = alpha*a + beta*b. Used to combine branch losses.
template <typename T>
Tensor<T> add_weighted(Graph<T>& g, const Tensor<T>& a, T alpha,
                       const Tensor<T>& b, T beta) {
  opdet::check_same_shape(a, b, "add_weighted");
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor<T> out = op_result(g, a.shape(), rg);
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    out.val()[i] = alpha * a.val()[i] + beta * b.val()[i];
  }
  if (g.recording && rg) {
    g.record({out}, [a, b, out, alpha, beta] {
      const std::int64_t n2 = out.numel();
      const T* gc = out->grad.data();
      if (a.requires_grad()) {
        a->ensure_grad();
        for (std::int64_t i = 0; i < n2; ++i) {
          a->grad[i] += alpha * gc[i];
        }
        a->grad_live = true;
      }
      if (b.requires_grad()) {
        b->ensure_grad();
        for (std::int64_t i = 0; i < n2; ++i) {
          b->grad[i] += beta * gc[i];
        }
        b->grad_live = true;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_bias(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& bias) {
  opdet::check_last_dim(x, bias, "add_bias");
  const std::int64_t d = x.shape().back();
  const std::int64_t rows = opdet::rows_of(x);
  const bool rg = x.requires_grad() || bias.requires_grad();
  Tensor<T> out = op_result(g, x.shape(), rg);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x.val().data() + r * d;
    T* or_ = out.val().data() + r * d;
    for (std::int64_t j = 0; j < d; ++j) {
      or_[j] = xr[j] + bias.val()[j];
    }
  }
  if (g.recording && rg) {
    g.record({out}, [x, bias, out, rows, d] {
      const T* gc = out->grad.data();
      if (x.requires_grad()) {
        accum_grad(x, gc);
      }
      if (bias.requires_grad()) {
        bias->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
          for (std::int64_t j = 0; j < d; ++j) {
            bias->grad[j] += gc[r * d + j];
          }
        }
        bias->grad_live = true;
      }
    });
  }
  return out;
}

// out[n,t,:] = x[n,t,:] + pos[t,:]; pos broadcasts over the batch.
template <typename T>
Tensor<T> add_pos(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& pos) {
  if (x.rank() != 3 || pos.rank() != 2 || pos.dim(0) != x.dim(1) ||
      pos.dim(1) != x.dim(2)) {
    throw ContractError("add_pos expects x[N,T,D] and pos[T,D]; got " +
                        shape_str(x.shape()) + " and " +
                        shape_str(pos.shape()));
  }
  const std::int64_t nb = x.dim(0), t = x.dim(1), d = x.dim(2);
  const bool rg = x.requires_grad() || pos.requires_grad();
  Tensor<T> out = op_result(g, x.shape(), rg);
  for (std::int64_t n = 0; n < nb; ++n) {
    for (std::int64_t i = 0; i < t * d; ++i) {
      out.val()[n * t * d + i] = x.val()[n * t * d + i] + pos.val()[i];
    }
  }
  if (g.recording && rg) {
    g.record({out}, [x, pos, out, nb, t, d] {
      const T* gc = out->grad.data();
      if (x.requires_grad()) {
        accum_grad(x, gc);
      }
      if (pos.requires_grad()) {
        pos->ensure_grad();
        for (std::int64_t n = 0; n < nb; ++n) {
          for (std::int64_t i = 0; i < t * d; ++i) {
            pos->grad[i] += gc[n * t * d + i];
          }
        }
        pos->grad_live = true;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& x, T c) {
  const bool rg = x.requires_grad();
  Tensor<T> out = op_result(g, x.shape(), rg);
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    out.val()[i] = c * x.val()[i];
  }
  if (g.recording && rg) {
    g.record({out}, [x, out, c] {
      x->ensure_grad();
      const std::int64_t n2 = out.numel();
      for (std::int64_t i = 0; i < n2; ++i) {
        x->grad[i] += c * out->grad[i];
      }
      x->grad_live = true;
    });
  }
  return out;
}

// Tanh-form gelu: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
template <typename T>
Tensor<T> gelu(Graph<T>& g, const Tensor<T>& x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kB = T(0.044715);
  const bool rg = x.requires_grad();
  Tensor<T> out = op_result(g, x.shape(), rg);
  const std::int64_t n = x.numel();
  auto th = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const T v = x.val()[i];
    const T t = std::tanh(kC * (v + kB * v * v * v));
    (*th)[i] = t;
    out.val()[i] = T(0.5) * v * (T(1) + t);
  }
  if (g.recording && rg) {
    g.record({out}, [x, out, th, n] {
      x->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const T v = x.val()[i];
        const T t = (*th)[i];
        const T du = kC * (T(1) + T(3) * kB * v * v);
        const T dy = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du;
        x->grad[i] += out->grad[i] * dy;
      }
      x->grad_live = true;
    });
  }
  return out;
}

// Rowwise softmax over the last dim, max-shifted.
template <typename T>
Tensor<T> softmax(Graph<T>& g, const Tensor<T>& x) {
  const std::int64_t c = x.shape().back();
  const std::int64_t rows = opdet::rows_of(x);
  const bool rg = x.requires_grad();
  Tensor<T> out = op_result(g, x.shape(), rg);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x.val().data() + r * c;
    T* yr = out.val().data() + r * c;
    T mx = xr[0];
    for (std::int64_t j = 1; j < c; ++j) {
      mx = std::max(mx, xr[j]);
    }
    T s = T(0);
    for (std::int64_t j = 0; j < c; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      s += yr[j];
    }
    const T inv = T(1) / s;
    for (std::int64_t j = 0; j < c; ++j) {
      yr[j] *= inv;
    }
  }
  if (g.recording && rg) {
    g.record({out}, [x, out, rows, c] {
      x->ensure_grad();
      const T* y = out.val().data();
      const T* gc = out->grad.data();
      for (std::int64_t r = 0; r < rows; ++r) {
        T dot = T(0);
        for (std::int64_t j = 0; j < c; ++j) {
          dot += gc[r * c + j] * y[r * c + j];
        }
        for (std::int64_t j = 0; j < c; ++j) {
          x->grad[r * c + j] += y[r * c + j] * (gc[r * c + j] - dot);
        }
      }
      x->grad_live = true;
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(Graph<T>& g, const Tensor<T>& x) {
  const bool rg = x.requires_grad();
  Tensor<T> out = op_result(g, x.shape(), rg);
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    out.val()[i] = T(1) / (T(1) + std::exp(-x.val()[i]));
  }
  if (g.recording && rg) {
    g.record({out}, [x, out, n] {
      x->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const T y = out.val()[i];
        x->grad[i] += out->grad[i] * y * (T(1) - y);
      }
      x->grad_live = true;
    });
  }
  return out;
}

// Per-row normalization over the last dim with learnable gamma/beta.
// Variance is the biased (1/D) estimate; eps keeps zero-variance rows finite.
template <typename T>
Tensor<T> layer_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, T eps) {
  opdet::check_last_dim(x, gamma, "layer_norm gamma");
  opdet::check_last_dim(x, beta, "layer_norm beta");
  const std::int64_t d = x.shape().back();
  const std::int64_t rows = opdet::rows_of(x);
  const bool rg =
      x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
  Tensor<T> out = op_result(g, x.shape(), rg);
  auto xhat = std::make_shared<std::vector<T>>(x.val().size());
  auto istd = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows));
  const T invd = T(1) / static_cast<T>(d);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x.val().data() + r * d;
    T mu = T(0);
    for (std::int64_t j = 0; j < d; ++j) {
      mu += xr[j];
    }
    mu *= invd;
    T var = T(0);
    for (std::int64_t j = 0; j < d; ++j) {
      const T dlt = xr[j] - mu;
      var += dlt * dlt;
    }
    var *= invd;
    const T is = T(1) / std::sqrt(var + eps);
    (*istd)[r] = is;
    T* hr = xhat->data() + r * d;
    T* yr = out.val().data() + r * d;
    for (std::int64_t j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mu) * is;
      yr[j] = gamma.val()[j] * hr[j] + beta.val()[j];
    }
  }
  if (g.recording && rg) {
    g.record({out}, [x, gamma, beta, out, xhat, istd, rows, d, invd] {
      const T* gc = out->grad.data();
      const T* h = xhat->data();
      if (gamma.requires_grad()) {
        gamma->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
          for (std::int64_t j = 0; j < d; ++j) {
            gamma->grad[j] += gc[r * d + j] * h[r * d + j];
          }
        }
        gamma->grad_live = true;
      }
      if (beta.requires_grad()) {
        beta->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
          for (std::int64_t j = 0; j < d; ++j) {
            beta->grad[j] += gc[r * d + j];
          }
        }
        beta->grad_live = true;
      }
      if (x.requires_grad()) {
        x->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r) {
          T s1 = T(0), s2 = T(0);
          for (std::int64_t j = 0; j < d; ++j) {
            const T dh = gc[r * d + j] * gamma.val()[j];
            s1 += dh;
            s2 += dh * h[r * d + j];
          }
          const T is = (*istd)[r];
          for (std::int64_t j = 0; j < d; ++j) {
            const T dh = gc[r * d + j] * gamma.val()[j];
            x->grad[r * d + j] +=
                is * (dh - invd * (s1 + h[r * d + j] * s2));
          }
        }
        x->grad_live = true;
      }
    });
  }
  return out;
}

// Mean over rows of -sum_c t[c] * log softmax(z)[c], computed in the exact
// log-sum-exp form sum_c t[c]*(lse - z[c]); no probability is ever logged,
// so zero target entries are safe. Targets must be constants: a target that
// still carries grads means a missing stop-gradient upstream.
template <typename T>
Tensor<T> cross_entropy_soft(Graph<T>& g, const Tensor<T>& logits,
                             const Tensor<T>& targets) {
  if (logits.rank() != 2) {
    throw ContractError("cross_entropy_soft expects logits[N,C]; got " +
                        shape_str(logits.shape()));
  }
  opdet::check_same_shape(logits, targets, "cross_entropy_soft");
  if (targets.requires_grad()) {
    throw ContractError(
        "cross_entropy_soft targets are gradient-connected; detach the "
        "teacher branch before building soft targets");
  }
  const std::int64_t nr = logits.dim(0), c = logits.dim(1);
  for (std::int64_t r = 0; r < nr; ++r) {
    T s = T(0);
    for (std::int64_t j = 0; j < c; ++j) {
      s += targets.val()[r * c + j];
    }
    if (std::abs(s - T(1)) > T(1e-6)) {
      throw ContractError("cross_entropy_soft target row " + std::to_string(r) +
                          " sums to " + std::to_string(static_cast<double>(s)) +
                          ", expected 1");
    }
  }
  const bool rg = logits.requires_grad();
  Tensor<T> out = op_result(g, Shape{1}, rg);
  auto probs = std::make_shared<std::vector<T>>(logits.val().size());
  const T invn = T(1) / static_cast<T>(nr);
  T total = T(0);
  for (std::int64_t r = 0; r < nr; ++r) {
    const T* zr = logits.val().data() + r * c;
    const T* tr = targets.val().data() + r * c;
    T mx = zr[0];
    for (std::int64_t j = 1; j < c; ++j) {
      mx = std::max(mx, zr[j]);
    }
    T se = T(0);
    for (std::int64_t j = 0; j < c; ++j) {
      se += std::exp(zr[j] - mx);
    }
    const T lse = mx + std::log(se);
    T row = T(0);
    for (std::int64_t j = 0; j < c; ++j) {
      row += tr[j] * (lse - zr[j]);
      (*probs)[r * c + j] = std::exp(zr[j] - lse);
    }
    total += row;
  }
  out.val()[0] = total * invn;
  if (g.recording && rg) {
    g.record({out}, [logits, targets, out, probs, nr, c, invn] {
      logits->ensure_grad();
      const T go = out->grad[0] * invn;
      for (std::int64_t i = 0; i < nr * c; ++i) {
        logits->grad[i] += go * ((*probs)[i] - targets.val()[i]);
      }
      logits->grad_live = true;
    });
  }
  return out;
}

// Mean over all N*C entries of the binary cross-entropy between sigmoid(z)
// and soft targets in [0,1], in the softplus form max(z,0) - t*z +
// log1p(exp(-|z|)). Same stop-gradient contract as cross_entropy_soft.
template <typename T>
Tensor<T> bce_soft(Graph<T>& g, const Tensor<T>& logits,
                   const Tensor<T>& targets) {
  if (logits.rank() != 2) {
    throw ContractError("bce_soft expects logits[N,C]; got " +
                        shape_str(logits.shape()));
  }
  opdet::check_same_shape(logits, targets, "bce_soft");
  if (targets.requires_grad()) {
    throw ContractError(
        "bce_soft targets are gradient-connected; detach the teacher branch "
        "before building soft targets");
  }
  const std::int64_t n = logits.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const T t = targets.val()[i];
    if (t < T(-1e-6) || t > T(1) + T(1e-6)) {
      throw ContractError("bce_soft target out of [0,1]: " +
                          std::to_string(static_cast<double>(t)));
    }
  }
  const bool rg = logits.requires_grad();
  Tensor<T> out = op_result(g, Shape{1}, rg);
  const T invn = T(1) / static_cast<T>(n);
  T total = T(0);
  for (std::int64_t i = 0; i < n; ++i) {
    const T z = logits.val()[i];
    const T t = targets.val()[i];
    total += std::max(z, T(0)) - t * z + std::log1p(std::exp(-std::abs(z)));
  }
  out.val()[0] = total * invn;
  if (g.recording && rg) {
    g.record({out}, [logits, targets, out, n, invn] {
      logits->ensure_grad();
      const T go = out->grad[0] * invn;
      for (std::int64_t i = 0; i < n; ++i) {
        const T z = logits.val()[i];
        const T sg = T(1) / (T(1) + std::exp(-z));
        logits->grad[i] += go * (sg - targets.val()[i]);
      }
      logits->grad_live = true;
    });
  }
  return out;
}

// [N,T,D] -> [N,D], mean over tokens.
template <typename T>
Tensor<T> mean_tokens(Graph<T>& g, const Tensor<T>& x) {
  if (x.rank() != 3) {
    throw ContractError("mean_tokens expects [N,T,D]; got " +
                        shape_str(x.shape()));
  }
  const std::int64_t nb = x.dim(0), t = x.dim(1), d = x.dim(2);
  const bool rg = x.requires_grad();
  Tensor<T> out = op_result(g, Shape{nb, d}, rg);
  const T invt = T(1) / static_cast<T>(t);
  for (std::int64_t n = 0; n < nb; ++n) {
    for (std::int64_t j = 0; j < d; ++j) {
      T s = T(0);
      for (std::int64_t tt = 0; tt < t; ++tt) {
        s += x.val()[(n * t + tt) * d + j];
      }
      out.val()[n * d + j] = s * invt;
    }
  }
  if (g.recording && rg) {
    g.record({out}, [x, out, nb, t, d, invt] {
      x->ensure_grad();
      for (std::int64_t n = 0; n < nb; ++n) {
        for (std::int64_t tt = 0; tt < t; ++tt) {
          for (std::int64_t j = 0; j < d; ++j) {
            x->grad[(n * t + tt) * d + j] += out->grad[n * d + j] * invt;
          }
        }
      }
      x->grad_live = true;
    });
  }
  return out;
}

// [N,T,D] -> [N,D], one token picked per sample.
template <typename T>
Tensor<T> select_token(Graph<T>& g, const Tensor<T>& x, std::int64_t idx) {
  if (x.rank() != 3 || idx < 0 || idx >= x.dim(1)) {
    throw ContractError("select_token index " + std::to_string(idx) +
                        " out of range for " + shape_str(x.shape()));
  }
  const std::int64_t nb = x.dim(0), t = x.dim(1), d = x.dim(2);
  const bool rg = x.requires_grad();
  Tensor<T> out = op_result(g, Shape{nb, d}, rg);
  for (std::int64_t n = 0; n < nb; ++n) {
    for (std::int64_t j = 0; j < d; ++j) {
      out.val()[n * d + j] = x.val()[(n * t + idx) * d + j];
    }
  }
  if (g.recording && rg) {
    g.record({out}, [x, out, nb, t, d, idx] {
      x->ensure_grad();
      for (std::int64_t n = 0; n < nb; ++n) {
        for (std::int64_t j = 0; j < d; ++j) {
          x->grad[(n * t + idx) * d + j] += out->grad[n * d + j];
        }
      }
      x->grad_live = true;
    });
  }
  return out;
}

// [N,P,D] -> [N,P+1,D]: a learnable token broadcast in front of each
// sample's sequence.
template <typename T>
Tensor<T> prepend_token(Graph<T>& g, const Tensor<T>& x,
                        const Tensor<T>& tok) {
  if (x.rank() != 3) {
    throw ContractError("prepend_token expects [N,P,D]; got " +
                        shape_str(x.shape()));
  }
  opdet::check_last_dim(x, tok, "prepend_token");
  const std::int64_t nb = x.dim(0), p = x.dim(1), d = x.dim(2);
  const bool rg = x.requires_grad() || tok.requires_grad();
  Tensor<T> out = op_result(g, Shape{nb, p + 1, d}, rg);
  for (std::int64_t n = 0; n < nb; ++n) {
    T* dst = out.val().data() + n * (p + 1) * d;
    std::copy(tok.val().begin(), tok.val().end(), dst);
    const T* src = x.val().data() + n * p * d;
    std::copy(src, src + p * d, dst + d);
  }
  if (g.recording && rg) {
    g.record({out}, [x, tok, out, nb, p, d] {
      const T* gc = out->grad.data();
      if (tok.requires_grad()) {
        tok->ensure_grad();
        for (std::int64_t n = 0; n < nb; ++n) {
          for (std::int64_t j = 0; j < d; ++j) {
            tok->grad[j] += gc[n * (p + 1) * d + j];
          }
        }
        tok->grad_live = true;
      }
      if (x.requires_grad()) {
        x->ensure_grad();
        for (std::int64_t n = 0; n < nb; ++n) {
          const T* gsrc = gc + n * (p + 1) * d + d;
          T* gdst = x->grad.data() + n * p * d;
          for (std::int64_t i = 0; i < p * d; ++i) {
            gdst[i] += gsrc[i];
          }
        }
        x->grad_live = true;
      }
    });
  }
  return out;
}

// Keeps the listed token rows (same subset across the batch); keep must be
// sorted, unique, in range. Grads flow to kept rows only.
template <typename T>
Tensor<T> gather_tokens(Graph<T>& g, const Tensor<T>& x,
                        const std::vector<std::int64_t>& keep) {
  if (x.rank() != 3) {
    throw ContractError("gather_tokens expects [N,T,D]; got " +
                        shape_str(x.shape()));
  }
  const std::int64_t nb = x.dim(0), t = x.dim(1), d = x.dim(2);
  const std::int64_t kk = static_cast<std::int64_t>(keep.size());
  for (std::int64_t i = 0; i < kk; ++i) {
    const bool ordered = i == 0 || keep[i] > keep[i - 1];
    if (!ordered || keep[i] < 0 || keep[i] >= t) {
      throw ContractError("gather_tokens keep list must be sorted, unique "
                          "and within [0," + std::to_string(t) + ")");
    }
  }
  const bool rg = x.requires_grad();
  Tensor<T> out = op_result(g, Shape{nb, kk, d}, rg);
  for (std::int64_t n = 0; n < nb; ++n) {
    for (std::int64_t i = 0; i < kk; ++i) {
      const T* src = x.val().data() + (n * t + keep[i]) * d;
      T* dst = out.val().data() + (n * kk + i) * d;
      std::copy(src, src + d, dst);
    }
  }
  if (g.recording && rg) {
    g.record({out}, [x, out, keep, nb, t, d, kk] {
      x->ensure_grad();
      for (std::int64_t n = 0; n < nb; ++n) {
        for (std::int64_t i = 0; i < kk; ++i) {
          const T* gsrc = out->grad.data() + (n * kk + i) * d;
          T* gdst = x->grad.data() + (n * t + keep[i]) * d;
          for (std::int64_t j = 0; j < d; ++j) {
            gdst[j] += gsrc[j];
          }
        }
      }
      x->grad_live = true;
    });
  }
  return out;
}

// Replaces the listed token rows with a learnable fill vector; the rest pass
// through. positions must be sorted, unique, in range.
template <typename T>
Tensor<T> fill_tokens(Graph<T>& g, const Tensor<T>& x,
                      const std::vector<std::int64_t>& positions,
                      const Tensor<T>& fill) {
  if (x.rank() != 3) {
    throw ContractError("fill_tokens expects [N,T,D]; got " +
                        shape_str(x.shape()));
  }
  opdet::check_last_dim(x, fill, "fill_tokens");
  const std::int64_t nb = x.dim(0), t = x.dim(1), d = x.dim(2);
  std::vector<std::uint8_t> is_filled(static_cast<std::size_t>(t), 0);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const bool ordered = i == 0 || positions[i] > positions[i - 1];
    if (!ordered || positions[i] < 0 || positions[i] >= t) {
      throw ContractError("fill_tokens positions must be sorted, unique and "
                          "within [0," + std::to_string(t) + ")");
    }
    is_filled[static_cast<std::size_t>(positions[i])] = 1;
  }
  const bool rg = x.requires_grad() || fill.requires_grad();
  Tensor<T> out = op_result(g, x.shape(), rg);
  for (std::int64_t n = 0; n < nb; ++n) {
    for (std::int64_t tt = 0; tt < t; ++tt) {
      const T* src =
          is_filled[tt] ? fill.val().data() : x.val().data() + (n * t + tt) * d;
      std::copy(src, src + d, out.val().data() + (n * t + tt) * d);
    }
  }
  if (g.recording && rg) {
    g.record({out}, [x, fill, out, is_filled, nb, t, d] {
      const T* gc = out->grad.data();
      if (x.requires_grad()) {
        x->ensure_grad();
        for (std::int64_t n = 0; n < nb; ++n) {
          for (std::int64_t tt = 0; tt < t; ++tt) {
            if (!is_filled[tt]) {
              for (std::int64_t j = 0; j < d; ++j) {
                x->grad[(n * t + tt) * d + j] += gc[(n * t + tt) * d + j];
              }
            }
          }
        }
        x->grad_live = true;
      }
      if (fill.requires_grad()) {
        fill->ensure_grad();
        for (std::int64_t n = 0; n < nb; ++n) {
          for (std::int64_t tt = 0; tt < t; ++tt) {
            if (is_filled[tt]) {
              for (std::int64_t j = 0; j < d; ++j) {
                fill->grad[j] += gc[(n * t + tt) * d + j];
              }
            }
          }
        }
        fill->grad_live = true;
      }
    });
  }
  return out;
}

// Inverted dropout with an externally sampled keep mask (1 bit per element):
// out = x * keep / keep_prob. Callers skip the op entirely when p == 0.
template <typename T>
Tensor<T> dropout_mask(Graph<T>& g, const Tensor<T>& x,
                       std::shared_ptr<std::vector<std::uint8_t>> keep,
                       T keep_prob) {
  if (static_cast<std::int64_t>(keep->size()) != x.numel()) {
    throw ContractError("dropout_mask keep mask size mismatch");
  }
  if (!(keep_prob > T(0)) || keep_prob > T(1)) {
    throw ContractError("dropout_mask keep_prob must be in (0,1]");
  }
  const T inv = T(1) / keep_prob;
  const bool rg = x.requires_grad();
  Tensor<T> out = op_result(g, x.shape(), rg);
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    out.val()[i] = (*keep)[i] ? x.val()[i] * inv : T(0);
  }
  if (g.recording && rg) {
    g.record({out}, [x, out, keep, inv, n] {
      x->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        if ((*keep)[i]) {
          x->grad[i] += out->grad[i] * inv;
        }
      }
      x->grad_live = true;
    });
  }
  return out;
}

// Multiplies each leading-dim slice by a fixed factor; carries stochastic
// depth (factor 0 or 1/keep_prob per sample).
template <typename T>
Tensor<T> scale_rows(Graph<T>& g, const Tensor<T>& x,
                     std::shared_ptr<std::vector<T>> factors) {
  if (x.rank() < 2 ||
      static_cast<std::int64_t>(factors->size()) != x.dim(0)) {
    throw ContractError("scale_rows expects one factor per leading slice");
  }
  const std::int64_t nb = x.dim(0);
  const std::int64_t per = x.numel() / nb;
  const bool rg = x.requires_grad();
  Tensor<T> out = op_result(g, x.shape(), rg);
  for (std::int64_t n = 0; n < nb; ++n) {
    const T f = (*factors)[n];
    for (std::int64_t i = 0; i < per; ++i) {
      out.val()[n * per + i] = x.val()[n * per + i] * f;
    }
  }
  if (g.recording && rg) {
    g.record({out}, [x, out, factors, nb, per] {
      x->ensure_grad();
      for (std::int64_t n = 0; n < nb; ++n) {
        const T f = (*factors)[n];
        for (std::int64_t i = 0; i < per; ++i) {
          x->grad[n * per + i] += out->grad[n * per + i] * f;
        }
      }
      x->grad_live = true;
    });
  }
  return out;
}

// Fused multi-head self-attention. qkv is [N,T,3D] laid out as the q block,
// then k, then v, each D wide and split into H heads of D/H. Softmax
// probabilities are cached for the backward pass; everything else is
// recomputed from qkv. All matmuls go through the lane-blocked kernels.
template <typename T>
Tensor<T> mha(Graph<T>& g, const Tensor<T>& qkv, std::int64_t heads) {
  if (qkv.rank() != 3 || qkv.dim(2) % 3 != 0) {
    throw ContractError("mha expects qkv[N,T,3D]; got " +
                        shape_str(qkv.shape()));
  }
  const std::int64_t nb = qkv.dim(0), t = qkv.dim(1), d = qkv.dim(2) / 3;
  if (heads < 1 || d % heads != 0) {
    throw ContractError("mha head count " + std::to_string(heads) +
                        " must divide model dim " + std::to_string(d));
  }
  const std::int64_t hd = d / heads;
  const T att_scale = T(1) / std::sqrt(static_cast<T>(hd));
  const bool rg = qkv.requires_grad();
  Tensor<T> out = op_result(g, Shape{nb, t, d}, rg);
  auto probs = std::make_shared<std::vector<T>>(
      static_cast<std::size_t>(nb * heads * t * t));

  std::vector<T> q(static_cast<std::size_t>(t * hd));
  std::vector<T> k(static_cast<std::size_t>(t * hd));
  std::vector<T> vt(static_cast<std::size_t>(hd * t));
  std::vector<T> s(static_cast<std::size_t>(t * t));
  std::vector<T> o(static_cast<std::size_t>(t * hd));
  const std::int64_t row = 3 * d;
  for (std::int64_t n = 0; n < nb; ++n) {
    for (std::int64_t h = 0; h < heads; ++h) {
      const T* base = qkv.val().data() + n * t * row;
      for (std::int64_t tt = 0; tt < t; ++tt) {
        const T* r = base + tt * row + h * hd;
        for (std::int64_t j = 0; j < hd; ++j) {
          q[tt * hd + j] = r[j];
          k[tt * hd + j] = r[d + j];
          vt[j * t + tt] = r[2 * d + j];
        }
      }
      kernels::gemm_rowdot(q.data(), k.data(), s.data(), t, t, hd, false);
      T* p = probs->data() + (n * heads + h) * t * t;
      for (std::int64_t r = 0; r < t; ++r) {
        T* sr = s.data() + r * t;
        T mx = sr[0] * att_scale;
        for (std::int64_t j = 0; j < t; ++j) {
          sr[j] *= att_scale;
          mx = std::max(mx, sr[j]);
        }
        T sum = T(0);
        for (std::int64_t j = 0; j < t; ++j) {
          p[r * t + j] = std::exp(sr[j] - mx);
          sum += p[r * t + j];
        }
        const T inv = T(1) / sum;
        for (std::int64_t j = 0; j < t; ++j) {
          p[r * t + j] *= inv;
        }
      }
      kernels::gemm_rowdot(p, vt.data(), o.data(), t, hd, t, false);
      T* od = out.val().data() + n * t * d;
      for (std::int64_t tt = 0; tt < t; ++tt) {
        for (std::int64_t j = 0; j < hd; ++j) {
          od[tt * d + h * hd + j] = o[tt * hd + j];
        }
      }
    }
  }

  if (g.recording && rg) {
    g.record({out}, [qkv, out, probs, nb, t, d, heads, hd, att_scale, row] {
      qkv->ensure_grad();
      std::vector<T> q(static_cast<std::size_t>(t * hd));
      std::vector<T> k(static_cast<std::size_t>(t * hd));
      std::vector<T> v(static_cast<std::size_t>(t * hd));
      std::vector<T> go(static_cast<std::size_t>(t * hd));
      std::vector<T> pt(static_cast<std::size_t>(t * t));
      std::vector<T> got(static_cast<std::size_t>(hd * t));
      std::vector<T> gp(static_cast<std::size_t>(t * t));
      std::vector<T> gs(static_cast<std::size_t>(t * t));
      std::vector<T> gst(static_cast<std::size_t>(t * t));
      std::vector<T> kt(static_cast<std::size_t>(hd * t));
      std::vector<T> qt(static_cast<std::size_t>(hd * t));
      std::vector<T> gq(static_cast<std::size_t>(t * hd));
      std::vector<T> gk(static_cast<std::size_t>(t * hd));
      std::vector<T> gv(static_cast<std::size_t>(t * hd));
      for (std::int64_t n = 0; n < nb; ++n) {
        for (std::int64_t h = 0; h < heads; ++h) {
          const T* base = qkv.val().data() + n * t * row;
          const T* god = out->grad.data() + n * t * d;
          for (std::int64_t tt = 0; tt < t; ++tt) {
            const T* r = base + tt * row + h * hd;
            for (std::int64_t j = 0; j < hd; ++j) {
              q[tt * hd + j] = r[j];
              k[tt * hd + j] = r[d + j];
              v[tt * hd + j] = r[2 * d + j];
              go[tt * hd + j] = god[tt * d + h * hd + j];
              qt[j * t + tt] = r[j];
              kt[j * t + tt] = r[d + j];
              got[j * t + tt] = god[tt * d + h * hd + j];
            }
          }
          const T* p = probs->data() + (n * heads + h) * t * t;
          opdet::transpose_pack(p, t, t, pt.data());
          // dV = P^T . dO
          kernels::gemm_rowdot(pt.data(), got.data(), gv.data(), t, hd, t,
                               false);
          // dP = dO . V^T
          kernels::gemm_rowdot(go.data(), v.data(), gp.data(), t, t, hd,
                               false);
          // softmax backward, then the attention scale.
          for (std::int64_t r = 0; r < t; ++r) {
            T dot = T(0);
            for (std::int64_t j = 0; j < t; ++j) {
              dot += gp[r * t + j] * p[r * t + j];
            }
            for (std::int64_t j = 0; j < t; ++j) {
              gs[r * t + j] =
                  att_scale * p[r * t + j] * (gp[r * t + j] - dot);
            }
          }
          // dQ = dS . K, dK = dS^T . Q
          kernels::gemm_rowdot(gs.data(), kt.data(), gq.data(), t, hd, t,
                               false);
          opdet::transpose_pack(gs.data(), t, t, gst.data());
          kernels::gemm_rowdot(gst.data(), qt.data(), gk.data(), t, hd, t,
                               false);
          T* gbase = qkv->grad.data() + n * t * row;
          for (std::int64_t tt = 0; tt < t; ++tt) {
            T* r = gbase + tt * row + h * hd;
            for (std::int64_t j = 0; j < hd; ++j) {
              r[j] += gq[tt * hd + j];
              r[d + j] += gk[tt * hd + j];
              r[2 * d + j] += gv[tt * hd + j];
            }
          }
        }
      }
      qkv->grad_live = true;
    });
  }
  return out;
}

template <typename T>
inline bool all_finite(const std::vector<T>& v) {
  for (T x : v) {
    if (!std::isfinite(x)) {
      return false;
    }
  }
  return true;
}

// Entropy of a soft distribution row set, guarded log: -sum t*log(max(t,1e-12)).
// Mean over rows, matching cross_entropy_soft's reduction.
template <typename T>
inline T entropy_mean(const std::vector<T>& t, std::int64_t rows) {
  const std::int64_t c = static_cast<std::int64_t>(t.size()) / rows;
  T total = T(0);
  for (std::int64_t r = 0; r < rows; ++r) {
    for (std::int64_t j = 0; j < c; ++j) {
      const T p = t[r * c + j];
      total -= p * std::log(std::max(p, T(1e-12)));
    }
  }
  return total / static_cast<T>(rows);
}

template <typename T>
inline std::vector<std::int64_t> argmax_rows(const std::vector<T>& v,
                                             std::int64_t cols) {
  const std::int64_t rows = static_cast<std::int64_t>(v.size()) / cols;
  std::vector<std::int64_t> out(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    std::int64_t best = 0;
    for (std::int64_t j = 1; j < cols; ++j) {
      if (v[r * cols + j] > v[r * cols + best]) {
        best = j;
      }
    }
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

}  // namespace augsub
