#include <cmath>
#include <cstring>
#include <vector>

#include "augsub/kernels.hpp"
#include "augsub/rng.hpp"
#include "doctest.h"

using namespace augsub;

namespace {

template <typename T>
std::vector<T> random_vec(std::int64_t n, std::uint64_t tag) {
  Rng rng = Rng::keyed(42, {tag});
  std::vector<T> v(static_cast<std::size_t>(n));
  for (T& x : v) {
    x = static_cast<T>(rng.next_normal());
  }
  return v;
}

struct Dims {
  std::int64_t m, n, k;
};

const Dims kDims[] = {{1, 1, 1},   {3, 5, 7},     {4, 4, 3},
                      {8, 8, 8},   {17, 9, 33},   {5, 7, 1},
                      {33, 17, 100}, {64, 24, 96}, {128, 64, 40}};

}  // namespace

TEST_CASE("gemm matches a wide-accumulator reference") {
  for (const Dims& d : kDims) {
    for (bool acc : {false, true}) {
      const auto a = random_vec<float>(d.m * d.k, 1);
      const auto b = random_vec<float>(d.n * d.k, 2);
      auto c = random_vec<float>(d.m * d.n, 3);
      std::vector<float> c0 = c;
      kernels::gemm_rowdot(a.data(), b.data(), c.data(), d.m, d.n, d.k, acc);
      for (std::int64_t i = 0; i < d.m; ++i) {
        for (std::int64_t j = 0; j < d.n; ++j) {
          double ref = acc ? static_cast<double>(c0[i * d.n + j]) : 0.0;
          double mag = std::abs(ref);
          for (std::int64_t kk = 0; kk < d.k; ++kk) {
            const double prod = static_cast<double>(a[i * d.k + kk]) *
                                static_cast<double>(b[j * d.k + kk]);
            ref += prod;
            mag += std::abs(prod);
          }
          const double got = c[i * d.n + j];
          const double tol = 16.0 * 1.19209290e-7 * std::max(1.0, mag);
          CHECK(std::abs(got - ref) <= tol);
        }
      }
    }
  }
}

TEST_CASE("gemm bits agree across backends, worker counts and accumulate") {
  std::vector<kernels::Backend> backends{kernels::Backend::scalar};
  if (kernels::detail::backend_supported(kernels::Backend::avx2)) {
    backends.push_back(kernels::Backend::avx2);
  }
  if (kernels::detail::backend_supported(kernels::Backend::neon)) {
    backends.push_back(kernels::Backend::neon);
  }
  for (const Dims& d : kDims) {
    for (bool acc : {false, true}) {
      const auto af = random_vec<float>(d.m * d.k, 10);
      const auto bf = random_vec<float>(d.n * d.k, 11);
      const auto cf0 = random_vec<float>(d.m * d.n, 12);

      std::vector<float> ref = cf0;
      kernels::detail::impl(backends[0])
          .gemm_f32(af.data(), bf.data(), ref.data(), d.m, d.n, d.k, acc);
      for (std::size_t bi = 1; bi < backends.size(); ++bi) {
        std::vector<float> out = cf0;
        kernels::detail::impl(backends[bi])
            .gemm_f32(af.data(), bf.data(), out.data(), d.m, d.n, d.k, acc);
        CHECK(std::memcmp(out.data(), ref.data(), out.size() * 4) == 0);
      }
      for (int workers : {1, 3, 7}) {
        std::vector<float> out = cf0;
        kernels::gemm_rowdot_workers(af.data(), bf.data(), out.data(), d.m,
                                     d.n, d.k, acc, workers);
        CHECK(std::memcmp(out.data(), ref.data(), out.size() * 4) == 0);
      }

      const auto ad = random_vec<double>(d.m * d.k, 13);
      const auto bd = random_vec<double>(d.n * d.k, 14);
      const auto cd0 = random_vec<double>(d.m * d.n, 15);
      std::vector<double> refd = cd0;
      kernels::detail::impl(backends[0])
          .gemm_f64(ad.data(), bd.data(), refd.data(), d.m, d.n, d.k, acc);
      for (std::size_t bi = 1; bi < backends.size(); ++bi) {
        std::vector<double> out = cd0;
        kernels::detail::impl(backends[bi])
            .gemm_f64(ad.data(), bd.data(), out.data(), d.m, d.n, d.k, acc);
        CHECK(std::memcmp(out.data(), refd.data(), out.size() * 8) == 0);
      }
      for (int workers : {1, 3, 7}) {
        std::vector<double> out = cd0;
        kernels::gemm_rowdot_workers(ad.data(), bd.data(), out.data(), d.m,
                                     d.n, d.k, acc, workers);
        CHECK(std::memcmp(out.data(), refd.data(), out.size() * 8) == 0);
      }
    }
  }
}

TEST_CASE("sumsq matches a wide reference and agrees across backends") {
  for (std::int64_t n : {0, 1, 2, 7, 8, 9, 31, 64, 1000}) {
    const auto x = random_vec<float>(n, 20);
    double ref = 0.0;
    for (float v : x) {
      ref += static_cast<double>(v) * static_cast<double>(v);
    }
    const float got = kernels::sumsq(x.data(), n);
    CHECK(std::abs(got - ref) <= 16.0 * 1.19209290e-7 * std::max(1.0, ref));
    const float scalar =
        kernels::detail::impl(kernels::Backend::scalar).sumsq_f32(x.data(), n);
    CHECK(std::memcmp(&got, &scalar, 4) == 0);

    const auto xd = random_vec<double>(n, 21);
    double refd = 0.0;
    for (double v : xd) {
      refd += v * v;
    }
    const double gotd = kernels::sumsq(xd.data(), n);
    CHECK(std::abs(gotd - refd) <= 1e-12 * std::max(1.0, refd));
  }
}

TEST_CASE("adamw first step lands on the classic 0.9") {
  float p = 1.0f, m = 0.0f, v = 0.0f;
  const float g = 1.0f;
  // t=1: m_hat = g, v_hat = g^2, so the update is lr * 1/(1+eps).
  kernels::adamw_update(&p, &m, &v, &g, 1, 0.1f, 0.9f, 0.999f, 1e-8f, 0.0f,
                        0.1f, 0.001f);
  CHECK(p == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(m == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(v == doctest::Approx(0.001).epsilon(1e-6));
}

TEST_CASE("adamw matches the documented formula elementwise") {
  const std::int64_t n = 37;  // odd: exercises the vector tail
  auto p = random_vec<float>(n, 30);
  auto m = random_vec<float>(n, 31);
  auto v = random_vec<float>(n, 32);
  const auto g = random_vec<float>(n, 33);
  for (float& x : v) {
    x = std::abs(x);  // second moments are sums of squares
  }
  const std::vector<float> p0 = p, m0 = m, v0 = v;
  const float lr = 3e-3f, b1 = 0.9f, b2 = 0.999f, eps = 1e-8f, wd = 0.05f;
  const float bc1 = 1.0f - 0.9f * 0.9f, bc2 = 1.0f - 0.999f * 0.999f;
  kernels::adamw_update(p.data(), m.data(), v.data(), g.data(), n, lr, b1, b2,
                        eps, wd, bc1, bc2);
  for (std::int64_t i = 0; i < n; ++i) {
    const double mi = b1 * m0[i] + (1.0 - b1) * g[i];
    const double vi = b2 * v0[i] + (1.0 - b2) * g[i] * g[i];
    double pi = p0[i] - lr * wd * p0[i];
    pi -= lr * ((mi / bc1) / (std::sqrt(vi / bc2) + eps));
    CHECK(m[i] == doctest::Approx(mi).epsilon(1e-5));
    CHECK(v[i] == doctest::Approx(vi).epsilon(1e-5));
    CHECK(p[i] == doctest::Approx(pi).epsilon(1e-5));
  }
}

TEST_CASE("adamw bits agree across backends") {
  std::vector<kernels::Backend> backends{kernels::Backend::scalar};
  if (kernels::detail::backend_supported(kernels::Backend::avx2)) {
    backends.push_back(kernels::Backend::avx2);
  }
  if (kernels::detail::backend_supported(kernels::Backend::neon)) {
    backends.push_back(kernels::Backend::neon);
  }
  for (std::int64_t n : {1, 7, 8, 16, 37, 256}) {
    auto p0 = random_vec<float>(n, 40);
    auto m0 = random_vec<float>(n, 41);
    auto v0 = random_vec<float>(n, 42);
    const auto g = random_vec<float>(n, 43);
    for (float& x : v0) {
      x = std::abs(x);
    }
    std::vector<float> pr, mr, vr;
    for (std::size_t bi = 0; bi < backends.size(); ++bi) {
      std::vector<float> p = p0, m = m0, v = v0;
      kernels::detail::impl(backends[bi])
          .adamw_f32(p.data(), m.data(), v.data(), g.data(), n, 1e-3f, 0.9f,
                     0.999f, 1e-8f, 0.05f, 0.1f, 0.001f);
      if (bi == 0) {
        pr = p;
        mr = m;
        vr = v;
      } else {
        CHECK(std::memcmp(p.data(), pr.data(), p.size() * 4) == 0);
        CHECK(std::memcmp(m.data(), mr.data(), m.size() * 4) == 0);
        CHECK(std::memcmp(v.data(), vr.data(), v.size() * 4) == 0);
      }
    }
  }
}

TEST_CASE("the active backend is supported and named") {
  const kernels::Backend b = kernels::active_backend();
  CHECK(kernels::detail::backend_supported(b));
  CHECK(kernels::backend_name(b) != nullptr);
}
