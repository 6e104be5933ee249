#include "mmpt/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define MMPT_HAVE_AVX2 1
#else
#define MMPT_HAVE_AVX2 0
#endif

namespace mmpt::kernels::avx2 {

#if MMPT_HAVE_AVX2

namespace {

template <class T>
struct Vec;

template <>
struct Vec<float> {
  using reg = __m256;
  static constexpr std::size_t width = 8;
  static reg zero() { return _mm256_setzero_ps(); }
  static reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
  static reg broadcast(float v) { return _mm256_set1_ps(v); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
  static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
  static float hsum(reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

template <>
struct Vec<double> {
  using reg = __m256d;
  static constexpr std::size_t width = 4;
  static reg zero() { return _mm256_setzero_pd(); }
  static reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
  static reg broadcast(double v) { return _mm256_set1_pd(v); }
  static reg fmadd(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
  static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
  static double hsum(reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
  }
};

// row += av * brow over m columns
template <class T>
inline void row_fma(std::size_t m, T av, const T* brow, T* crow) {
  using V = Vec<T>;
  const auto a = V::broadcast(av);
  std::size_t j = 0;
  for (; j + V::width <= m; j += V::width) {
    V::store(crow + j, V::fmadd(a, V::load(brow + j), V::load(crow + j)));
  }
  for (; j < m; ++j) crow[j] += av * brow[j];
}

template <class T>
inline T dot_impl(std::size_t n, const T* x, const T* y) {
  using V = Vec<T>;
  auto acc0 = V::zero();
  auto acc1 = V::zero();
  std::size_t i = 0;
  for (; i + 2 * V::width <= n; i += 2 * V::width) {
    acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
    acc1 = V::fmadd(V::load(x + i + V::width), V::load(y + i + V::width), acc1);
  }
  for (; i + V::width <= n; i += V::width) {
    acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
  }
  T acc = V::hsum(V::add(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

}  // namespace

template <class T>
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) {
    T* crow = c + i * m;
    if (!accumulate) {
      for (std::size_t j = 0; j < m; ++j) crow[j] = T(0);
    }
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) row_fma(m, arow[p], b + p * m, crow);
  }
}

template <class T>
void gemm_nt(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const T acc = dot_impl(k, arow, b + j * k);
      crow[j] = accumulate ? crow[j] + acc : acc;
    }
  }
}

template <class T>
void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < n * m; ++i) c[i] = T(0);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * n;
    const T* brow = b + p * m;
    for (std::size_t i = 0; i < n; ++i) row_fma(m, arow[i], brow, c + i * m);
  }
}

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
  return dot_impl(n, x, y);
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  row_fma(n, alpha, x, y);
}

#else  // no AVX2 at compile time: route to the reference kernels

template <class T>
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate) {
  scalar::gemm_nn(n, k, m, a, b, c, accumulate);
}
template <class T>
void gemm_nt(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate) {
  scalar::gemm_nt(n, k, m, a, b, c, accumulate);
}
template <class T>
void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate) {
  scalar::gemm_tn(n, k, m, a, b, c, accumulate);
}
template <class T>
T dot(std::size_t n, const T* x, const T* y) {
  return scalar::dot(n, x, y);
}
template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  scalar::axpy(n, alpha, x, y);
}

#endif

#define MMPT_INSTANTIATE(T)                                                                  \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,   \
                           bool);                                                           \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,   \
                           bool);                                                           \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*,   \
                           bool);                                                           \
  template T dot<T>(std::size_t, const T*, const T*);                                       \
  template void axpy<T>(std::size_t, T, const T*, T*);

MMPT_INSTANTIATE(float)
MMPT_INSTANTIATE(double)
#undef MMPT_INSTANTIATE

bool compiled_with_avx2() noexcept { return MMPT_HAVE_AVX2 != 0; }

}  // namespace mmpt::kernels::avx2
