#include "mmpt/kernels.hpp"

namespace mmpt::kernels::scalar {

template <class T>
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) {
    T* crow = c + i * m;
    if (!accumulate) {
      for (std::size_t j = 0; j < m; ++j) crow[j] = T(0);
    }
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void gemm_nt(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
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
    for (std::size_t i = 0; i < n; ++i) {
      const T av = arow[i];
      T* crow = c + i * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

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

}  // namespace mmpt::kernels::scalar
