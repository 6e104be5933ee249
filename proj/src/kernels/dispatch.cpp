#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "mmpt/kernels.hpp"

namespace mmpt::kernels {

namespace avx2 {
bool compiled_with_avx2() noexcept;
}

namespace {

bool detect_avx2() noexcept {
#if defined(__x86_64__) || defined(_M_X64)
  if (!avx2::compiled_with_avx2()) return false;
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() noexcept {
  // MMPT_KERNELS=scalar forces the reference path (useful when bisecting).
  if (const char* env = std::getenv("MMPT_KERNELS"); env && std::string(env) == "scalar") {
    return Backend::scalar;
  }
  return detect_avx2() ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{initial_backend()};
  return slot;
}

}  // namespace

bool avx2_available() noexcept {
  static const bool available = detect_avx2();
  return available;
}

Backend active_backend() noexcept { return backend_slot().load(std::memory_order_relaxed); }

void set_backend(Backend backend) {
  if (backend == Backend::avx2 && !avx2_available()) {
    throw std::runtime_error("AVX2/FMA kernels are not available on this host");
  }
  backend_slot().store(backend, std::memory_order_relaxed);
}

std::string_view backend_name(Backend backend) noexcept {
  return backend == Backend::avx2 ? "avx2" : "scalar";
}

template <class T>
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate) {
  if (active_backend() == Backend::avx2) {
    avx2::gemm_nn(n, k, m, a, b, c, accumulate);
  } else {
    scalar::gemm_nn(n, k, m, a, b, c, accumulate);
  }
}

template <class T>
void gemm_nt(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate) {
  if (active_backend() == Backend::avx2) {
    avx2::gemm_nt(n, k, m, a, b, c, accumulate);
  } else {
    scalar::gemm_nt(n, k, m, a, b, c, accumulate);
  }
}

template <class T>
void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate) {
  if (active_backend() == Backend::avx2) {
    avx2::gemm_tn(n, k, m, a, b, c, accumulate);
  } else {
    scalar::gemm_tn(n, k, m, a, b, c, accumulate);
  }
}

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
  return active_backend() == Backend::avx2 ? avx2::dot(n, x, y) : scalar::dot(n, x, y);
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  if (active_backend() == Backend::avx2) {
    avx2::axpy(n, alpha, x, y);
  } else {
    scalar::axpy(n, alpha, x, y);
  }
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

}  // namespace mmpt::kernels
