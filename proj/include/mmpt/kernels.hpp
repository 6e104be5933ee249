#pragma once

// Dense inner-loop kernels used by the matrix and autodiff layers.
//
// Every kernel has a scalar reference implementation and, on x86-64, an
// AVX2/FMA variant. The active backend is chosen once at startup from CPUID
// and can be overridden for equivalence testing. All matrices are row-major.
//
// Row independence: for gemm_nn and gemm_nt the value of output row i depends
// only on row i of A, with a fixed accumulation order. Stacking more rows into
// a call therefore never changes the bits of an existing row.

#include <cstddef>
#include <string_view>

namespace mmpt::kernels {

enum class Backend { scalar, avx2 };

[[nodiscard]] bool avx2_available() noexcept;
[[nodiscard]] Backend active_backend() noexcept;
void set_backend(Backend backend);
[[nodiscard]] std::string_view backend_name(Backend backend) noexcept;

// C[n x m] (+)= A[n x k] * B[k x m]
template <class T>
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate);

// C[n x m] (+)= A[n x k] * B[m x k]^T
template <class T>
void gemm_nt(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate);

// C[n x m] (+)= A[k x n]^T * B[k x m]
template <class T>
void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate);

template <class T>
T dot(std::size_t n, const T* x, const T* y);

// y += alpha * x
template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y);

namespace scalar {
template <class T>
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate);
template <class T>
void gemm_nt(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate);
template <class T>
void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate);
template <class T>
T dot(std::size_t n, const T* x, const T* y);
template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
}  // namespace scalar

namespace avx2 {
template <class T>
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate);
template <class T>
void gemm_nt(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate);
template <class T>
void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const T* a, const T* b, T* c,
             bool accumulate);
template <class T>
T dot(std::size_t n, const T* x, const T* y);
template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y);
}  // namespace avx2

}  // namespace mmpt::kernels
