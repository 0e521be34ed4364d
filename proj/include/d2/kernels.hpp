#pragma once

#include <cstddef>
#include <span>

// Dense row-major matrix kernels used by the tape. Every kernel has an
// OpenMP version and a serial reference; both accumulate each output entry
// in the same order, so their results are bitwise identical.
namespace d2::kernels {

// c[m,n] = a[m,k] * b[k,n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);

// c[m,k] += g[m,n] * b[k,n]^T
void matmul_nt_acc(std::span<const double> g, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_nt_acc_serial(std::span<const double> g, std::span<const double> b,
                          std::span<double> c, std::size_t m, std::size_t k, std::size_t n);

// c[k,n] += a[m,k]^T * g[m,n]
void matmul_tn_acc(std::span<const double> a, std::span<const double> g, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_tn_acc_serial(std::span<const double> a, std::span<const double> g,
                          std::span<double> c, std::size_t m, std::size_t k, std::size_t n);

// Work (m*k*n) below which the OpenMP kernels stay on the calling thread.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 16;

}  // namespace d2::kernels
