#include "d2/kernels.hpp"

#include <algorithm>
#include <cstdint>

namespace d2::kernels {
namespace {

inline void matmul_row(const double* a, const double* b, double* c, std::size_t k,
                       std::size_t n) {
  std::fill(c, c + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

inline void matmul_nt_row(const double* g, const double* b, double* c, std::size_t k,
                          std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * n;
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += g[j] * brow[j];
    c[p] += s;
  }
}

// Row p of c = sum_i a[i,p] * g[i,:]
inline void matmul_tn_row(const double* a, const double* g, double* crow, std::size_t p,
                          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double av = a[i * k + p];
    const double* grow = g + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
  }
}

}  // namespace

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (std::int64_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    matmul_row(a.data() + r * k, b.data(), c.data() + r * n, k, n);
  }
}

void matmul_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a.data() + i * k, b.data(), c.data() + i * n, k, n);
}

void matmul_nt_acc(std::span<const double> g, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (std::int64_t i = 0; i < rows; ++i) {
    const auto r = static_cast<std::size_t>(i);
    matmul_nt_row(g.data() + r * n, b.data(), c.data() + r * k, k, n);
  }
}

void matmul_nt_acc_serial(std::span<const double> g, std::span<const double> b,
                          std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_nt_row(g.data() + i * n, b.data(), c.data() + i * k, k, n);
}

void matmul_tn_acc(std::span<const double> a, std::span<const double> g, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<std::int64_t>(k);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (std::int64_t p = 0; p < rows; ++p) {
    const auto r = static_cast<std::size_t>(p);
    matmul_tn_row(a.data(), g.data(), c.data() + r * n, r, m, k, n);
  }
}

void matmul_tn_acc_serial(std::span<const double> a, std::span<const double> g,
                          std::span<double> c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) matmul_tn_row(a.data(), g.data(), c.data() + p * n, p, m, k, n);
}

}  // namespace d2::kernels
