// SPDX-License-Identifier: Apache-2.0
#include "latentplan/kernels.hpp"

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace latentplan::kernels {

namespace {
#ifdef _OPENMP
Backend g_backend = Backend::parallel;
#else
Backend g_backend = Backend::serial;
#endif

// one output row of C = A*B; identical accumulation order in both backends
inline void matmul_row(const double* A, const double* B, double* C,
                       std::size_t i, std::size_t k, std::size_t n) {
    double* c = C + i * n;
    const double* a = A + i * k;
    for (std::size_t j = 0; j < n; ++j) c[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
        const double av = a[p];
        const double* b = B + p * n;
        for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
}

inline double gelu1(double x) {
    // x * Phi(x), Phi(x) = 0.5 * (1 + erf(x / sqrt(2)))
    return x * 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
}

inline double gelu_grad1(double x) {
    const double inv_sqrt2 = 0.7071067811865475244;
    const double inv_sqrt2pi = 0.3989422804014326779;
    const double phi_cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
    const double phi_pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
    return phi_cdf + x * phi_pdf;
}
} // namespace

void set_backend(Backend b) { g_backend = b; }
Backend backend() { return g_backend; }

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void matmul_serial(const double* A, const double* B, double* C,
                   std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) matmul_row(A, B, C, i, k, n);
}

void matmul_parallel(const double* A, const double* B, double* C,
                     std::size_t m, std::size_t k, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < m; ++i) matmul_row(A, B, C, i, k, n);
#else
    matmul_serial(A, B, C, m, k, n);
#endif
}

void matmul(const double* A, const double* B, double* C,
            std::size_t m, std::size_t k, std::size_t n) {
    if (g_backend == Backend::parallel)
        matmul_parallel(A, B, C, m, k, n);
    else
        matmul_serial(A, B, C, m, k, n);
}

#define LP_ELEMENTWISE(name, expr)                                              \
    void name##_serial(const double* a, const double* b, double* out,           \
                       std::size_t n) {                                         \
        for (std::size_t i = 0; i < n; ++i) out[i] = (expr);                    \
    }                                                                           \
    void name##_parallel(const double* a, const double* b, double* out,         \
                         std::size_t n) {                                       \
        _Pragma("omp parallel for schedule(static)")                            \
        for (std::size_t i = 0; i < n; ++i) out[i] = (expr);                    \
    }                                                                           \
    void name(const double* a, const double* b, double* out, std::size_t n) {   \
        if (g_backend == Backend::parallel)                                     \
            name##_parallel(a, b, out, n);                                      \
        else                                                                    \
            name##_serial(a, b, out, n);                                        \
    }

LP_ELEMENTWISE(add, a[i] + b[i])
LP_ELEMENTWISE(mul, a[i] * b[i])
#undef LP_ELEMENTWISE

void scale_serial(const double* a, double s, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}
void scale_parallel(const double* a, double s, double* out, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}
void scale(const double* a, double s, double* out, std::size_t n) {
    if (g_backend == Backend::parallel)
        scale_parallel(a, s, out, n);
    else
        scale_serial(a, s, out, n);
}

void gelu_serial(const double* x, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = gelu1(x[i]);
}
void gelu_parallel(const double* x, double* out, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) out[i] = gelu1(x[i]);
}
void gelu(const double* x, double* out, std::size_t n) {
    if (g_backend == Backend::parallel)
        gelu_parallel(x, out, n);
    else
        gelu_serial(x, out, n);
}

void gelu_grad_serial(const double* x, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = gelu_grad1(x[i]);
}
void gelu_grad_parallel(const double* x, double* out, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) out[i] = gelu_grad1(x[i]);
}
void gelu_grad(const double* x, double* out, std::size_t n) {
    if (g_backend == Backend::parallel)
        gelu_grad_parallel(x, out, n);
    else
        gelu_grad_serial(x, out, n);
}

} // namespace latentplan::kernels
