// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense f64 kernels.  Every kernel has a serial reference and an OpenMP
// variant that parallelizes over independent output elements while keeping
// the per-element accumulation order identical to the serial code, so the
// two produce bit-identical results (enforced by tests and the benchmark).

#include <cstddef>

namespace latentplan::kernels {

enum class Backend { serial, parallel };

// Process-wide backend selection (default: parallel when built with OpenMP).
void set_backend(Backend b);
Backend backend();
int max_threads();

// C[m x n] = A[m x k] * B[k x n], row-major
void matmul_serial(const double* A, const double* B, double* C,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_parallel(const double* A, const double* B, double* C,
                     std::size_t m, std::size_t k, std::size_t n);
void matmul(const double* A, const double* B, double* C,
            std::size_t m, std::size_t k, std::size_t n);

// elementwise out[i] = a[i] + b[i] etc.
void add_serial(const double* a, const double* b, double* out, std::size_t n);
void add_parallel(const double* a, const double* b, double* out, std::size_t n);
void add(const double* a, const double* b, double* out, std::size_t n);

void mul_serial(const double* a, const double* b, double* out, std::size_t n);
void mul_parallel(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);

void scale_serial(const double* a, double s, double* out, std::size_t n);
void scale_parallel(const double* a, double s, double* out, std::size_t n);
void scale(const double* a, double s, double* out, std::size_t n);

// exact GELU: x * Phi(x) with Phi from erf
void gelu_serial(const double* x, double* out, std::size_t n);
void gelu_parallel(const double* x, double* out, std::size_t n);
void gelu(const double* x, double* out, std::size_t n);

// derivative of exact GELU
void gelu_grad_serial(const double* x, double* out, std::size_t n);
void gelu_grad_parallel(const double* x, double* out, std::size_t n);
void gelu_grad(const double* x, double* out, std::size_t n);

} // namespace latentplan::kernels
