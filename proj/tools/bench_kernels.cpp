// SPDX-License-Identifier: Apache-2.0
// Compares the serial reference kernels against the OpenMP variants: checks
// bit-identity on every shape, then reports timings.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "latentplan/kernels.hpp"
#include "latentplan/rng.hpp"

namespace k = latentplan::kernels;
using clk = std::chrono::steady_clock;

namespace {
double time_ms(int reps, const std::function<void()>& fn) {
    fn();  // warm
    const auto t0 = clk::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = clk::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}
} // namespace

int main() {
    latentplan::Rng rng(1);
    std::printf("threads available: %d\n", k::max_threads());
    std::printf("%-28s %10s %10s %8s %8s\n", "kernel", "serial ms", "openmp ms", "speedup", "bits");

    const std::size_t matmul_shapes[][3] = {{64, 128, 128}, {256, 256, 256}, {512, 384, 512}};
    for (const auto& s : matmul_shapes) {
        const std::size_t m = s[0], kk = s[1], n = s[2];
        std::vector<double> A(m * kk), B(kk * n), Cs(m * n), Cp(m * n);
        for (double& v : A) v = rng.uniform(-1.0, 1.0);
        for (double& v : B) v = rng.uniform(-1.0, 1.0);
        const double ts = time_ms(3, [&] { k::matmul_serial(A.data(), B.data(), Cs.data(), m, kk, n); });
        const double tp = time_ms(3, [&] { k::matmul_parallel(A.data(), B.data(), Cp.data(), m, kk, n); });
        const bool same = std::memcmp(Cs.data(), Cp.data(), Cs.size() * 8) == 0;
        char name[64];
        std::snprintf(name, sizeof name, "matmul %zux%zux%zu", m, kk, n);
        std::printf("%-28s %10.3f %10.3f %7.2fx %8s\n", name, ts, tp, ts / tp, same ? "equal" : "DIFFER");
        if (!same) return 1;
    }

    const std::size_t n = 1 << 22;
    std::vector<double> a(n), out_s(n), out_p(n);
    for (double& v : a) v = rng.uniform(-3.0, 3.0);
    const double ts = time_ms(5, [&] { k::gelu_serial(a.data(), out_s.data(), n); });
    const double tp = time_ms(5, [&] { k::gelu_parallel(a.data(), out_p.data(), n); });
    const bool same = std::memcmp(out_s.data(), out_p.data(), n * 8) == 0;
    std::printf("%-28s %10.3f %10.3f %7.2fx %8s\n", "gelu 4M", ts, tp, ts / tp, same ? "equal" : "DIFFER");
    return same ? 0 : 1;
}
