// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "latentplan/kernels.hpp"
#include "latentplan/rng.hpp"

using namespace latentplan;
namespace k = latentplan::kernels;

namespace {
std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return v;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}
} // namespace

TEST_CASE("kernels: matmul matches naive oracle") {
    Rng rng(11);
    const std::size_t m = 5, kk = 7, n = 3;
    auto A = random_vec(rng, m * kk);
    auto B = random_vec(rng, kk * n);
    std::vector<double> C(m * n), ref(m * n, 0.0);
    k::matmul_serial(A.data(), B.data(), C.data(), m, kk, n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < kk; ++p) s += A[i * kk + p] * B[p * n + j];
            ref[i * n + j] = s;
        }
    for (std::size_t i = 0; i < C.size(); ++i) CHECK(C[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("kernels: serial and parallel are bit-identical") {
    Rng rng(21);
    // property test over assorted shapes, including ragged ones
    const std::size_t shapes[][3] = {{1, 1, 1}, {2, 3, 4}, {7, 5, 9}, {16, 16, 16}, {33, 17, 129}, {64, 128, 96}};
    for (const auto& s : shapes) {
        const std::size_t m = s[0], kk = s[1], n = s[2];
        auto A = random_vec(rng, m * kk, -3.0, 3.0);
        auto B = random_vec(rng, kk * n, -3.0, 3.0);
        std::vector<double> Cs(m * n), Cp(m * n);
        k::matmul_serial(A.data(), B.data(), Cs.data(), m, kk, n);
        k::matmul_parallel(A.data(), B.data(), Cp.data(), m, kk, n);
        CHECK(bits_equal(Cs, Cp));
    }
    for (std::size_t n : {1u, 17u, 1000u, 4097u}) {
        auto a = random_vec(rng, n, -5.0, 5.0);
        auto b = random_vec(rng, n, -5.0, 5.0);
        std::vector<double> os(n), op(n);
        k::add_serial(a.data(), b.data(), os.data(), n);
        k::add_parallel(a.data(), b.data(), op.data(), n);
        CHECK(bits_equal(os, op));
        k::mul_serial(a.data(), b.data(), os.data(), n);
        k::mul_parallel(a.data(), b.data(), op.data(), n);
        CHECK(bits_equal(os, op));
        k::scale_serial(a.data(), 1.7, os.data(), n);
        k::scale_parallel(a.data(), 1.7, op.data(), n);
        CHECK(bits_equal(os, op));
        k::gelu_serial(a.data(), os.data(), n);
        k::gelu_parallel(a.data(), op.data(), n);
        CHECK(bits_equal(os, op));
        k::gelu_grad_serial(a.data(), os.data(), n);
        k::gelu_grad_parallel(a.data(), op.data(), n);
        CHECK(bits_equal(os, op));
    }
}

TEST_CASE("kernels: backend dispatch is bit-identical too") {
    Rng rng(31);
    const std::size_t m = 13, kk = 29, n = 11;
    auto A = random_vec(rng, m * kk);
    auto B = random_vec(rng, kk * n);
    std::vector<double> C1(m * n), C2(m * n);
    const k::Backend before = k::backend();
    k::set_backend(k::Backend::serial);
    k::matmul(A.data(), B.data(), C1.data(), m, kk, n);
    k::set_backend(k::Backend::parallel);
    k::matmul(A.data(), B.data(), C2.data(), m, kk, n);
    k::set_backend(before);
    CHECK(bits_equal(C1, C2));
}

TEST_CASE("kernels: gelu known values") {
    double x[3] = {0.0, 1.0, -1.0};
    double y[3];
    k::gelu_serial(x, y, 3);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == doctest::Approx(0.8413447460685429).epsilon(1e-12));
    CHECK(y[2] == doctest::Approx(-0.15865525393145705).epsilon(1e-12));
}

TEST_CASE("kernels: gelu_grad matches finite differences") {
    Rng rng(41);
    const double h = 1e-6;
    for (int i = 0; i < 50; ++i) {
        const double x = rng.uniform(-4.0, 4.0);
        double g, yp, ym;
        double xin = x;
        k::gelu_grad_serial(&xin, &g, 1);
        xin = x + h;
        k::gelu_serial(&xin, &yp, 1);
        xin = x - h;
        k::gelu_serial(&xin, &ym, 1);
        const double fd = (yp - ym) / (2.0 * h);
        CHECK(g == doctest::Approx(fd).epsilon(1e-6));
    }
}
