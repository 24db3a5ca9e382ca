// SPDX-License-Identifier: Apache-2.0
#pragma once

// Deterministic RNG. std:: distributions are implementation-defined, so all
// sampling (uniform, normal, integer) is hand-rolled on top of xoshiro256++
// to keep artifacts byte-identical across toolchains.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string>

#include "latentplan/common.hpp"

namespace latentplan {

// splitmix64; also serves as the general 64-bit mixer for seed derivation.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Independent named stream: every consumer derives its own seed from the run
// seed plus a label plus integer ids.  Adding a consumer never shifts the
// draws of existing ones.
inline std::uint64_t derive_seed(std::uint64_t base, const std::string& label,
                                 std::initializer_list<std::uint64_t> ids = {}) {
    std::uint64_t h = mix64(base ^ 0x5851f42d4c957f2dull);
    h = mix64(h ^ fnv1a64(label));
    for (std::uint64_t id : ids) h = mix64(h ^ mix64(id + 0x9e3779b97f4a7c15ull));
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& w : s_) {
            x = mix64(x);
            w = x;
        }
        has_spare_ = false;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0,1): 53-bit mantissa
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased integer in [0, n) via rejection
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw ContractError("Rng::below: n must be positive");
        const std::uint64_t lim = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= lim) v = next_u64();
        return v % n;
    }

    // standard normal via Box-Muller (deterministic, pairs cached)
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t s_[4];
    double spare_ = 0.0;
    bool has_spare_;
};

} // namespace latentplan
