#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "ctxdiff/vec.hpp"

namespace ctxdiff {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Deterministic RNG used everywhere. The mt19937_64 bit stream is fixed by the
// standard; uniforms and normals are constructed explicitly (no
// std::*_distribution) so that draw sequences are stable across compilers.
// normal() always consumes exactly two uniforms (Box-Muller, no cached spare),
// which keeps draw counts predictable for stream-sharing tests.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // (0, 1]
    double uniform_open() { return (static_cast<double>(gen_() >> 11) + 1.0) * 0x1.0p-53; }

    double normal() {
        const double u1 = uniform_open();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    Vec normal_vec(std::size_t n) {
        Vec out(n);
        for (auto& v : out) v = normal();
        return out;
    }

    // Uniform integer in [lo, hi], inclusive. Rejection-free modulo bias is
    // negligible for the small ranges used here, but use rejection anyway.
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
        const std::uint64_t span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t x;
        do {
            x = gen_();
        } while (x >= limit);
        return lo + static_cast<int>(x % span);
    }

    // Child stream with a seed derived from (base seed, stream index).
    static Rng stream(std::uint64_t root_seed, std::uint64_t stream_index) {
        return Rng(splitmix64(root_seed ^ splitmix64(stream_index + 1)));
    }

    std::string state_string() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void restore_state(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
        if (!is) throw std::runtime_error("Rng::restore_state: malformed state string");
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace ctxdiff
