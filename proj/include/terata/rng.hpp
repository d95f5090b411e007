#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace terata {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Seed for task `index` of stream `stream` under a master seed. A pure
// function of its arguments, so parallel replicates get the same seed no
// matter how many workers run or in which order tasks are picked up.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
    std::uint64_t s = master;
    splitmix64(s);
    s += 0x9e3779b97f4a7c15ULL * (stream + 1);
    splitmix64(s);
    s += 0xd1b54a32d192ed03ULL * (index + 1);
    return splitmix64(s);
}

using Rng = std::mt19937_64;

// Unbiased integer in [0, n). Rejection on the raw 64-bit stream instead of
// std::uniform_int_distribution, whose mapping is implementation defined.
inline std::size_t bounded_index(Rng& gen, std::size_t n) {
    const std::uint64_t nn = n;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % nn;
    std::uint64_t v;
    do {
        v = gen();
    } while (v >= limit);
    return static_cast<std::size_t>(v % nn);
}

// Uniform on (0, 1]; never exactly 0 so log() is safe.
inline double runif(Rng& gen) {
    return ((gen() >> 11) + 1.0) * 0x1.0p-53;
}

inline double rexp(Rng& gen) { return -std::log(runif(gen)); }

inline double rnorm(Rng& gen) {
    double u = runif(gen);
    double v = runif(gen);
    return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586 * v);
}

inline double rnorm(Rng& gen, double mean, double sd) { return mean + sd * rnorm(gen); }

inline bool rbernoulli(Rng& gen, double p) { return runif(gen) <= p; }

// Crude but adequate for covariate generation: mean of scaled gammas.
inline double rbeta(Rng& gen, double a, double b) {
    auto rgamma = [&](double shape) {
        // Marsaglia-Tsang for shape >= 1, boost trick below 1
        double boost = 1.0;
        if (shape < 1.0) {
            boost = std::pow(runif(gen), 1.0 / shape);
            shape += 1.0;
        }
        double d = shape - 1.0 / 3.0;
        double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = rnorm(gen);
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            double u = runif(gen);
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return boost * d * v;
        }
    };
    double x = rgamma(a);
    double y = rgamma(b);
    return x / (x + y);
}

}  // namespace terata
