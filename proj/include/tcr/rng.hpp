#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace tcr {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent stream seed from a master seed and up to three
// coordinates (e.g. individual, variable, timestep). Streams with distinct
// coordinates are independent, so evaluation order never matters.
inline std::uint64_t mix_seed(std::uint64_t master, std::uint64_t a = 0,
                              std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t h = splitmix64(master ^ 0x6a09e667f3bcc909ULL);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    h = splitmix64(h ^ c);
    return h;
}

// xoshiro256++ with splitmix64 seeding. Cheap to construct, fully
// deterministic across platforms (unlike <random> distributions).
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed) {
        for (auto& word : state_) {
            seed = splitmix64(seed);
            word = seed;
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1], for logs.
    double uniform_pos() { return 1.0 - uniform(); }

    double normal(double mean = 0.0, double stddev = 1.0) {
        const double u1 = uniform_pos();
        const double u2 = uniform();
        const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
        return mean + stddev * z;
    }

    bool bernoulli(double p) { return uniform() < p; }

    long poisson(double rate) {
        if (rate <= 0.0) throw std::invalid_argument("poisson rate must be > 0");
        if (rate > 64.0) {
            // Normal approximation keeps the Knuth loop bounded.
            const double v = std::round(normal(rate, std::sqrt(rate)));
            return v < 0.0 ? 0 : static_cast<long>(v);
        }
        const double limit = std::exp(-rate);
        long k = 0;
        double prod = 1.0;
        do {
            ++k;
            prod *= uniform_pos();
        } while (prod > limit);
        return k - 1;
    }

    // Marsaglia-Tsang; shape > 0, scale > 0.
    double gamma(double shape, double scale) {
        if (shape <= 0.0 || scale <= 0.0) throw std::invalid_argument("gamma parameters must be > 0");
        if (shape < 1.0) {
            const double u = uniform_pos();
            return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x = normal();
            double v = 1.0 + c * x;
            if (v <= 0.0) continue;
            v = v * v * v;
            const double u = uniform_pos();
            if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) {
                return d * v * scale;
            }
        }
    }

    std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

    // Uniform direction on the unit l2 sphere in R^d.
    std::vector<double> on_sphere(std::size_t d) {
        std::vector<double> v(d);
        for (;;) {
            double norm_sq = 0.0;
            for (auto& x : v) {
                x = normal();
                norm_sq += x * x;
            }
            if (norm_sq > 1e-30) {
                const double inv = 1.0 / std::sqrt(norm_sq);
                for (auto& x : v) x *= inv;
                return v;
            }
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4];
};

}  // namespace tcr
