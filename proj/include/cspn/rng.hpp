#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace cspn {

/** Portable deterministic random generator.
 *
 * Wherever this library promises seed-reproducibility, the byte-level contract
 * is this generator, not the platform's std facilities:
 *
 *   - state: xoshiro256** (Blackman/Vigna), seeded by four successive outputs
 *     of SplitMix64 started at the seed value;
 *   - substreams: stream(seed, a, b) seeds from
 *     splitmix64(splitmix64(seed + GAMMA*(a+1)) + GAMMA*(b+1)), GAMMA = 0x9E3779B97F4A7C15;
 *   - uniform doubles: (next() >> 11) * 2^-53, in [0, 1);
 *   - normals: Box-Muller on two uniforms (first draw mapped to (0, 1]);
 *   - bounded integers: rejection sampling on the smallest covering bit mask;
 *   - permutations: Fisher-Yates driven by bounded integers, descending index.
 *
 * Every derived draw below is defined in terms of these primitives only, so the
 * same seed yields the same sequence on any platform.
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
    }

    static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
        constexpr std::uint64_t gamma = 0x9E3779B97F4A7C15ULL;
        std::uint64_t h = seed + gamma * (a + 1);
        h = splitmix_mix(h);
        h += gamma * (b + 1);
        return Rng(splitmix_mix(h));
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform double in (0, 1].
    double uniform_pos() { return 1.0 - uniform(); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; one spare value is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform_pos();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Uniform integer in [0, bound); rejection on a bit mask.
    std::uint64_t uniform_below(std::uint64_t bound) {
        if (bound <= 1) return 0;
        std::uint64_t mask = bound - 1;
        mask |= mask >> 1;
        mask |= mask >> 2;
        mask |= mask >> 4;
        mask |= mask >> 8;
        mask |= mask >> 16;
        mask |= mask >> 32;
        std::uint64_t v;
        do {
            v = next_u64() & mask;
        } while (v >= bound);
        return v;
    }

    /// Poisson draw by inversion of exponential arrivals; O(mean) per draw.
    long poisson(double mean) {
        if (mean <= 0.0) return 0;
        long k = 0;
        double acc = 0.0;
        while (true) {
            acc += -std::log(uniform_pos());
            if (acc >= mean) break;
            ++k;
        }
        return k;
    }

    /// Index draw from nonnegative weights (need not be normalized).
    int categorical(const double* weights, int count) {
        double total = 0.0;
        for (int i = 0; i < count; ++i) total += weights[i];
        double u = uniform() * total;
        for (int i = 0; i < count; ++i) {
            u -= weights[i];
            if (u < 0.0) return i;
        }
        return count - 1;
    }

    /// Fisher-Yates permutation of 0..n-1.
    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        std::iota(p.begin(), p.end(), 0);
        for (int i = n - 1; i > 0; --i) {
            const int j = static_cast<int>(uniform_below(static_cast<std::uint64_t>(i) + 1));
            std::swap(p[i], p[j]);
        }
        return p;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static std::uint64_t splitmix_mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9E3779B97F4A7C15ULL;
        return splitmix_mix(x);
    }

    std::uint64_t state_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace cspn
