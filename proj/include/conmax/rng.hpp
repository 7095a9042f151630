#pragma once
// Deterministic RNG used everywhere. xoshiro256** seeded via splitmix64,
// so the same (seed, stream) always yields the same draws on any platform.
// std::mt19937 + distributions are avoided on purpose: libstdc++ does not
// promise cross-version stability for distribution output, and run artifacts
// must be byte-reproducible.

#include <cmath>
#include <cstdint>
#include <vector>

namespace conmax {

inline uint64_t splitmix64(uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Hash a seed with stream tags to derive independent substreams
// (per sample, per candidate, per step...). Order-sensitive.
inline uint64_t mix_seed(uint64_t seed) { return seed; }

template <class... Rest>
inline uint64_t mix_seed(uint64_t seed, uint64_t tag, Rest... rest) {
    uint64_t s = seed ^ (tag + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2));
    uint64_t st = s;
    return mix_seed(splitmix64(st), rest...);
}

class Rng {
  public:
    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    uint64_t next_u64() {
        uint64_t result = rotl(s_[1] * 5, 7) * 9;
        uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return (double)(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n), n > 0
    uint64_t below(uint64_t n) {
        // Lemire's method with rejection; unbiased
        uint64_t x = next_u64();
        __uint128_t m = (__uint128_t)x * n;
        uint64_t l = (uint64_t)m;
        if (l < n) {
            uint64_t t = (0 - n) % n;
            while (l < t) {
                x = next_u64();
                m = (__uint128_t)x * n;
                l = (uint64_t)m;
            }
        }
        return (uint64_t)(m >> 64);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // standard normal, Box-Muller (no cached spare, keeps streams simple)
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // index drawn from unnormalized nonnegative weights
    size_t categorical(const std::vector<double>& w) {
        double total = 0.0;
        for (double x : w) total += x;
        double u = uniform() * total;
        double acc = 0.0;
        for (size_t i = 0; i + 1 < w.size(); i++) {
            acc += w[i];
            if (u < acc) return i;
        }
        return w.empty() ? 0 : w.size() - 1;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; i--) {
            size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4];
};

}  // namespace conmax
