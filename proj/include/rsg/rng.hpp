#pragma once

#include <cmath>
#include <cstdint>

namespace rsg {

// splitmix64: seed mixing / derivation. Bit-stable across platforms, unlike
// the distributions in <random>.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Derive an independent stream seed from (seed, tag...) tuples.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag) {
    uint64_t s = seed ^ (0x9E3779B97F4A7C15ull + (tag << 1));
    splitmix64(s);
    return splitmix64(s);
}

inline uint64_t hash_str(const char* s) {
    // FNV-1a; used to give each named parameter its own init stream.
    uint64_t h = 0xcbf29ce484222325ull;
    for (; *s; ++s) h = (h ^ static_cast<unsigned char>(*s)) * 0x100000001b3ull;
    return h;
}

// Deterministic generator with explicit uniform/normal, no libstdc++
// distribution dependence.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {
        // decorrelate trivially close seeds
        splitmix64(state_);
    }

    uint64_t next_u64() { return splitmix64(state_); }

    // in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // in [lo, hi] inclusive
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(next_u64() % static_cast<uint64_t>(hi - lo + 1));
    }

    // Box-Muller, two uniforms per draw (no cached spare: keeps replay trivial)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename It>
    void shuffle(It first, It last) {
        auto n = last - first;
        for (auto i = n - 1; i > 0; --i) {
            auto j = static_cast<decltype(i)>(next_u64() % static_cast<uint64_t>(i + 1));
            std::swap(first[i], first[j]);
        }
    }

private:
    uint64_t state_;
};

}  // namespace rsg
