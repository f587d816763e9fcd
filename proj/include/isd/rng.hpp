#pragma once

#include <cstdint>
#include <vector>

// Deterministic, platform-independent randomness. Every consumer derives its
// own substream from (root seed, purpose tag, counter), so replaying a run
// never depends on global generator state.

namespace isd::rng {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Mixes (seed, tag, index) into a single well-scrambled 64-bit seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64(s);
    s ^= tag * 0xd1342543de82ef95ULL;
    h ^= splitmix64(s);
    s ^= index * 0xaf251af3b0f025b5ULL;
    h ^= splitmix64(s);
    return h;
}

// Substream tags. Fixed values: they are part of the reproducibility contract.
enum Tag : std::uint64_t {
    kTagInit = 1,
    kTagShuffle = 2,
    kTagAugment = 3,
    kTagIntensityMask = 4,
    kTagSpatialMask = 5,
    kTagPhantom = 6,
    kTagSplit = 7,
    kTagTest = 99,
};

class Xoshiro256 {
public:
    explicit Xoshiro256(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1), 53-bit resolution.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Unbiased integer in [0, n). n must be > 0.
    std::uint64_t next_below(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    bool bernoulli(double p) { return next_double() < p; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    std::uint64_t s_[4];
};

inline Xoshiro256 substream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index = 0) {
    return Xoshiro256(derive_seed(seed, tag, index));
}

// First k of a Fisher-Yates shuffle: k distinct values from [0, n), uniform
// without replacement, order random.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Xoshiro256& g) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    if (k > n) k = n;
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i + static_cast<std::size_t>(g.next_below(n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

inline void shuffle(std::vector<std::size_t>& v, Xoshiro256& g) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(g.next_below(i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace isd::rng
