#pragma once

#include <cstdint>
#include <cstring>
#include <string_view>
#include <vector>

namespace sortlab {

// Named, seeded random streams. Every consumer derives its own stream from
// (master_seed, label, indices...), so draws are independent of evaluation
// order and worker count. xoshiro256++ seeded through splitmix64; all
// sampling helpers are hand-rolled so sequences are identical across
// standard libraries and platforms.
class RngStream {
public:
    explicit RngStream(uint64_t seed) { init(seed); }

    template <typename... Parts>
    RngStream(uint64_t master_seed, std::string_view label, Parts... parts) {
        uint64_t h = fnv1a(master_seed, label);
        ((h = mix(h, static_cast<uint64_t>(parts))), ...);
        init(h);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, bound), unbiased via rejection.
    uint64_t next_below(uint64_t bound) {
        const uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    int next_int(int lo, int hi) {  // inclusive range
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Uniform in [0, 1) with 53 bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Draws an index from unnormalized non-negative weights by CDF walk.
    int next_categorical(const std::vector<double>& weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        double u = next_double() * total;
        double acc = 0.0;
        for (size_t i = 0; i + 1 < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(weights.size()) - 1;
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static uint64_t fnv1a(uint64_t seed, std::string_view label) {
        uint64_t h = 0xcbf29ce484222325ull ^ seed;
        for (char c : label) {
            h ^= static_cast<uint8_t>(c);
            h *= 0x100000001b3ull;
        }
        return h;
    }

    static uint64_t mix(uint64_t h, uint64_t v) {
        h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
        uint64_t x = h;
        return splitmix64(x);
    }

    void init(uint64_t seed) {
        for (auto& s : s_) s = splitmix64(seed);
    }

    uint64_t s_[4];
};

}  // namespace sortlab
