#pragma once

#include <cmath>
#include <cstdint>

namespace augicl {

namespace detail {

// splitmix64 finalizer; full-period mixer, standard constants.
inline uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace detail

// Counter-based splittable generator. substream() derives an independent
// stream from (state, key) without advancing the parent, which is what makes
// instance/sample draws reproducible regardless of how many other draws
// happened: stream(master, instance, sample_slot) always yields the same
// values. All distributions below are implemented here rather than via
// <random> so sequences are bit-identical across standard libraries.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(detail::mix64(seed ^ 0x5851f42d4c957f2dULL)) {}

    Rng substream(uint64_t key) const {
        Rng r;
        r.state_ = detail::mix64(state_ ^ detail::mix64(key + 0x9e3779b97f4a7c15ULL));
        return r;
    }
    Rng substream(uint64_t k1, uint64_t k2) const { return substream(k1).substream(k2); }
    Rng substream(uint64_t k1, uint64_t k2, uint64_t k3) const {
        return substream(k1).substream(k2).substream(k3);
    }

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform on [0, 1) with 53 random bits
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n) by rejection; exact, no modulo bias
    int uniform_int(int n) {
        const uint64_t bound = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return static_cast<int>(x % bound);
    }

    // standard normal via Marsaglia polar rejection (second value discarded so
    // each call consumes a self-contained draw sequence)
    double normal() {
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        return u * std::sqrt(-2.0 * std::log(s) / s);
    }

private:
    uint64_t state_ = 0;
};

} // namespace augicl
