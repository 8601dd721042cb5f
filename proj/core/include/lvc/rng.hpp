#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace lvc {

// splitmix64 step. Used everywhere a deterministic u64 stream is needed so
// results do not depend on the platform's <random> implementation.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Stateless mix of a base seed and a stream id; derived streams are
// independent of how many sibling streams exist.
inline uint64_t mix_seed(uint64_t base, uint64_t stream) {
    uint64_t s = base ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    return splitmix64(s);
}

inline uint64_t hash_str(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

    // Box-Muller; one value per call keeps the stream layout simple.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Normal truncated to +/- 2 sigma, the usual transformer init.
    double trunc_normal(double stddev) {
        for (;;) {
            double x = normal();
            if (std::fabs(x) <= 2.0) return x * stddev;
        }
    }

  private:
    uint64_t state_;
};

}  // namespace lvc
