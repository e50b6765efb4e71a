#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace multimix {

// Deterministic counter-free PRNG (splitmix64). All stochastic behaviour in the
// engine derives from one of these, seeded by hashing (run seed, purpose tag,
// step/epoch, sample index). That makes every sample's randomness independent of
// evaluation order, which is what allows parallel data prep and exact resume.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // uniform integer in [lo, hi] inclusive (Lemire multiply-shift, no rejection)
    int64_t uniform_int(int64_t lo, int64_t hi) {
        const uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
        const auto wide = static_cast<unsigned __int128>(next_u64()) * range;
        return lo + static_cast<int64_t>(static_cast<uint64_t>(wide >> 64));
    }

    bool bernoulli(double p) { return next_double() < p; }

    // Box-Muller without spare caching so the draw count per call is fixed.
    double normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

  private:
    uint64_t state_;
};

inline uint64_t hash_mix(uint64_t a, uint64_t b) {
    uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// FNV-1a, used to give named RNG streams (parameter names, pass tags) stable seeds.
inline uint64_t hash_str(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

template <typename T>
void fisher_yates_shuffle(std::vector<T>& v, Rng& rng) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
        const int64_t j = rng.uniform_int(0, i);
        std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
}

}  // namespace multimix
