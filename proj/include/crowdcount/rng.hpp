#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace crowdcount {

// All stochastic behaviour in the project flows through this generator so
// that results are bit-reproducible across standard libraries. Standard
// <random> distributions are implementation-defined and are deliberately
// not used.

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derives an independent stream seed from a base seed and up to two indices.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
    std::uint64_t s = base;
    s ^= 0x9e3779b97f4a7c15ull * (a + 0x632be59bd9b4e019ull);
    s ^= 0xc2b2ae3d27d4eb4full * (b + 0x9fb21c651e98df25ull);
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() { return splitmix64(state_); }

    // Uniform in [0, 1).
    double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Unbiased draw in [0, n).
    std::uint64_t bounded(std::uint64_t n) {
        const std::uint64_t threshold = (0 - n) % n;
        for (;;) {
            const std::uint64_t r = next();
            if (r >= threshold) return r % n;
        }
    }

    // Inclusive integer range.
    long long uniform_int(long long lo, long long hi) {
        if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
        return lo + static_cast<long long>(bounded(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    // Box-Muller without spare caching so the draw count per call is fixed.
    double normal(double mean = 0.0, double stddev = 1.0) {
        const double u1 = 1.0 - uniform01();  // (0, 1]
        const double u2 = uniform01();
        const double mag = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * mag * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(bounded(i));
            using std::swap;
            swap(v[i - 1], v[j]);
        }
    }

  private:
    std::uint64_t state_;
};

// Deterministic per-pixel hash in [0, 1), used by the scene renderer.
inline float hash01(std::uint64_t seed, std::int64_t x, std::int64_t y, std::int64_t k = 0) {
    std::uint64_t h = mix_seed(seed, static_cast<std::uint64_t>(x) * 0x100000001b3ull ^ static_cast<std::uint64_t>(k),
                               static_cast<std::uint64_t>(y));
    return static_cast<float>((h >> 40) * 0x1.0p-24);
}

}  // namespace crowdcount
