#ifndef LDREG_RNG_HPP
#define LDREG_RNG_HPP

#include <cmath>
#include <cstdint>
#include <vector>

namespace ldreg {

// SplitMix64 generator. Hand-rolled so that streams are reproducible across
// compilers and standard libraries; every random quantity in the toolkit is a
// pure function of a seed routed through this type.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    float uniform(float lo, float hi) {
        return lo + static_cast<float>(next_double()) * (hi - lo);
    }

    // Standard normal via Box-Muller; second draw cached.
    float normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0)
            u1 = next_double();
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        cached_ = static_cast<float>(r * std::sin(a));
        have_cached_ = true;
        return static_cast<float>(r * std::cos(a));
    }

    // Unbiased integer in [0,n) by rejection.
    uint64_t below(uint64_t n) {
        const uint64_t limit = ~0ull - (~0ull % n);
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Fisher-Yates shuffle, back to front.
    template <typename T> void shuffle(std::vector<T> &v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derive an independent stream (e.g. per epoch or per parameter key).
    static uint64_t mix(uint64_t seed, uint64_t salt) {
        Rng r(seed ^ (0x2545f4914f6cdd1dull * (salt + 1)));
        return r.next_u64();
    }

  private:
    uint64_t state_;
    float cached_ = 0.0f;
    bool have_cached_ = false;
};

} // namespace ldreg

#endif
