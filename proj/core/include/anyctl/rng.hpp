#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace anyctl {

// Counter-based splittable RNG. A stream is identified by a 64-bit key derived
// from (seed, label path); outputs are a pure function of (key, counter), so
// identical (seed, label, counter) always reproduces the same draw, and
// streams split for different labels are independent of each other's
// consumption. No libc/std distributions are involved, which keeps every draw
// bit-stable across platforms.
class SeededRng {
  public:
    SeededRng() : SeededRng(0) {}
    explicit SeededRng(uint64_t seed) : key_(mix(seed ^ kSeedTag)) {}

    // Derive an independent stream; the child starts at counter 0.
    SeededRng split(std::string_view label) const {
        uint64_t h = key_ ^ kSplitTag;
        for (unsigned char c : label) {
            h = mix(h ^ static_cast<uint64_t>(c));
        }
        return SeededRng(h, 0);
    }

    SeededRng split(uint64_t index) const {
        return SeededRng(mix(key_ ^ kIndexTag ^ mix(index)), 0);
    }

    uint64_t next_u64() { return mix(key_ ^ mix(counter_++ + kCounterTag)); }

    // Uniform in [0, 1), 53-bit resolution.
    double next_uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double next_uniform(double lo, double hi) {
        return lo + (hi - lo) * next_uniform();
    }

    // Integer in [0, n), n >= 1.
    uint64_t next_below(uint64_t n) {
        // 64-bit multiply-shift; bias is negligible for the small n used here.
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

    bool next_bernoulli(double p) { return next_uniform() < p; }

    // Box-Muller; consumes two uniforms per pair, caches the second draw.
    double next_gaussian() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u1 = next_uniform();
        double u2 = next_uniform();
        // Guard log(0).
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    uint64_t key() const { return key_; }
    uint64_t counter() const { return counter_; }

  private:
    SeededRng(uint64_t key, uint64_t counter) : key_(key), counter_(counter) {}

    // splitmix64 finalizer.
    static uint64_t mix(uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    static constexpr uint64_t kSeedTag = 0x243f6a8885a308d3ULL;
    static constexpr uint64_t kSplitTag = 0x13198a2e03707344ULL;
    static constexpr uint64_t kIndexTag = 0xa4093822299f31d0ULL;
    static constexpr uint64_t kCounterTag = 0x082efa98ec4e6c89ULL;

    uint64_t key_;
    uint64_t counter_ = 0;
    double cached_ = 0.0;
    bool have_cached_ = false;
};

}  // namespace anyctl
