#pragma once

#include <cmath>
#include <cstdint>

namespace sll {

// Deterministic splittable generator built on the splitmix64 permutation.
// The same seed yields the same stream everywhere, and child streams are
// derived by hashing (state, tag) so independent pipeline stages never share
// or consume each other's randomness.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [0, n) without modulo bias (Lemire reduction).
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Standard normal via the polar method; only sqrt/log touch libm.
    double next_gaussian() {
        for (;;) {
            const double u = 2.0 * next_double() - 1.0;
            const double v = 2.0 * next_double() - 1.0;
            const double s = u * u + v * v;
            if (s > 0.0 && s < 1.0) {
                return u * std::sqrt(-2.0 * std::log(s) / s);
            }
        }
    }

    // Independent stream keyed by (current state, tag). Does not advance *this,
    // so the same tag always maps to the same child for a given parent state.
    [[nodiscard]] Rng child(std::uint64_t tag) const {
        return Rng(mix(state_ + 0x9e3779b97f4a7c15ULL * (tag + 1)));
    }

    // Independent stream that consumes one draw from the parent.
    [[nodiscard]] Rng split() {
        return Rng(mix(next_u64() ^ 0xa0761d6478bd642fULL));
    }

    std::uint64_t state() const { return state_; }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

} // namespace sll
