#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace ssah {

// Deterministic random stream. All randomness in the library flows from one
// master seed; component streams are derived by hashing a fixed label into the
// seed so that adding a consumer never perturbs another consumer's draws.
class Rng {
public:
    Rng() = default;
    explicit Rng(std::uint64_t seed) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        std::uint64_t s = seed;
        for (auto& w : state_) w = splitmix(s);
    }

    // A child stream keyed by a label and an optional counter (e.g. epoch).
    [[nodiscard]] Rng derive(std::string_view label, std::uint64_t counter = 0) const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (char c : label) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        std::uint64_t mix = state_[0] ^ rotl(state_[1], 17) ^ h ^ (counter * 0x9e3779b97f4a7c15ULL);
        return Rng(splitmix(mix));
    }

    std::uint64_t next_u64() {
        // xoshiro256**
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool coin() { return (next_u64() >> 63) != 0; }

    template <typename It>
    void shuffle(It first, It last) {
        const auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            const auto j = below(i);
            std::swap(first[i - 1], first[j]);
        }
    }

    // Raw state, for checkpointing.
    struct State {
        std::uint64_t words[4];
        bool has_spare;
        double spare;
    };
    [[nodiscard]] State state() const {
        return {{state_[0], state_[1], state_[2], state_[3]}, has_spare_, spare_};
    }
    void set_state(const State& s) {
        for (int i = 0; i < 4; ++i) state_[i] = s.words[i];
        has_spare_ = s.has_spare;
        spare_ = s.spare;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    static std::uint64_t splitmix(std::uint64_t& x) {
        std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_[4] = {1, 2, 3, 4};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ssah
