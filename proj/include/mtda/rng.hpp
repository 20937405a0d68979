#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace mtda {

// splitmix64; used to derive independent stream seeds from (seed, tags...).
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed) { return splitmix64(seed); }

template <typename... Rest>
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, Rest... rest) {
    return mix_seed(splitmix64(seed ^ (tag + 0x9e3779b97f4a7c15ULL)), rest...);
}

// Deterministic RNG wrapper. std::mt19937_64 output is pinned by the standard;
// the distribution mappings below are implemented here so that streams are
// bit-identical across standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Uniform integer in [0, n). n must be positive.
    int uniform_int(int n) { return static_cast<int>(uniform01() * static_cast<double>(n)); }

    // Inclusive integer range.
    int uniform_int_range(int lo, int hi) { return lo + uniform_int(hi - lo + 1); }

    // Standard normal via Box-Muller, caching the second deviate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (int i = static_cast<int>(items.size()) - 1; i > 0; --i) {
            const int j = uniform_int(i + 1);
            std::swap(items[static_cast<std::size_t>(i)], items[static_cast<std::size_t>(j)]);
        }
    }

  private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace mtda
