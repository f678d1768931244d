#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace tightci {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Derives the seed of an independent stream from a root seed and a path of
/// 64-bit keys (cell index, replication index, purpose tag, ...):
///   s0 = splitmix64(root), s_{k+1} = splitmix64(s_k ^ key_k).
/// The result depends only on (root, keys), never on thread scheduling.
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> keys) noexcept;

/// A seeded random stream. The engine (mt19937_64) is fully specified by the
/// standard; the distributions below are written out here because the
/// standard library's distributions are implementation-defined.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [0, bound), bound > 0. Lemire's multiply-shift with
    /// rejection, so the result is exactly uniform.
    std::uint64_t below(std::uint64_t bound);

    bool bernoulli(double p) { return uniform01() < p; }

    /// Fisher-Yates, descending: for i = n-1..1 swap(v[i], v[below(i+1)]).
    template <typename T>
    void shuffle(std::span<T> v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
};

}  // namespace tightci
