#pragma once

#include <cstdint>
#include <random>
#include <string_view>

// Reproducible randomness. Substream seeds are derived by a counter-based
// mix keyed on (master seed, path index, stream name); adding a new stream
// name never perturbs draws of existing streams, and each (path, stream)
// pair owns an independent engine so paths can be sampled in parallel.

namespace tcv::rng {

struct EnsembleHandle {
    std::size_t n_paths = 0;
    std::uint64_t seed = 0;
};

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

constexpr std::uint64_t substream_seed(std::uint64_t master, std::size_t path,
                                       std::string_view stream) {
    std::uint64_t k = splitmix64(master ^ fnv1a(stream));
    return splitmix64(k + 0x632be59bd9b4e019ULL * (static_cast<std::uint64_t>(path) + 1));
}

class Substream {
public:
    Substream(const EnsembleHandle& ens, std::size_t path, std::string_view stream)
        : eng_(substream_seed(ens.seed, path, stream)) {}

    double gaussian() { return normal_(eng_); }

    double uniform01() { return uni_(eng_); }

    // Poisson count; mean 0 short-circuits so zero-compensator cells draw nothing.
    long poisson(double mean) {
        if (mean <= 0.0) return 0;
        std::poisson_distribution<long> d(mean);
        return d(eng_);
    }

    std::mt19937_64& engine() { return eng_; }

private:
    std::mt19937_64 eng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uni_{0.0, 1.0};
};

} // namespace tcv::rng
