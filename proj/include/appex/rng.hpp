#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace appex {

/// splitmix64 step; used to spread user seeds over the full 64-bit space.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derives an independent substream seed from (seed, stream). Substreams
/// with distinct stream tags are what make parallel simulation
/// scheduling-invariant.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed;
    std::uint64_t a = splitmix64(s);
    s ^= stream * 0xda942042e4dd58b5ULL;
    std::uint64_t b = splitmix64(s);
    return a ^ (b + 0x9e3779b97f4a7c15ULL);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(bootstrap(seed)) {}

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }

    double normal() { return normal_(engine_); }

    /// Uniform integer in [lo, hi], inclusive.
    long uniform_int(long lo, long hi) {
        return std::uniform_int_distribution<long>(lo, hi)(engine_);
    }

    bool coin() { return uniform_int(0, 1) == 1; }

    /// Index draw from an (unnormalized, nonnegative) weight vector.
    Eigen::Index categorical(const Eigen::VectorXd& weights) {
        const double total = weights.sum();
        double u = uniform(0.0, 1.0) * total;
        for (Eigen::Index i = 0; i < weights.size(); ++i) {
            u -= weights[i];
            if (u <= 0.0) return i;
        }
        return weights.size() - 1;
    }

    std::mt19937_64& engine() { return engine_; }

  private:
    static std::mt19937_64 bootstrap(std::uint64_t seed) {
        std::uint64_t s = seed;
        (void)splitmix64(s);
        return std::mt19937_64(splitmix64(s));
    }

    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace appex
