#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace camp {

// Every random stream in the project is derived from one user seed plus a
// stream tag, so no two consumers share state and nothing reads entropy.
std::uint64_t splitmix64(std::uint64_t x) noexcept;
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) noexcept;
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index) noexcept;

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    Rng split(std::string_view tag) const { return Rng(derive_seed(seed_, tag)); }
    Rng split(std::string_view tag, std::uint64_t index) const {
        return Rng(derive_seed(seed_, tag, index));
    }

    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    double normal(double mean = 0.0, double stddev = 1.0) {
        return std::normal_distribution<double>(mean, stddev)(engine_);
    }
    // Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }
    bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }

    std::mt19937_64& engine() { return engine_; }
    std::uint64_t seed() const { return seed_; }

    // Text form of the full engine state, for checkpoints.
    std::string state() const;
    void restore(const std::string& state);

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
};

}  // namespace camp
