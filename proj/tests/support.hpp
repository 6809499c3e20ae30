#pragma once

// Small seeded case generators for the property tests. Each property runs
// a fixed number of cases from a fixed seed so failures reproduce exactly.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace qhd_test {

class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    // log-uniform, for scale factors spanning decades
    double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    double normal(double mean = 0.0, double sd = 1.0) { return std::normal_distribution<double>(mean, sd)(rng_); }

    std::vector<float> normals(std::size_t n, double mean = 0.0, double sd = 1.0) {
        std::normal_distribution<double> d(mean, sd);
        std::vector<float> out(n);
        for (auto& v : out) v = static_cast<float>(d(rng_));
        return out;
    }

    // Equal mixture of N(+mu, sd^2) and N(-mu, sd^2).
    std::vector<float> bpsk(std::size_t n, double mu, double sd) {
        std::normal_distribution<double> d(0.0, sd);
        std::bernoulli_distribution coin(0.5);
        std::vector<float> out(n);
        for (auto& v : out) v = static_cast<float>((coin(rng_) ? mu : -mu) + d(rng_));
        return out;
    }

    std::mt19937_64& engine() { return rng_; }

private:
    std::mt19937_64 rng_;
};

inline constexpr int property_cases = 200;

} // namespace qhd_test
