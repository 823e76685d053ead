#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace omac {

// splitmix64 step; also used to mix tag hashes into stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic random stream. The engine is std::mt19937_64 (bit-exact per
// the standard); all value mappings are done here rather than with
// std::*_distribution so that streams are pinned across platforms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

    // Independent child stream; does not consume parent state.
    Rng derive(std::string_view tag) const {
        return Rng(splitmix64(seed_ ^ fnv1a(tag)));
    }
    Rng derive(std::string_view tag, std::uint64_t index) const {
        return Rng(splitmix64(splitmix64(seed_ ^ fnv1a(tag)) + index));
    }

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal, Box-Muller (trig form, no rejection).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform01();
        double u2 = uniform01();
        // keep u1 away from 0 so log() is finite
        u1 = u1 < 1e-300 ? 1e-300 : u1;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    Eigen::VectorXd normal_vector(int dim, double stddev = 1.0) {
        Eigen::VectorXd v(dim);
        for (int k = 0; k < dim; ++k) v(k) = stddev * normal();
        return v;
    }

    Eigen::VectorXd uniform_vector(int dim, double lo, double hi) {
        Eigen::VectorXd v(dim);
        for (int k = 0; k < dim; ++k) v(k) = uniform(lo, hi);
        return v;
    }

    // Uniform on the unit sphere S^{dim-1}.
    Eigen::VectorXd unit_sphere(int dim) {
        Eigen::VectorXd v = normal_vector(dim);
        double n = v.norm();
        while (n < 1e-12) {
            v = normal_vector(dim);
            n = v.norm();
        }
        return v / n;
    }

    // Uniform (by volume) in the ball of given radius.
    Eigen::VectorXd uniform_in_ball(int dim, double radius) {
        const double r = radius * std::pow(uniform01(), 1.0 / dim);
        return r * unit_sphere(dim);
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace omac
