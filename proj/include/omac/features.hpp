#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "omac/rng.hpp"

namespace omac {

// Random Fourier feature map z(x) = sqrt(2/D) cos(Omega x + b) with
// Omega_ij ~ N(0, sigma^2) and b_j ~ U[0, 2pi), approximating the Gaussian
// kernel exp(-sigma^2 ||x - x'||^2 / 2). ||z(x)|| <= sqrt(2) for all x.
struct RffBasis {
    int input_dim = 0;
    int num_features = 0;
    Eigen::MatrixXd omega;  // D x input_dim
    Eigen::VectorXd phase;  // D
    double sigma = 1.0;
    std::uint64_t seed = 0;

    static RffBasis make(int input_dim, int num_features, double sigma, std::uint64_t seed) {
        if (input_dim < 0 || num_features < 0) throw std::invalid_argument("negative dimension");
        if (sigma <= 0.0) throw std::invalid_argument("bandwidth must be positive");
        RffBasis b;
        b.input_dim = input_dim;
        b.num_features = num_features;
        b.sigma = sigma;
        b.seed = seed;
        Rng rng(seed);
        b.omega.resize(num_features, input_dim);
        for (int r = 0; r < num_features; ++r)
            for (int c = 0; c < input_dim; ++c) b.omega(r, c) = rng.normal(0.0, sigma);
        b.phase.resize(num_features);
        for (int r = 0; r < num_features; ++r) b.phase(r) = rng.uniform(0.0, 2.0 * M_PI);
        return b;
    }

    Eigen::VectorXd eval(const Eigen::VectorXd& x) const {
        if (x.size() != input_dim) throw std::invalid_argument("feature input dimension mismatch");
        if (num_features == 0) return Eigen::VectorXd();
        const double scale = std::sqrt(2.0 / num_features);
        return (scale * ((omega * x + phase).array().cos())).matrix();
    }
};

enum class BasisLayout { BlockDiagonal, Shared };

// Matrix-valued basis Y : R^in -> R^{n x p} built from one RFF draw.
//
// BlockDiagonal: row j carries its own feature block (the j-th slice of the
// underlying features, re-normalized so each block is itself a unit RFF map);
// zeros elsewhere. Spectral norm = max block norm <= sqrt(2).
//
// Shared: every row is the full feature vector, ||Y|| <= sqrt(2 n).
struct MatrixBasis {
    RffBasis rff;
    int output_dim = 1;
    BasisLayout layout = BasisLayout::BlockDiagonal;

    static MatrixBasis block_diagonal(int input_dim, int output_dim, int features_per_row,
                                      double sigma, std::uint64_t seed) {
        MatrixBasis b;
        b.rff = RffBasis::make(input_dim, output_dim * features_per_row, sigma, seed);
        b.output_dim = output_dim;
        b.layout = BasisLayout::BlockDiagonal;
        return b;
    }

    static MatrixBasis shared(int input_dim, int output_dim, int num_features, double sigma,
                              std::uint64_t seed) {
        MatrixBasis b;
        b.rff = RffBasis::make(input_dim, num_features, sigma, seed);
        b.output_dim = output_dim;
        b.layout = BasisLayout::Shared;
        return b;
    }

    int rows() const { return output_dim; }

    int cols() const { return rff.num_features; }

    int block_size() const {
        if (layout != BasisLayout::BlockDiagonal) return rff.num_features;
        if (output_dim == 0 || rff.num_features % output_dim != 0)
            throw std::logic_error("feature count not divisible by output dimension");
        return rff.num_features / output_dim;
    }

    Eigen::MatrixXd eval(const Eigen::VectorXd& x) const {
        const Eigen::VectorXd z = rff.eval(x);
        Eigen::MatrixXd y = Eigen::MatrixXd::Zero(output_dim, rff.num_features);
        if (rff.num_features == 0) return y;
        if (layout == BasisLayout::Shared) {
            y = z.transpose().replicate(output_dim, 1);
            return y;
        }
        const int bs = block_size();
        // sqrt(output_dim) restores the per-block sqrt(2/bs) normalization
        const double block_scale = std::sqrt(static_cast<double>(output_dim));
        for (int j = 0; j < output_dim; ++j)
            y.block(j, j * bs, 1, bs) = block_scale * z.segment(j * bs, bs).transpose();
        return y;
    }

    // Certified upper bound on sup_x ||Y(x)|| (spectral norm).
    double bound_constant() const {
        if (rff.num_features == 0) return 0.0;
        if (layout == BasisLayout::BlockDiagonal) return std::sqrt(2.0);
        return std::sqrt(2.0 * output_dim);
    }

    // Binary sidecar with the sampled frequencies/phases for exact rerun.
    void save(const std::string& path) const {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open " + path);
        std::string header = "{\"input_dim\":" + std::to_string(rff.input_dim) +
                             ",\"num_features\":" + std::to_string(rff.num_features) +
                             ",\"output_dim\":" + std::to_string(output_dim) +
                             ",\"layout\":" + std::to_string(static_cast<int>(layout)) +
                             ",\"sigma\":" + std::to_string(rff.sigma) +
                             ",\"seed\":" + std::to_string(rff.seed) + "}";
        os << header << '\n';
        os.write(reinterpret_cast<const char*>(rff.omega.data()),
                 static_cast<std::streamsize>(sizeof(double) * rff.omega.size()));
        os.write(reinterpret_cast<const char*>(rff.phase.data()),
                 static_cast<std::streamsize>(sizeof(double) * rff.phase.size()));
    }

    static MatrixBasis load(const std::string& path) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("cannot open " + path);
        std::string header;
        std::getline(is, header);
        auto field = [&](const std::string& key) {
            auto pos = header.find("\"" + key + "\":");
            if (pos == std::string::npos) throw std::runtime_error("corrupt basis sidecar");
            return std::stod(header.substr(pos + key.size() + 3));
        };
        MatrixBasis b;
        b.rff.input_dim = static_cast<int>(field("input_dim"));
        b.rff.num_features = static_cast<int>(field("num_features"));
        b.output_dim = static_cast<int>(field("output_dim"));
        b.layout = static_cast<BasisLayout>(static_cast<int>(field("layout")));
        b.rff.sigma = field("sigma");
        b.rff.seed = static_cast<std::uint64_t>(field("seed"));
        b.rff.omega.resize(b.rff.num_features, b.rff.input_dim);
        b.rff.phase.resize(b.rff.num_features);
        is.read(reinterpret_cast<char*>(b.rff.omega.data()),
                static_cast<std::streamsize>(sizeof(double) * b.rff.omega.size()));
        is.read(reinterpret_cast<char*>(b.rff.phase.data()),
                static_cast<std::streamsize>(sizeof(double) * b.rff.phase.size()));
        if (!is) throw std::runtime_error("corrupt basis sidecar");
        return b;
    }
};

// Median-heuristic bandwidth: median pairwise distance of pilot states maps
// to sigma with exp(-sigma^2 d^2/2) = 1/2 at d = median.
inline double median_heuristic_sigma(const std::vector<Eigen::VectorXd>& pilot_states) {
    std::vector<double> dists;
    const std::size_t n = pilot_states.size();
    for (std::size_t a = 0; a + 1 < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b)
            dists.push_back((pilot_states[a] - pilot_states[b]).norm());
    if (dists.empty()) return 1.0;
    std::nth_element(dists.begin(), dists.begin() + dists.size() / 2, dists.end());
    const double med = dists[dists.size() / 2];
    if (med < 1e-9) return 1.0;
    return std::sqrt(2.0 * std::log(2.0)) / med;
}

}  // namespace omac
