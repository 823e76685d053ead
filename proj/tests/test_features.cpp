#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "omac/features.hpp"
#include "omac/rng.hpp"

using namespace omac;
using Catch::Approx;

TEST_CASE("rff with zero frequency and phase evaluates to sqrt(2)") {
    RffBasis b;
    b.input_dim = 1;
    b.num_features = 1;
    b.omega = Eigen::MatrixXd::Zero(1, 1);
    b.phase = Eigen::VectorXd::Zero(1);
    const Eigen::VectorXd z = b.eval(Eigen::VectorXd::Constant(1, 3.7));
    REQUIRE(z(0) == Approx(std::sqrt(2.0)));
}

TEST_CASE("rff amplitude bound over random inputs") {
    const RffBasis b = RffBasis::make(3, 16, 1.3, 11);
    Rng rng(5);
    for (int k = 0; k < 10000; ++k) {
        const Eigen::VectorXd z = b.eval(rng.normal_vector(3, 3.0));
        REQUIRE(z.norm() <= std::sqrt(2.0) + 1e-12);
    }
}

TEST_CASE("rff inner products approximate the Gaussian kernel") {
    // E[z(x)^T z(x')] = exp(-sigma^2 ||x - x'||^2 / 2) for Omega ~ N(0, sigma^2)
    const double sigma = 0.8;
    const RffBasis b = RffBasis::make(2, 2000, sigma, 21);
    Rng rng(22);
    for (int k = 0; k < 8; ++k) {
        const Eigen::VectorXd x = rng.normal_vector(2);
        const Eigen::VectorXd x2 = x + rng.normal_vector(2, 0.7);
        const double kernel = std::exp(-sigma * sigma * (x - x2).squaredNorm() / 2.0);
        REQUIRE(b.eval(x).dot(b.eval(x2)) == Approx(kernel).margin(0.05));
    }
}

TEST_CASE("rff reproducibility from the seed") {
    const RffBasis a = RffBasis::make(4, 32, 1.0, 77);
    const RffBasis b = RffBasis::make(4, 32, 1.0, 77);
    REQUIRE(a.omega == b.omega);
    REQUIRE(a.phase == b.phase);
}

TEST_CASE("matrix basis with one row equals the feature map") {
    const MatrixBasis b = MatrixBasis::block_diagonal(2, 1, 8, 1.0, 3);
    const Eigen::VectorXd x = Eigen::Vector2d(0.4, -1.1);
    REQUIRE((b.eval(x).row(0).transpose() - b.rff.eval(x)).norm() == Approx(0.0).margin(1e-15));
}

TEST_CASE("block-diagonal layout zeros outside each row's block") {
    const MatrixBasis b = MatrixBasis::block_diagonal(2, 3, 4, 1.0, 9);
    const Eigen::MatrixXd y = b.eval(Eigen::Vector2d(1.0, -0.5));
    REQUIRE(y.rows() == 3);
    REQUIRE(y.cols() == 12);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 12; ++c)
            if (c < 4 * r || c >= 4 * (r + 1)) REQUIRE(y(r, c) == 0.0);
}

TEST_CASE("bound constants are certified over sampled states") {
    const MatrixBasis block = MatrixBasis::block_diagonal(2, 3, 5, 1.2, 31);
    const MatrixBasis shared = MatrixBasis::shared(2, 3, 15, 1.2, 32);
    REQUIRE(block.bound_constant() == Approx(std::sqrt(2.0)));
    REQUIRE(shared.bound_constant() == Approx(std::sqrt(6.0)));

    Rng rng(33);
    double worst_block = 0.0, worst_shared = 0.0;
    for (int k = 0; k < 100000; ++k) {
        const Eigen::VectorXd x = rng.normal_vector(2, 2.5);
        worst_block = std::max(worst_block, block.eval(x).jacobiSvd().singularValues()(0));
        worst_shared = std::max(worst_shared, shared.eval(x).jacobiSvd().singularValues()(0));
    }
    REQUIRE(worst_block <= block.bound_constant() + 1e-12);
    REQUIRE(worst_shared <= shared.bound_constant() + 1e-12);
    // block-diagonal spectral norm equals the max block norm
    const Eigen::VectorXd x = rng.normal_vector(2);
    const Eigen::MatrixXd y = block.eval(x);
    double max_block = 0.0;
    for (int r = 0; r < 3; ++r) max_block = std::max(max_block, y.row(r).norm());
    REQUIRE(y.jacobiSvd().singularValues()(0) == Approx(max_block));
}

TEST_CASE("zero-feature basis has zero bound") {
    const MatrixBasis b = MatrixBasis::block_diagonal(2, 1, 0, 1.0, 3);
    REQUIRE(b.bound_constant() == 0.0);
    REQUIRE(b.eval(Eigen::Vector2d(1.0, 2.0)).size() == 0);
}

TEST_CASE("basis sidecar round trip is exact") {
    const MatrixBasis b = MatrixBasis::block_diagonal(3, 2, 6, 0.9, 55);
    const std::string path =
        (std::filesystem::temp_directory_path() / "omac_basis_test.bin").string();
    b.save(path);
    const MatrixBasis loaded = MatrixBasis::load(path);
    REQUIRE(loaded.rff.omega == b.rff.omega);
    REQUIRE(loaded.rff.phase == b.rff.phase);
    REQUIRE(loaded.output_dim == b.output_dim);
    REQUIRE(loaded.layout == b.layout);
    std::filesystem::remove(path);
}

TEST_CASE("median heuristic maps the half-kernel distance") {
    // two points at distance d: sigma solves exp(-sigma^2 d^2 / 2) = 1/2
    std::vector<Eigen::VectorXd> pts = {Eigen::VectorXd::Zero(1),
                                        Eigen::VectorXd::Constant(1, 2.0)};
    const double sigma = median_heuristic_sigma(pts);
    REQUIRE(std::exp(-sigma * sigma * 4.0 / 2.0) == Approx(0.5));
}
