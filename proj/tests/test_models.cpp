#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "omac/checks.hpp"
#include "omac/models.hpp"

using namespace omac;
using Catch::Approx;

namespace {

// RFF basis pinned to the constant 1 (single feature, omega = 0, phase such
// that sqrt(2) cos(phase) = 1), for hand-arithmetic cases.
MatrixBasis constant_one_basis() {
    MatrixBasis b;
    b.rff.input_dim = 1;
    b.rff.num_features = 1;
    b.rff.omega = Eigen::MatrixXd::Zero(1, 1);
    b.rff.phase = Eigen::VectorXd::Constant(1, std::acos(1.0 / std::sqrt(2.0)));
    b.output_dim = 1;
    b.layout = BasisLayout::BlockDiagonal;
    return b;
}

}  // namespace

TEST_CASE("all three model classes predict zero at zero parameters") {
    Rng rng(1);
    const Eigen::VectorXd x = rng.normal_vector(2);
    SuperpositionModel sup(MatrixBasis::block_diagonal(2, 1, 6, 1.0, 2),
                           MatrixBasis::block_diagonal(2, 1, 3, 1.0, 3));
    BilinearModel bil(MatrixBasis::block_diagonal(2, 1, 6, 1.0, 4), 3);
    DeepModel deep(2, 1, 3, {8, 6}, 2.0, 5);
    REQUIRE(sup.predict(x).norm() == 0.0);
    REQUIRE(bil.predict(x).norm() == 0.0);
    REQUIRE(deep.predict(x).norm() == 0.0);  // c = 0 and the output is linear in c
}

TEST_CASE("bilinear prediction equals the matrix chain") {
    Rng rng(7);
    BilinearModel m(MatrixBasis::block_diagonal(3, 2, 4, 1.0, 8), 3);
    m.set_meta_flat(rng.normal_vector(m.meta_dim()));
    m.set_inner(rng.normal_vector(3));
    const Eigen::VectorXd x = rng.normal_vector(3);
    const Eigen::VectorXd expect = m.basis().eval(x) * m.theta() * m.inner();
    REQUIRE((m.predict(x) - expect).norm() == Approx(0.0).margin(1e-14));
}

TEST_CASE("deep prediction is linear in the inner block") {
    Rng rng(9);
    DeepModel m(3, 2, 4, {8, 6}, 2.0, 10);
    const Eigen::VectorXd x = rng.normal_vector(3);
    const Eigen::VectorXd c = rng.normal_vector(4);
    m.set_inner(c);
    const Eigen::VectorXd base = m.predict(x);
    m.set_inner(2.5 * c);
    REQUIRE((m.predict(x) - 2.5 * base).norm() == Approx(0.0).margin(1e-12));
}

TEST_CASE("zero residual gives zero gradients") {
    SuperpositionModel m(constant_one_basis(), constant_one_basis());
    m.set_meta_flat(Eigen::VectorXd::Constant(1, 1.0));
    m.set_inner(Eigen::VectorXd::Constant(1, 1.0));
    const Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
    // prediction = 2, so y = 2 has zero residual
    const LossEval e = m.loss_and_grads(x, Eigen::VectorXd::Constant(1, 2.0));
    REQUIRE(e.value == Approx(0.0).margin(1e-28));
    REQUIRE(e.grad_theta.norm() == Approx(0.0).margin(1e-14));
    REQUIRE(e.grad_c.norm() == Approx(0.0).margin(1e-14));
}

TEST_CASE("superposition scalar case by hand") {
    // Y1 = Y2 = 1, Theta = c = 1, y = 1: r = 1, loss = 1, both grads = 2
    SuperpositionModel m(constant_one_basis(), constant_one_basis());
    m.set_meta_flat(Eigen::VectorXd::Constant(1, 1.0));
    m.set_inner(Eigen::VectorXd::Constant(1, 1.0));
    const LossEval e = m.loss_and_grads(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 1.0));
    REQUIRE(e.value == Approx(1.0));
    REQUIRE(e.grad_theta(0) == Approx(2.0));
    REQUIRE(e.grad_c(0) == Approx(2.0));
}

TEST_CASE("analytic gradients match finite differences for every model class") {
    // a quick slice of the full gradient check (the complete 100-instance
    // sweep runs in the acceptance suite)
    for (int kind = 0; kind < 3; ++kind) {
        for (int inst = 0; inst < 10; ++inst) {
            Rng rng(300 + 40 * kind + inst);
            std::unique_ptr<FunctionModel> model;
            if (kind == 0)
                model = std::make_unique<SuperpositionModel>(
                    MatrixBasis::block_diagonal(2, 2, 3, 1.0, rng.derive("a").seed()),
                    MatrixBasis::block_diagonal(2, 2, 2, 1.0, rng.derive("b").seed()));
            else if (kind == 1)
                model = std::make_unique<BilinearModel>(
                    MatrixBasis::block_diagonal(2, 2, 3, 1.0, rng.derive("c").seed()), 3);
            else
                model = std::make_unique<DeepModel>(2, 2, 3, std::vector<int>{8, 6}, 2.0,
                                                    rng.derive("d").seed());
            model->set_meta_flat(rng.normal_vector(model->meta_dim(), 0.5));
            model->set_inner(rng.normal_vector(model->inner_dim(), 0.8));
            const double err = checks::fd_relative_error(*model, rng.normal_vector(2),
                                                         rng.normal_vector(2));
            REQUIRE(err < 1e-4);
        }
    }
}

TEST_CASE("superposition loss is jointly convex") {
    Rng rng(11);
    SuperpositionModel m(MatrixBasis::block_diagonal(2, 1, 6, 1.0, 12),
                         MatrixBasis::block_diagonal(2, 1, 3, 1.0, 13));
    for (int k = 0; k < 200; ++k) {
        const Eigen::VectorXd x = rng.normal_vector(2);
        const Eigen::VectorXd y = rng.normal_vector(1);
        const Eigen::VectorXd ta = rng.normal_vector(6), tb = rng.normal_vector(6);
        const Eigen::VectorXd ca = rng.normal_vector(3), cb = rng.normal_vector(3);
        auto loss_at = [&](const Eigen::VectorXd& t, const Eigen::VectorXd& c) {
            m.set_meta_flat(t);
            m.set_inner(c);
            return m.loss(x, y);
        };
        const double mid = loss_at(0.5 * (ta + tb), 0.5 * (ca + cb));
        const double mean = 0.5 * (loss_at(ta, ca) + loss_at(tb, cb));
        REQUIRE(mid <= mean + 1e-9);
    }
}

TEST_CASE("bilinear loss is convex in each block") {
    Rng rng(14);
    BilinearModel m(MatrixBasis::block_diagonal(2, 1, 5, 1.0, 15), 3);
    for (int k = 0; k < 200; ++k) {
        const Eigen::VectorXd x = rng.normal_vector(2);
        const Eigen::VectorXd y = rng.normal_vector(1);
        const Eigen::VectorXd t0 = rng.normal_vector(m.meta_dim());
        const Eigen::VectorXd ta = rng.normal_vector(m.meta_dim()),
                              tb = rng.normal_vector(m.meta_dim());
        const Eigen::VectorXd c0 = rng.normal_vector(3);
        const Eigen::VectorXd ca = rng.normal_vector(3), cb = rng.normal_vector(3);
        auto loss_at = [&](const Eigen::VectorXd& t, const Eigen::VectorXd& c) {
            m.set_meta_flat(t);
            m.set_inner(c);
            return m.loss(x, y);
        };
        // theta fixed, convex in c
        REQUIRE(loss_at(t0, 0.5 * (ca + cb)) <=
                0.5 * (loss_at(t0, ca) + loss_at(t0, cb)) + 1e-9);
        // c fixed, convex in theta
        REQUIRE(loss_at(0.5 * (ta + tb), c0) <=
                0.5 * (loss_at(ta, c0) + loss_at(tb, c0)) + 1e-9);
    }
}

TEST_CASE("kronecker lift: scalar latent and zero condition") {
    Rng rng(16);
    Eigen::MatrixXd Y(2, 3);
    Y << 1, 2, 3, 4, 5, 6;
    REQUIRE(kronecker_row(Eigen::VectorXd::Constant(1, 1.0), Y) == Y);
    REQUIRE(kronecker_row(Eigen::VectorXd::Zero(4), Y).isZero());
    // identity Z vec(Theta) = Y Theta c on a random instance
    const Eigen::MatrixXd theta = Eigen::MatrixXd::Random(3, 4);
    const Eigen::VectorXd c = rng.normal_vector(4);
    const Eigen::VectorXd lhs =
        kronecker_row(c, Y) * Eigen::Map<const Eigen::VectorXd>(theta.data(), theta.size());
    REQUIRE((lhs - Y * theta * c).lpNorm<Eigen::Infinity>() <= 1e-12);
}

TEST_CASE("spectral normalization leaves compliant weights untouched and scales violators") {
    Eigen::MatrixXd w = Eigen::Vector2d(10.0, 1.0).asDiagonal();
    Eigen::VectorXd u = Eigen::Vector2d(1.0, 0.0);
    spectral_scale_to_bound(w, u, 1.0);
    REQUIRE(w(0, 0) == Approx(1.0));
    REQUIRE(w(1, 1) == Approx(0.1));

    Eigen::MatrixXd ok = Eigen::Vector2d(0.5, 0.2).asDiagonal();
    const Eigen::MatrixXd before = ok;
    Eigen::VectorXd u2 = Eigen::Vector2d(0.6, 0.8).normalized();
    spectral_scale_to_bound(ok, u2, 1.0);
    REQUIRE(ok == before);
}

TEST_CASE("deep model respects its Lipschitz budget") {
    DeepModel m(3, 2, 4, {8, 8}, 1.5, 44);
    spectral_normalize(m);
    const double L = m.lipschitz_bound();
    Rng rng(45);
    for (int k = 0; k < 300; ++k) {
        const Eigen::VectorXd a = rng.normal_vector(3, 2.0);
        const Eigen::VectorXd b = a + rng.normal_vector(3, 0.5);
        const double lhs = (m.phi(a) - m.phi(b)).norm();
        REQUIRE(lhs <= L * (a - b).norm() + 1e-12);
    }
}

TEST_CASE("checkpoint round trip restores parameters bit-exactly") {
    Rng rng(66);
    DeepModel m(2, 1, 3, {6, 5}, 2.0, 67);
    m.set_meta_flat(rng.normal_vector(m.meta_dim()));
    m.set_inner(rng.normal_vector(3));
    const std::string path =
        (std::filesystem::temp_directory_path() / "omac_ckpt_test.bin").string();
    save_checkpoint(m, path);

    DeepModel fresh(2, 1, 3, {6, 5}, 2.0, 67);
    load_checkpoint(fresh, path);
    REQUIRE(fresh.meta_flat() == m.meta_flat());
    REQUIRE(fresh.inner() == m.inner());

    BilinearModel wrong(MatrixBasis::block_diagonal(2, 1, 4, 1.0, 68), 3);
    REQUIRE_THROWS_AS(load_checkpoint(wrong, path), std::runtime_error);
    std::filesystem::remove(path);
}
