#include <catch2/catch_amalgamated.hpp>

#include "omac/adapters.hpp"
#include "omac/models.hpp"
#include "omac/rng.hpp"

using namespace omac;
using Catch::Approx;

TEST_CASE("ogd leaves the iterate unchanged on zero gradient") {
    OgdAdapter ogd(2.0, 1.0);
    const Eigen::VectorXd p = Eigen::VectorXd::Constant(1, 0.7);
    REQUIRE(ogd.step(p, Eigen::VectorXd::Zero(1)) == p);
}

TEST_CASE("ogd scalar step with unit schedule") {
    // eta_1 = D/G = 1; param' = 0 - 1 * (-1) = 1, inside the ball K = 2
    OgdAdapter ogd = OgdAdapter::lemma4(1.0, 1.0, 2.0);
    const Eigen::VectorXd p = ogd.step(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, -1.0));
    REQUIRE(p(0) == Approx(1.0));
}

TEST_CASE("ogd iterates never leave the projection ball") {
    Rng rng(8);
    OgdAdapter ogd(1.5, 0.8);
    Eigen::VectorXd p = Eigen::VectorXd::Zero(4);
    for (int t = 0; t < 500; ++t) {
        p = ogd.step(p, rng.normal_vector(4, 5.0));
        REQUIRE(p.norm() <= 1.5 + 1e-12);
    }
}

TEST_CASE("boundary points are feasible and projection is a no-op there") {
    Eigen::VectorXd v(2);
    v << 3.0, 4.0;  // norm 5
    REQUIRE(project_ball(v, 5.0) == v);
    REQUIRE(project_ball(v, 2.5) == 0.5 * v);
}

TEST_CASE("ogd step lengths respect the diameter cap") {
    OgdAdapter ogd(1.0, 100.0);  // absurd rate; cap = 2 * radius
    Eigen::VectorXd p = Eigen::VectorXd::Zero(2);
    const Eigen::VectorXd p1 = ogd.step(p, Eigen::Vector2d(50.0, 0.0));
    REQUIRE(p1.norm() <= 1.0 + 1e-12);  // capped move then projected
    const double limit_t2 = ogd.step_length_limit(2);
    REQUIRE(limit_t2 == Approx(2.0 / std::sqrt(2.0)));
}

TEST_CASE("corollary-4 schedule constants and rates") {
    ScheduleConstants k{1.0, 1.0, 1.0, 1.0, 0.0};
    REQUIRE(k.C1() == Approx(8.0));
    REQUIRE(k.C2() == Approx(8.0));
    const auto s = corollary4_schedules(k, 100);
    REQUIRE(s.inner_rate(1) == Approx(0.25));  // 2 K_c / C2
    REQUIRE(s.meta_rate(1) == Approx(2.0 / (8.0 * 100.0)));
    // eta_bar halves when i quadruples
    REQUIRE(s.meta_rate(4) == Approx(0.5 * s.meta_rate(1)));
    REQUIRE(s.inner_rate(9) == Approx(s.inner_rate(1) / 3.0));
}

TEST_CASE("ridge adapter with no data solves to zero") {
    RidgeMetaAdapter ridge(0.5, 3, 2);
    REQUIRE(ridge.solve().isZero());
    REQUIRE(ridge.diversity_lambda_min() == Approx(0.0).margin(1e-12));
}

TEST_CASE("accumulating the identity adds to the Gram matrix") {
    RidgeMetaAdapter ridge(0.5, 2, 1);
    const Eigen::MatrixXd z = Eigen::MatrixXd::Identity(2, 2);
    ridge.accumulate(z, Eigen::Vector2d(1.0, 2.0));
    REQUIRE((ridge.gram() - 1.5 * Eigen::MatrixXd::Identity(2, 2)).norm() ==
            Approx(0.0).margin(1e-14));
}

TEST_CASE("incremental Gram matches recomputation from the batch log") {
    Rng rng(9);
    const int pbar = 3, h = 2, dim = pbar * h;
    RidgeMetaAdapter ridge(0.1, pbar, h);
    Eigen::MatrixXd v_ref = 0.1 * Eigen::MatrixXd::Identity(dim, dim);
    Eigen::VectorXd m_ref = Eigen::VectorXd::Zero(dim);
    for (int k = 0; k < 50; ++k) {
        Eigen::MatrixXd z(2, dim);
        for (int r = 0; r < 2; ++r)
            for (int c = 0; c < dim; ++c) z(r, c) = rng.normal();
        const Eigen::VectorXd y = rng.normal_vector(2);
        ridge.accumulate(z, y);
        v_ref += z.transpose() * z;
        m_ref += z.transpose() * y;
    }
    REQUIRE((ridge.gram() - v_ref).cwiseAbs().maxCoeff() < 1e-8);
    REQUIRE((ridge.moment() - m_ref).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("ridge shrinks to zero as lambda grows") {
    Rng rng(10);
    RidgeMetaAdapter small(1e-6, 2, 2);
    RidgeMetaAdapter huge(1e9, 2, 2);
    for (int k = 0; k < 20; ++k) {
        Eigen::MatrixXd z(1, 4);
        for (int c = 0; c < 4; ++c) z(0, c) = rng.normal();
        const Eigen::VectorXd y = rng.normal_vector(1);
        small.accumulate(z, y);
        huge.accumulate(z, y);
    }
    REQUIRE(huge.solve().norm() < 1e-7);
    REQUIRE(small.solve().norm() > 1e-3);
}

TEST_CASE("ridge reports an ill-conditioned Gram matrix") {
    RidgeMetaAdapter ridge(1e-8, 2, 1);
    // overflow the accumulation so the factorization fails
    ridge.accumulate(Eigen::MatrixXd::Constant(1, 2, 1e200), Eigen::VectorXd::Constant(1, 1.0));
    REQUIRE_THROWS_WITH(ridge.solve(), Catch::Matchers::ContainsSubstring("ill-conditioned"));
}

TEST_CASE("degenerate repeated conditions keep lambda_min at zero") {
    Rng rng(12);
    const int pbar = 2, h = 3;
    RidgeMetaAdapter ridge(1e-3, pbar, h);
    const Eigen::VectorXd c0 = rng.unit_sphere(h);
    for (int k = 0; k < 40; ++k) {
        Eigen::MatrixXd Y(1, pbar);
        Y << rng.normal(), rng.normal();
        ridge.accumulate(kronecker_row(c0, Y), rng.normal_vector(1));
    }
    REQUIRE(ridge.diversity_lambda_min() <= 1e-9);
}

TEST_CASE("adam stays put on zero gradients from init") {
    AdamState adam(1e-2);
    const Eigen::VectorXd p = Eigen::VectorXd::Constant(3, 0.4);
    REQUIRE(adam.step(p, Eigen::VectorXd::Zero(3)) == p);
}

TEST_CASE("adam first step is a signed step of the configured size") {
    AdamState adam(1e-2);
    const Eigen::VectorXd p = Eigen::VectorXd::Zero(2);
    const Eigen::VectorXd next = adam.step(p, Eigen::Vector2d(3.0, -0.5));
    REQUIRE(next(0) == Approx(-1e-2).epsilon(1e-4));
    REQUIRE(next(1) == Approx(1e-2).epsilon(1e-4));
}

TEST_CASE("adam minimizes a quadratic to within 1e-3") {
    AdamState adam(1e-3);
    const Eigen::VectorXd target = Eigen::Vector3d(0.3, -0.9, 0.5);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
    for (int t = 0; t < 5000; ++t) x = adam.step(x, 2.0 * (x - target));
    REQUIRE((x - target).norm() < 1e-3);
}
