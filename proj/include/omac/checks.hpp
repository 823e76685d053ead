#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "omac/adapters.hpp"
#include "omac/controller.hpp"
#include "omac/core.hpp"
#include "omac/dynamics.hpp"
#include "omac/features.hpp"
#include "omac/harness.hpp"
#include "omac/models.hpp"
#include "omac/rng.hpp"

namespace omac {

namespace checks {

inline CheckResult make_result(const std::string& name, bool pass, double margin,
                               const std::string& details) {
    CheckResult r;
    r.name = name;
    r.pass = pass;
    r.margin = margin;
    r.details = details;
    return r;
}

// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double n = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        sx += xs[k];
        sy += ys[k];
        sxx += xs[k] * xs[k];
        sxy += xs[k] * ys[k];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Lemma 1: ACE <= gamma/(1-rho) RMS(residual) on randomized episodes.
// ---------------------------------------------------------------------------

struct Lemma1Episode {
    double ace = 0.0;
    double bound = 0.0;
    EissConstants constants;
};

inline Lemma1Episode lemma1_scalar_episode(std::uint64_t seed) {
    Rng rng(seed);
    const double a = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.3, 0.9);
    PlantSpec spec = scalar_plant_spec(a);
    GenericPlant plant(spec);
    PseudoInverseLaw law(plant);

    DisturbanceSpec dist;
    switch (seed % 4) {
        case 0: dist = DisturbanceSpec::bounded(0.5); break;
        case 1: dist = DisturbanceSpec::sub_gaussian(0.2, 1); break;
        case 2: dist = DisturbanceSpec::constant(Eigen::VectorXd::Constant(1, 0.3)); break;
        default: dist = DisturbanceSpec::zero(); break;
    }

    std::unique_ptr<Controller> ctrl;
    switch (seed % 3) {
        case 0: ctrl = std::make_unique<NoAdaptController>(1); break;
        case 1: ctrl = std::make_unique<OmniscientController>(); break;
        default: {
            MatrixBasis y1 = MatrixBasis::block_diagonal(1, 1, 8, 1.0, rng.derive("y1").seed());
            MatrixBasis y2 = MatrixBasis::block_diagonal(1, 1, 3, 1.0, rng.derive("y2").seed());
            ScheduleConstants k{y1.bound_constant(), y2.bound_constant(), 2.0, 1.5, dist.bound};
            auto model = std::make_unique<SuperpositionModel>(std::move(y1), std::move(y2));
            OmacOptions opt;
            opt.variant = OmacVariant::Convex;
            ctrl = std::make_unique<OmacController>(std::move(model), corollary4_inner_adapter(k),
                                                    corollary4_meta_adapter(k, 150), opt);
            break;
        }
    }

    const int N = 3, T = 150;
    EpisodeLog log(N, T);
    Eigen::VectorXd x = plant.initial_state();
    Rng drng = rng.derive("dist");
    Rng crng = rng.derive("env");
    for (int i = 1; i <= N; ++i) {
        const Eigen::VectorXd c = crng.uniform_vector(2, -1.0, 1.0);
        run_episode(plant, law, *ctrl, c, T, dist, drng, i, x, log);
        ctrl->end_episode(std::nullopt);
    }
    Lemma1Episode out;
    out.constants = estimate_eiss_constants(plant.eiss_nominal_matrix());
    out.ace = ace(log);
    out.bound = lemma1_bound(log, out.constants);
    return out;
}

inline Lemma1Episode lemma1_pendulum_episode(std::uint64_t seed) {
    Rng rng(seed);
    PendulumParams params;
    const Eigen::RowVector2d K = PendulumLaw::lqr_gain(params);
    PendulumPlant plant(params, K);
    PendulumLaw law(plant);

    const DisturbanceSpec dist =
        seed % 2 == 0 ? DisturbanceSpec::bounded(1.0) : DisturbanceSpec::zero();

    std::unique_ptr<Controller> ctrl;
    switch (seed % 3) {
        case 0: ctrl = std::make_unique<NoAdaptController>(1); break;
        case 1: ctrl = std::make_unique<OmniscientController>(); break;
        default: {
            MatrixBasis y = MatrixBasis::block_diagonal(2, 1, 40, 0.5, rng.derive("y").seed());
            auto model = std::make_unique<BilinearModel>(std::move(y), 8);
            model->set_theta(sample_bilinear_theta0(40, 8, 5.0, rng.derive("theta0")));
            OmacOptions opt;
            opt.variant = OmacVariant::BilinearOgd;
            opt.freeze_meta = true;  // baseline-adaptive wiring
            ctrl = std::make_unique<OmacController>(std::move(model),
                                                    OgdAdapter(20.0, 0.02), OgdAdapter(), opt);
            break;
        }
    }

    const int N = 2, T = 200;
    EpisodeLog log(N, T);
    Eigen::VectorXd x = plant.initial_state();
    Rng drng = rng.derive("dist");
    Rng crng = rng.derive("wind");
    for (int i = 1; i <= N; ++i) {
        const Eigen::VectorXd c = crng.uniform_vector(2, -4.0, 4.0);
        run_episode(plant, law, *ctrl, c, T, dist, drng, i, x, log);
        ctrl->end_episode(std::nullopt);
    }
    Lemma1Episode out;
    out.constants = estimate_eiss_constants(plant.eiss_nominal_matrix());
    out.ace = ace(log);
    out.bound = lemma1_bound(log, out.constants);
    return out;
}

inline std::vector<CheckResult> check_lemma1() {
    std::vector<CheckResult> results;
    int failures = 0;
    double worst_margin = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 100; ++k) {
        const Lemma1Episode ep =
            k < 60 ? lemma1_scalar_episode(1000 + k) : lemma1_pendulum_episode(2000 + k);
        if (!(ep.ace <= ep.bound)) ++failures;
        worst_margin = std::min(worst_margin, ep.bound - ep.ace);
    }
    {
        std::ostringstream det;
        det << failures << "/100 violations, worst margin " << worst_margin;
        results.push_back(
            make_result("lemma1-inequality", failures == 0, worst_margin, det.str()));
    }

    // footnote tightness: x+ = 0.5 x + u - f + w, constant w, omniscient
    {
        const double a = 0.5, w_const = 0.7;
        GenericPlant plant(scalar_plant_spec(a));
        PseudoInverseLaw law(plant);
        OmniscientController ctrl;
        const DisturbanceSpec dist =
            DisturbanceSpec::constant(Eigen::VectorXd::Constant(1, w_const));
        const int T = 2000;
        EpisodeLog log(1, T);
        Eigen::VectorXd x = plant.initial_state();
        Rng drng(7);
        run_episode(plant, law, ctrl, Eigen::Vector2d(0.4, 0.2), T, dist, drng, 1, x, log);
        const double limit = 1.0 * w_const / (1.0 - a);  // gamma |w| / (1 - rho)
        const double rel = std::abs(ace(log) - limit) / limit;
        std::ostringstream det;
        det << "ace=" << ace(log) << " limit=" << limit << " rel=" << rel;
        results.push_back(make_result("lemma1-tightness", rel < 0.02, 0.02 - rel, det.str()));
    }

    // negative control: halving gamma must break the bound on a noisy run
    {
        const Lemma1Episode ep = lemma1_scalar_episode(1000);  // no-adapt, bounded noise
        const double bad_bound = ep.bound * 0.5;
        const bool violated = ep.ace > bad_bound;
        std::ostringstream det;
        det << "ace=" << ep.ace << " halved-bound=" << bad_bound;
        results.push_back(make_result("lemma1-negative-control", violated,
                                      ep.ace - bad_bound, det.str()));
    }
    return results;
}

// ---------------------------------------------------------------------------
// Lemma 4: projected OGD regret on convex quadratic families.
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> check_ogd_regret() {
    std::vector<CheckResult> results;
    bool all_pass = true;
    double worst_ratio = 0.0;
    int instances = 0;
    for (int T : {100, 1000, 10000}) {
        for (int trial = 0; trial < 8; ++trial) {
            Rng rng(4000 + 17 * T + trial);
            const int dim = 1 + static_cast<int>(rng.uniform01() * 4);
            const double K = rng.uniform(0.5, 2.5);
            const double A = rng.uniform(0.5, 2.0);
            const double G = 2.0 * (K + A * std::sqrt(static_cast<double>(dim)));
            const double D = 2.0 * K;
            OgdAdapter ogd = OgdAdapter::lemma4(D, G, K);

            std::vector<Eigen::VectorXd> targets(T);
            for (int t = 0; t < T; ++t) targets[t] = rng.uniform_vector(dim, -A, A);

            Eigen::VectorXd x = Eigen::VectorXd::Zero(dim);
            Eigen::VectorXd target_sum = Eigen::VectorXd::Zero(dim);
            double play_loss = 0.0;
            bool inside = true;
            for (int t = 0; t < T; ++t) {
                play_loss += (x - targets[t]).squaredNorm();
                const Eigen::VectorXd grad = 2.0 * (x - targets[t]);
                x = ogd.step(x, grad);
                inside = inside && x.norm() <= K + 1e-12;
                target_sum += targets[t];
            }
            const Eigen::VectorXd x_star = project_ball(target_sum / T, K);
            double best_loss = 0.0;
            for (int t = 0; t < T; ++t) best_loss += (x_star - targets[t]).squaredNorm();

            const double regret = play_loss - best_loss;
            const double bound = 1.5 * G * D * std::sqrt(static_cast<double>(T));
            worst_ratio = std::max(worst_ratio, regret / bound);
            all_pass = all_pass && inside && regret <= bound;
            ++instances;
        }
    }
    // the scalar instance f_t(x) = (x - 1)^2 with K = 2, G = 2(K+1), D = 2K
    {
        const double K = 2.0, G = 2.0 * (K + 1.0), D = 2.0 * K;
        const int T = 10000;
        OgdAdapter ogd = OgdAdapter::lemma4(D, G, K);
        Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
        double play_loss = 0.0;
        for (int t = 0; t < T; ++t) {
            play_loss += (x(0) - 1.0) * (x(0) - 1.0);
            x = ogd.step(x, Eigen::VectorXd::Constant(1, 2.0 * (x(0) - 1.0)));
        }
        const double regret = play_loss;  // comparator x* = 1 has zero loss
        const double bound = 1.5 * G * D * std::sqrt(static_cast<double>(T));
        worst_ratio = std::max(worst_ratio, regret / bound);
        all_pass = all_pass && regret <= bound;
        ++instances;
    }
    std::ostringstream det;
    det << instances << " instances, worst regret/bound ratio " << worst_ratio;
    results.push_back(make_result("ogd-regret-lemma4", all_pass, 1.0 - worst_ratio, det.str()));
    return results;
}

// ---------------------------------------------------------------------------
// Lemma 2: nested OCO decomposition on synthetic superposition systems.
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> check_nested_decomposition() {
    const int instances = 50;
    int failures = 0;
    double worst_slack = std::numeric_limits<double>::infinity();
    for (int inst = 0; inst < instances; ++inst) {
        Rng rng(5000 + inst);
        const double a = (rng.uniform01() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.3, 0.8);
        const int p = 8, h = 3, N = 8, T = 40;
        const double K_theta = 2.0, K_c = 1.5, W = 0.05;

        MatrixBasis y1 = MatrixBasis::block_diagonal(1, 1, p, 1.0, rng.derive("y1").seed());
        MatrixBasis y2 = MatrixBasis::block_diagonal(1, 1, h, 1.0, rng.derive("y2").seed());
        const Eigen::VectorXd theta_star = project_ball(rng.normal_vector(p), 0.8 * K_theta);
        std::vector<Eigen::VectorXd> c_star(N);
        for (auto& c : c_star) c = project_ball(rng.normal_vector(h), 0.8 * K_c);

        PlantSpec spec = scalar_plant_spec(a, h);
        const MatrixBasis y1_plant = y1, y2_plant = y2;
        spec.f_unknown = [y1_plant, y2_plant, theta_star](const Eigen::VectorXd& x,
                                                          const Eigen::VectorXd& c) {
            return Eigen::VectorXd(y1_plant.eval(x) * theta_star + y2_plant.eval(x) * c);
        };
        GenericPlant plant(spec);
        PseudoInverseLaw law(plant);

        ScheduleConstants k{y1.bound_constant(), y2.bound_constant(), K_theta, K_c, W};
        auto model = std::make_unique<SuperpositionModel>(y1, y2);
        OmacOptions opt;
        opt.variant = OmacVariant::Convex;
        opt.record_trace = true;
        OmacController ctrl(std::move(model), corollary4_inner_adapter(k),
                            corollary4_meta_adapter(k, T), opt);

        const DisturbanceSpec dist = DisturbanceSpec::bounded(W);
        EpisodeLog log(N, T);
        Eigen::VectorXd x = plant.initial_state();
        Rng drng = rng.derive("dist");
        for (int i = 1; i <= N; ++i) {
            run_episode(plant, law, ctrl, c_star[i - 1], T, dist, drng, i, x, log);
            ctrl.end_episode(std::nullopt);
        }

        // LHS: played loss minus the loss of the true (Theta, c^(1:N))
        double played = 0.0;
        for (const auto& ep : ctrl.trace().episodes)
            for (double l : ep.losses) played += l;
        double truth = 0.0;
        for (const auto& s : log.steps()) truth += s.w.squaredNorm();
        const double lhs = played - truth;

        // RHS: measured adapter regrets against the ball minimizers of the
        // linear surrogate costs
        double regret_meta = 0.0;
        Eigen::VectorXd meta_grad_sum = Eigen::VectorXd::Zero(p);
        double regret_inner = 0.0;
        for (const auto& ep : ctrl.trace().episodes) {
            regret_meta += ep.meta_grad.dot(ep.meta_iterate);
            meta_grad_sum += ep.meta_grad;
            Eigen::VectorXd inner_grad_sum = Eigen::VectorXd::Zero(h);
            double inner_played = 0.0;
            for (std::size_t t = 0; t < ep.inner_grads.size(); ++t) {
                inner_played += ep.inner_grads[t].dot(ep.inner_iterates[t]);
                inner_grad_sum += ep.inner_grads[t];
            }
            regret_inner += inner_played + K_c * inner_grad_sum.norm();
        }
        regret_meta += K_theta * meta_grad_sum.norm();

        const double slack = regret_meta + regret_inner + 1e-6 - lhs;
        worst_slack = std::min(worst_slack, slack);
        if (slack < 0.0) ++failures;
    }
    std::ostringstream det;
    det << failures << "/" << instances << " violations, tightest slack " << worst_slack;
    std::vector<CheckResult> results;
    results.push_back(
        make_result("nested-decomposition-lemma2", failures == 0, worst_slack, det.str()));
    return results;
}

// ---------------------------------------------------------------------------
// Theorem 6: ridge meta-adapter concentration and environment diversity.
// ---------------------------------------------------------------------------

struct RidgeTrendData {
    std::vector<double> errors;      // e_i = ||Theta^(i+1) - Theta*||_F^2
    std::vector<double> lambda_min;  // lambda_min(V - lambda I) per iteration
    Eigen::MatrixXd theta_star;
    Eigen::VectorXd c_fixed;  // the repeated condition in the degenerate case
};

inline RidgeTrendData ridge_trend(std::uint64_t seed, bool degenerate, double lambda,
                                  double noise_R, int n_outer, int T) {
    Rng rng(seed);
    const int n = 2, pbar = 6, h = 3;
    MatrixBasis Y = MatrixBasis::block_diagonal(n, n, pbar / n, 1.0, rng.derive("Y").seed());
    Eigen::MatrixXd theta_star(pbar, h);
    for (int r = 0; r < pbar; ++r)
        for (int c = 0; c < h; ++c) theta_star(r, c) = rng.normal();
    theta_star /= theta_star.norm();

    const Eigen::VectorXd c_fixed = rng.unit_sphere(h);
    DisturbanceSpec noise = noise_R > 0.0 ? DisturbanceSpec::sub_gaussian(noise_R, n)
                                          : DisturbanceSpec::zero();

    RidgeMetaAdapter ridge(lambda, pbar, h);
    RidgeTrendData out;
    Rng xrng = rng.derive("x");
    Rng wrng = rng.derive("w");
    Rng crng = rng.derive("c");
    for (int i = 1; i <= n_outer; ++i) {
        const Eigen::VectorXd c = degenerate ? c_fixed : Eigen::VectorXd(crng.unit_sphere(h));
        for (int t = 0; t < T; ++t) {
            const Eigen::VectorXd x = xrng.normal_vector(n);
            const Eigen::MatrixXd Yx = Y.eval(x);
            const Eigen::VectorXd w = noise.sample(wrng, n);
            const Eigen::VectorXd y = Yx * theta_star * c - w;
            ridge.accumulate(kronecker_row(c, Yx), y);
        }
        const Eigen::MatrixXd theta_hat = ridge.solve();
        out.errors.push_back((theta_hat - theta_star).squaredNorm());
        out.lambda_min.push_back(ridge.diversity_lambda_min());
    }
    out.theta_star = theta_star;
    out.c_fixed = c_fixed;
    return out;
}

inline std::vector<CheckResult> check_ridge() {
    std::vector<CheckResult> results;

    // concentration slope, median over 10 seeds
    {
        std::vector<double> slopes;
        for (int s = 0; s < 10; ++s) {
            const RidgeTrendData data = ridge_trend(6000 + s, false, 1e-3, 0.05, 50, 20);
            std::vector<double> lx, ly;
            for (int i = 5; i <= 50; ++i) {
                lx.push_back(std::log(static_cast<double>(i)));
                ly.push_back(std::log(std::max(data.errors[i - 1], 1e-300)));
            }
            slopes.push_back(fit_slope(lx, ly));
        }
        const double med = median(slopes);
        std::ostringstream det;
        det << "median log-log slope " << med << " (threshold -0.7)";
        results.push_back(make_result("theorem6-decay-slope", med <= -0.7, -0.7 - med, det.str()));
    }

    // diversity: lambda_min grows ~linearly for sphere-sampled c
    {
        const RidgeTrendData data = ridge_trend(6100, false, 1e-3, 0.05, 50, 20);
        std::vector<double> xs, ys;
        for (int i = 1; i <= 50; ++i) {
            xs.push_back(static_cast<double>(i));
            ys.push_back(data.lambda_min[i - 1]);
        }
        const double slope = fit_slope(xs, ys);
        std::ostringstream det;
        det << "lambda_min growth slope " << slope;
        results.push_back(make_result("theorem6-diversity-growth", slope > 0.0, slope, det.str()));
    }

    // degenerate control: repeated c pins lambda_min at zero with no recovery
    {
        const RidgeTrendData data = ridge_trend(6200, true, 1e-3, 0.05, 50, 20);
        double max_lambda = 0.0;
        for (double lm : data.lambda_min) max_lambda = std::max(max_lambda, lm);
        // error floor: the component of Theta* outside the excited c-direction
        // is never identified
        const int h = static_cast<int>(data.c_fixed.size());
        const Eigen::MatrixXd proj_out =
            Eigen::MatrixXd::Identity(h, h) -
            data.c_fixed * data.c_fixed.transpose() / data.c_fixed.squaredNorm();
        const double floor = (data.theta_star * proj_out).squaredNorm();
        double min_err = std::numeric_limits<double>::infinity();
        for (double e : data.errors) min_err = std::min(min_err, e);
        const bool pass = max_lambda <= 1e-6 && min_err >= 0.9 * floor;
        std::ostringstream det;
        det << "max lambda_min " << max_lambda << ", min error " << min_err << ", floor " << floor;
        results.push_back(make_result("theorem6-degenerate-no-recovery", pass,
                                      min_err - 0.9 * floor, det.str()));
    }

    // noiseless exact recovery with vanishing regularization
    {
        const RidgeTrendData data = ridge_trend(6300, false, 1e-8, 0.0, 4, 20);
        const double final_err = std::sqrt(data.errors.back());
        std::ostringstream det;
        det << "||Theta_hat - Theta*||_F = " << final_err;
        results.push_back(
            make_result("ridge-exact-recovery", final_err < 1e-6, 1e-6 - final_err, det.str()));
    }
    return results;
}

// ---------------------------------------------------------------------------
// Gradient correctness via central finite differences.
// ---------------------------------------------------------------------------

inline double fd_relative_error(FunctionModel& model, const Eigen::VectorXd& x,
                                const Eigen::VectorXd& y, double step = 1e-5) {
    const LossEval analytic = model.loss_and_grads(x, y);

    Eigen::VectorXd theta = model.meta_flat();
    Eigen::VectorXd fd_theta(theta.size());
    for (int k = 0; k < theta.size(); ++k) {
        Eigen::VectorXd tp = theta, tm = theta;
        tp(k) += step;
        tm(k) -= step;
        model.set_meta_flat(tp);
        const double lp = model.loss(x, y);
        model.set_meta_flat(tm);
        const double lm = model.loss(x, y);
        fd_theta(k) = (lp - lm) / (2.0 * step);
    }
    model.set_meta_flat(theta);

    Eigen::VectorXd c = model.inner();
    Eigen::VectorXd fd_c(c.size());
    for (int k = 0; k < c.size(); ++k) {
        Eigen::VectorXd cp = c, cm = c;
        cp(k) += step;
        cm(k) -= step;
        model.set_inner(cp);
        const double lp = model.loss(x, y);
        model.set_inner(cm);
        const double lm = model.loss(x, y);
        fd_c(k) = (lp - lm) / (2.0 * step);
    }
    model.set_inner(c);

    const double scale = fd_theta.norm() + fd_c.norm() + 1e-10;
    return ((analytic.grad_theta - fd_theta).norm() + (analytic.grad_c - fd_c).norm()) / scale;
}

inline std::vector<CheckResult> check_gradients() {
    std::vector<CheckResult> results;
    const char* names[3] = {"superposition", "bilinear", "deep"};
    for (int kind = 0; kind < 3; ++kind) {
        double worst = 0.0;
        for (int inst = 0; inst < 100; ++inst) {
            Rng rng(7000 + 100 * kind + inst);
            const int in_dim = 1 + static_cast<int>(rng.uniform01() * 3);
            const int d = 1 + static_cast<int>(rng.uniform01() * 2);
            std::unique_ptr<FunctionModel> model;
            if (kind == 0) {
                MatrixBasis y1 =
                    MatrixBasis::block_diagonal(in_dim, d, 3, 1.0, rng.derive("y1").seed());
                MatrixBasis y2 =
                    MatrixBasis::block_diagonal(in_dim, d, 2, 1.0, rng.derive("y2").seed());
                model = std::make_unique<SuperpositionModel>(std::move(y1), std::move(y2));
            } else if (kind == 1) {
                MatrixBasis y =
                    MatrixBasis::block_diagonal(in_dim, d, 3, 1.0, rng.derive("y").seed());
                model = std::make_unique<BilinearModel>(std::move(y), 3);
            } else {
                model = std::make_unique<DeepModel>(in_dim, d, 2, std::vector<int>{8, 6}, 2.0,
                                                    rng.derive("net").seed());
            }
            model->set_meta_flat(rng.normal_vector(model->meta_dim(), 0.5));
            model->set_inner(rng.normal_vector(model->inner_dim(), 0.8));
            const Eigen::VectorXd x = rng.normal_vector(in_dim);
            const Eigen::VectorXd y = rng.normal_vector(d);
            worst = std::max(worst, fd_relative_error(*model, x, y));
        }
        std::ostringstream det;
        det << "worst relative error " << worst;
        results.push_back(make_result(std::string("gradient-check-") + names[kind], worst < 1e-4,
                                      1e-4 - worst, det.str()));
    }
    return results;
}

// ---------------------------------------------------------------------------
// Spectral normalization against an exact SVD oracle.
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> check_spectral() {
    double worst_ratio = 0.0;
    bool unchanged_ok = true;
    for (int inst = 0; inst < 100; ++inst) {
        Rng rng(8000 + inst);
        const int rows = 3 + static_cast<int>(rng.uniform01() * 62);
        const int cols = 3 + static_cast<int>(rng.uniform01() * 62);
        const double scale = std::pow(10.0, rng.uniform(-1.0, 1.0));
        Eigen::MatrixXd w(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) w(r, c) = scale * rng.normal();
        const double bound = rng.uniform(0.5, 4.0);

        const Eigen::MatrixXd original = w;
        const double sigma_before = original.jacobiSvd().singularValues()(0);
        Eigen::VectorXd u = rng.unit_sphere(rows);
        spectral_scale_to_bound(w, u, bound);
        const double sigma_after = w.jacobiSvd().singularValues()(0);
        worst_ratio = std::max(worst_ratio, sigma_after / bound);
        if (sigma_before <= bound && w != original) unchanged_ok = false;
    }
    std::ostringstream det;
    det << "worst sigma/bound " << worst_ratio << ", below-bound layers untouched: "
        << (unchanged_ok ? "yes" : "no");
    std::vector<CheckResult> results;
    results.push_back(make_result("spectral-normalization", worst_ratio <= 1.001 && unchanged_ok,
                                  1.001 - worst_ratio, det.str()));
    return results;
}

// ---------------------------------------------------------------------------
// Kronecker identity Z vec(Theta) = Y Theta c.
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> check_kronecker() {
    double worst = 0.0;
    for (int inst = 0; inst < 100; ++inst) {
        Rng rng(9000 + inst);
        const int n = 1 + static_cast<int>(rng.uniform01() * 8);
        const int pbar = 1 + static_cast<int>(rng.uniform01() * 8);
        const int h = 1 + static_cast<int>(rng.uniform01() * 8);
        Eigen::MatrixXd Y(n, pbar), theta(pbar, h);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < pbar; ++c) Y(r, c) = rng.normal();
        for (int r = 0; r < pbar; ++r)
            for (int c = 0; c < h; ++c) theta(r, c) = rng.normal();
        const Eigen::VectorXd c = rng.normal_vector(h);

        const Eigen::MatrixXd Z = kronecker_row(c, Y);
        const Eigen::VectorXd theta_vec =
            Eigen::Map<const Eigen::VectorXd>(theta.data(), theta.size());
        worst = std::max(worst, (Z * theta_vec - Y * theta * c).lpNorm<Eigen::Infinity>());
    }
    std::ostringstream det;
    det << "worst |Z vec(Theta) - Y Theta c| = " << worst;
    std::vector<CheckResult> results;
    results.push_back(make_result("kronecker-identity", worst <= 1e-12, 1e-12 - worst, det.str()));
    return results;
}

}  // namespace checks

// Named suites: all | lemma1 | regret | ridge.
inline std::vector<CheckResult> run_check_suite(const std::string& suite) {
    std::vector<CheckResult> results;
    auto extend = [&results](const std::vector<CheckResult>& more) {
        results.insert(results.end(), more.begin(), more.end());
    };
    if (suite == "lemma1" || suite == "all") extend(checks::check_lemma1());
    if (suite == "regret" || suite == "all") {
        extend(checks::check_ogd_regret());
        extend(checks::check_nested_decomposition());
    }
    if (suite == "ridge" || suite == "all") extend(checks::check_ridge());
    if (suite == "all") {
        extend(checks::check_gradients());
        extend(checks::check_spectral());
        extend(checks::check_kronecker());
    }
    if (results.empty()) throw std::invalid_argument("unknown check suite: " + suite);
    return results;
}

inline bool print_check_ledger(const std::vector<CheckResult>& results, std::ostream& os) {
    bool all = true;
    for (const auto& r : results) {
        os << (r.pass ? "[PASS] " : "[FAIL] ") << r.name;
        if (!r.details.empty()) os << ": " << r.details;
        os << '\n';
        all = all && r.pass;
    }
    return all;
}

}  // namespace omac
