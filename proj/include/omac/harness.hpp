#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "omac/adapters.hpp"
#include "omac/controller.hpp"
#include "omac/core.hpp"
#include "omac/dynamics.hpp"
#include "omac/features.hpp"
#include "omac/models.hpp"
#include "omac/rng.hpp"

namespace omac {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Experiment configuration.
// ---------------------------------------------------------------------------

struct LearningConfig {
    double K_theta = 30.0;        // meta ball radius
    double K_c = 30.0;            // inner ball radius
    double inner_rate0 = 0.0;     // 0 => pilot estimate 2 K_c / G_pilot
    double pilot_margin = 1.5;    // G = margin * max observed gradient norm
    double meta_pilot_fraction = 0.15;  // first bilinear meta step, fraction of K_theta
    int latent_dim = 20;          // dim(c-hat)
    int meta_features = 200;      // p (convex Y1) and pbar (bilinear Y) per row
    double sigma = 0.0;           // RFF bandwidth; 0 => median heuristic on a pilot rollout
    double meta_rate0 = 0.0;      // bilinear-OGD meta rate; 0 => pilot heuristic
    double theta0_norm_scale = 0.5;  // ||Theta^(1)||_F = scale * K_theta for bilinear init
    std::vector<int> deep_hidden = {64, 64, 64};
    double spectral_bound = 2.0;
    double adam_step = 1e-3;
    int deep_replay_epochs = 5;
    double ridge_lambda = 1e-4;
    // convex-variant rates: pilot (shared inner rate, pilot-scaled meta),
    // corollary4 (both schedules from the Corollary-4 constants), or fixed
    // (the corollary4 rates frozen at their initial values)
    std::string convex_schedule = "pilot";
};

struct CheckToggles {
    bool lemma1 = true;
    bool regret = false;
    bool diversity = false;
};

struct ExperimentConfig {
    std::string plant_kind = "pendulum";  // pendulum | quadrotor | scalar
    PendulumParams pendulum;
    QuadrotorParams quadrotor;
    double scalar_a = 0.5;

    WindSchedule wind;
    DisturbanceSpec disturbance;
    int n_outer = 20;
    int n_inner = 0;  // 0 => dwell / dt
    std::vector<std::uint64_t> seeds;
    std::string output_dir = "out";
    bool fairness = true;
    LearningConfig learning;
    CheckToggles checks;
    std::vector<std::string> controllers = {"no-adapt",     "baseline",  "omac-convex",
                                            "omac-biconvex", "omac-deep", "omniscient"};

    double plant_dt() const {
        if (plant_kind == "pendulum") return pendulum.dt;
        if (plant_kind == "quadrotor") return quadrotor.dt;
        return 1.0;
    }

    int inner_steps() const {
        if (n_inner > 0) return n_inner;
        return wind.inner_steps(plant_dt());
    }

    void validate() const {
        if (plant_kind != "pendulum" && plant_kind != "quadrotor" && plant_kind != "scalar")
            throw std::invalid_argument("unknown plant kind: " + plant_kind);
        if (seeds.empty()) throw std::invalid_argument("no seeds configured");
        if (n_outer <= 0 || inner_steps() <= 0) throw std::invalid_argument("empty horizon");
        if (controllers.empty()) throw std::invalid_argument("no controllers configured");
        if (learning.convex_schedule != "pilot" && learning.convex_schedule != "corollary4" &&
            learning.convex_schedule != "fixed")
            throw std::invalid_argument("unknown convex_schedule: " + learning.convex_schedule);
        if (fairness && learning.convex_schedule != "pilot" && controllers.size() > 1)
            throw std::invalid_argument(
                "fairness requires the shared inner rate; use convex_schedule=pilot");
    }
};

inline json to_json(const ExperimentConfig& c) {
    json j;
    j["plant"]["kind"] = c.plant_kind;
    j["plant"]["pendulum"] = {{"m", c.pendulum.m},         {"l", c.pendulum.l},
                              {"g", c.pendulum.g},         {"g_hat", c.pendulum.g_hat},
                              {"alpha1", c.pendulum.alpha1}, {"alpha2", c.pendulum.alpha2},
                              {"dt", c.pendulum.dt}};
    j["plant"]["quadrotor"] = {
        {"m", c.quadrotor.m},
        {"J", {c.quadrotor.J(0, 0), c.quadrotor.J(1, 1), c.quadrotor.J(2, 2)}},
        {"drag",
         {c.quadrotor.drag_coeffs(0), c.quadrotor.drag_coeffs(1), c.quadrotor.drag_coeffs(2)}},
        {"dt", c.quadrotor.dt}};
    j["plant"]["scalar"] = {{"a", c.scalar_a}};
    const char* sampling = c.wind.sampling == WindSampling::FixedList ? "fixed-list"
                           : c.wind.sampling == WindSampling::AdversarialCallback
                               ? "adversarial-callback"
                               : "random-uniform-in-box";
    j["wind"] = {{"env_dim", c.wind.env_dim},
                 {"box_bound", c.wind.box_bound},
                 {"dwell_seconds", c.wind.dwell_seconds},
                 {"sampling", sampling}};
    if (!c.wind.fixed_list.empty()) {
        json list = json::array();
        for (const auto& v : c.wind.fixed_list)
            list.push_back(std::vector<double>(v.data(), v.data() + v.size()));
        j["wind"]["fixed_list"] = list;
    }
    const char* dkind = c.disturbance.kind == DisturbanceKind::Zero              ? "zero"
                        : c.disturbance.kind == DisturbanceKind::Constant        ? "constant"
                        : c.disturbance.kind == DisturbanceKind::SubGaussian     ? "sub-gaussian"
                                                                                 : "bounded-adversarial";
    j["disturbance"] = {{"kind", dkind}, {"W", c.disturbance.bound}, {"R", c.disturbance.sub_gaussian_R}};
    if (c.disturbance.kind == DisturbanceKind::Constant)
        j["disturbance"]["value"] = std::vector<double>(
            c.disturbance.constant_value.data(),
            c.disturbance.constant_value.data() + c.disturbance.constant_value.size());
    j["horizon"] = {{"N", c.n_outer}, {"T", c.n_inner}};
    j["seeds"] = c.seeds;
    j["output_dir"] = c.output_dir;
    j["fairness"] = c.fairness;
    j["learning"] = {{"K_theta", c.learning.K_theta},
                     {"K_c", c.learning.K_c},
                     {"inner_rate0", c.learning.inner_rate0},
                     {"pilot_margin", c.learning.pilot_margin},
                     {"meta_pilot_fraction", c.learning.meta_pilot_fraction},
                     {"latent_dim", c.learning.latent_dim},
                     {"meta_features", c.learning.meta_features},
                     {"sigma", c.learning.sigma},
                     {"meta_rate0", c.learning.meta_rate0},
                     {"theta0_norm_scale", c.learning.theta0_norm_scale},
                     {"deep_hidden", c.learning.deep_hidden},
                     {"spectral_bound", c.learning.spectral_bound},
                     {"adam_step", c.learning.adam_step},
                     {"deep_replay_epochs", c.learning.deep_replay_epochs},
                     {"ridge_lambda", c.learning.ridge_lambda},
                     {"convex_schedule", c.learning.convex_schedule}};
    j["checks"] = {{"lemma1", c.checks.lemma1},
                   {"regret", c.checks.regret},
                   {"diversity", c.checks.diversity}};
    j["controllers"] = c.controllers;
    return j;
}

inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    const json& plant = j.at("plant");
    c.plant_kind = plant.at("kind").get<std::string>();
    if (plant.contains("pendulum")) {
        const json& p = plant["pendulum"];
        c.pendulum.m = p.value("m", c.pendulum.m);
        c.pendulum.l = p.value("l", c.pendulum.l);
        c.pendulum.g = p.value("g", c.pendulum.g);
        c.pendulum.g_hat = p.value("g_hat", c.pendulum.g_hat);
        c.pendulum.alpha1 = p.value("alpha1", c.pendulum.alpha1);
        c.pendulum.alpha2 = p.value("alpha2", c.pendulum.alpha2);
        c.pendulum.dt = p.value("dt", c.pendulum.dt);
    }
    if (plant.contains("quadrotor")) {
        const json& q = plant["quadrotor"];
        c.quadrotor.m = q.value("m", c.quadrotor.m);
        if (q.contains("J")) {
            const auto J = q["J"].get<std::vector<double>>();
            c.quadrotor.J = Eigen::Vector3d(J.at(0), J.at(1), J.at(2)).asDiagonal();
        }
        if (q.contains("drag")) {
            const auto d = q["drag"].get<std::vector<double>>();
            c.quadrotor.drag_coeffs = Eigen::Vector3d(d.at(0), d.at(1), d.at(2));
        }
        c.quadrotor.dt = q.value("dt", c.quadrotor.dt);
    }
    if (plant.contains("scalar")) c.scalar_a = plant["scalar"].value("a", c.scalar_a);

    const json& wind = j.at("wind");
    c.wind.env_dim = wind.at("env_dim").get<int>();
    c.wind.box_bound = wind.value("box_bound", 0.0);
    c.wind.dwell_seconds = wind.value("dwell_seconds", 2.0);
    const std::string sampling = wind.value("sampling", "random-uniform-in-box");
    if (sampling == "fixed-list") c.wind.sampling = WindSampling::FixedList;
    else if (sampling == "adversarial-callback") c.wind.sampling = WindSampling::AdversarialCallback;
    else c.wind.sampling = WindSampling::RandomUniformInBox;
    if (wind.contains("fixed_list")) {
        for (const auto& row : wind["fixed_list"]) {
            const auto vals = row.get<std::vector<double>>();
            c.wind.fixed_list.push_back(
                Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size()));
        }
    }

    if (j.contains("disturbance")) {
        const json& d = j["disturbance"];
        const std::string kind = d.value("kind", "zero");
        if (kind == "zero") c.disturbance.kind = DisturbanceKind::Zero;
        else if (kind == "constant") c.disturbance.kind = DisturbanceKind::Constant;
        else if (kind == "sub-gaussian") c.disturbance.kind = DisturbanceKind::SubGaussian;
        else c.disturbance.kind = DisturbanceKind::BoundedAdversarial;
        c.disturbance.bound = d.value("W", 0.0);
        c.disturbance.sub_gaussian_R = d.value("R", 0.0);
        if (d.contains("value")) {
            const auto vals = d["value"].get<std::vector<double>>();
            c.disturbance.constant_value =
                Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size());
        }
    }

    c.n_outer = j.at("horizon").value("N", 20);
    c.n_inner = j.at("horizon").value("T", 0);
    c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.output_dir = j.value("output_dir", "out");
    c.fairness = j.value("fairness", true);
    if (j.contains("learning")) {
        const json& l = j["learning"];
        c.learning.K_theta = l.value("K_theta", c.learning.K_theta);
        c.learning.K_c = l.value("K_c", c.learning.K_c);
        c.learning.inner_rate0 = l.value("inner_rate0", c.learning.inner_rate0);
        c.learning.pilot_margin = l.value("pilot_margin", c.learning.pilot_margin);
        c.learning.meta_pilot_fraction =
            l.value("meta_pilot_fraction", c.learning.meta_pilot_fraction);
        c.learning.latent_dim = l.value("latent_dim", c.learning.latent_dim);
        c.learning.meta_features = l.value("meta_features", c.learning.meta_features);
        c.learning.sigma = l.value("sigma", c.learning.sigma);
        c.learning.meta_rate0 = l.value("meta_rate0", c.learning.meta_rate0);
        c.learning.theta0_norm_scale = l.value("theta0_norm_scale", c.learning.theta0_norm_scale);
        c.learning.deep_hidden = l.value("deep_hidden", c.learning.deep_hidden);
        c.learning.spectral_bound = l.value("spectral_bound", c.learning.spectral_bound);
        c.learning.adam_step = l.value("adam_step", c.learning.adam_step);
        c.learning.deep_replay_epochs = l.value("deep_replay_epochs", c.learning.deep_replay_epochs);
        c.learning.ridge_lambda = l.value("ridge_lambda", c.learning.ridge_lambda);
        c.learning.convex_schedule = l.value("convex_schedule", c.learning.convex_schedule);
    }
    if (j.contains("checks")) {
        c.checks.lemma1 = j["checks"].value("lemma1", true);
        c.checks.regret = j["checks"].value("regret", false);
        c.checks.diversity = j["checks"].value("diversity", false);
    }
    if (j.contains("controllers")) c.controllers = j["controllers"].get<std::vector<std::string>>();
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::invalid_argument("cannot open config file: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("config parse error: ") + e.what());
    }
    ExperimentConfig c = config_from_json(j);
    c.validate();
    return c;
}

// Reference benchmark configurations (the Table-5 style runs).
inline ExperimentConfig pendulum_benchmark_config() {
    ExperimentConfig c;
    c.plant_kind = "pendulum";
    c.wind.env_dim = 2;
    c.wind.box_bound = 4.0;
    c.wind.dwell_seconds = 2.0;
    c.n_outer = 20;
    c.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    c.output_dir = "out/pendulum";
    c.learning.latent_dim = 20;
    c.learning.meta_features = 200;
    c.learning.K_theta = 30.0;
    c.learning.K_c = 30.0;
    c.learning.pilot_margin = 3.0;
    c.learning.deep_replay_epochs = 3;
    return c;
}

inline ExperimentConfig quadrotor_benchmark_config() {
    ExperimentConfig c;
    c.plant_kind = "quadrotor";
    c.wind.env_dim = 3;
    c.wind.box_bound = 6.0;
    c.wind.dwell_seconds = 2.0;
    c.n_outer = 20;
    c.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    c.output_dir = "out/quadrotor";
    c.learning.latent_dim = 30;
    c.learning.meta_features = 300;
    c.learning.K_theta = 30.0;
    c.learning.K_c = 8.0;
    c.learning.pilot_margin = 12.0;
    return c;
}

// ---------------------------------------------------------------------------
// Benchmark report.
// ---------------------------------------------------------------------------

struct CheckResult {
    std::string name;
    bool pass = false;
    double margin = 0.0;  // how far inside the bound (positive = pass slack)
    std::string details;
};

struct IterationMetric {
    std::uint64_t seed = 0;
    std::string controller;
    int i = 0;
    double mean_pred_err = 0.0;
    double mean_ctrl_err = 0.0;
    std::optional<double> lambda_min;
};

struct RunResult {
    std::uint64_t seed = 0;
    std::string controller;
    bool diverged = false;
    std::string failure;
    double ace = 0.0;
    EpisodeLog log;
    std::vector<IterationMetric> metrics;
    std::uint64_t stream_hash = 0;  // wind + disturbance stream fingerprint
    std::vector<CheckResult> checks;
};

struct ControllerSummary {
    std::string name;
    double ace_mean = 0.0;
    double ace_std = 0.0;
    int completed_seeds = 0;
    int diverged_seeds = 0;
    std::vector<double> per_seed_ace;
};

struct BenchmarkReport {
    ExperimentConfig config;
    std::vector<RunResult> runs;  // ordered seed-major, controller-minor
    std::vector<ControllerSummary> summaries;
    std::vector<CheckResult> checks;

    const RunResult* find(std::uint64_t seed, const std::string& controller) const {
        for (const auto& r : runs)
            if (r.seed == seed && r.controller == controller) return &r;
        return nullptr;
    }
    const ControllerSummary& summary(const std::string& controller) const {
        for (const auto& s : summaries)
            if (s.name == controller) return s;
        throw std::out_of_range("no summary for controller " + controller);
    }
    bool all_checks_pass() const {
        for (const auto& c : checks)
            if (!c.pass) return false;
        return true;
    }
};

namespace detail {

inline std::uint64_t hash_doubles_init() { return 0xcbf29ce484222325ULL; }

inline void hash_double(std::uint64_t& h, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int b = 0; b < 8; ++b) {
        h ^= (bits >> (8 * b)) & 0xff;
        h *= 0x100000001b3ULL;
    }
}

inline void hash_vector(std::uint64_t& h, const Eigen::VectorXd& v) {
    for (int k = 0; k < v.size(); ++k) hash_double(h, v(k));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Controller stack construction.
// ---------------------------------------------------------------------------

struct PlantStack {
    std::unique_ptr<Plant> plant;
    std::unique_ptr<ControlLaw> law;
};

inline PlantStack build_plant(const ExperimentConfig& cfg) {
    PlantStack s;
    if (cfg.plant_kind == "pendulum") {
        const Eigen::RowVector2d K = PendulumLaw::lqr_gain(cfg.pendulum);
        auto plant = std::make_unique<PendulumPlant>(cfg.pendulum, K);
        s.law = std::make_unique<PendulumLaw>(*plant);
        s.plant = std::move(plant);
    } else if (cfg.plant_kind == "quadrotor") {
        auto plant = std::make_unique<QuadrotorPlant>(cfg.quadrotor);
        s.law = std::make_unique<CascadedQuadController>(*plant, CascadedQuadController::Gains{});
        s.plant = std::move(plant);
    } else {
        auto plant = std::make_unique<GenericPlant>(scalar_plant_spec(cfg.scalar_a, cfg.wind.env_dim));
        s.law = std::make_unique<PseudoInverseLaw>(*plant);
        s.plant = std::move(plant);
    }
    return s;
}

// Seed-derived quantities shared by every controller of one seed: the wind
// sequence, the RFF bandwidth, and the pilot gradient bound. All are
// functions of (config, seed) only, which is what makes runs paired.
struct SeedSharedState {
    std::vector<Eigen::VectorXd> wind;
    double sigma = 1.0;
    double inner_rate0 = 0.0;
    double meta_rate0 = 0.0;         // bilinear-OGD meta
    double convex_meta_rate0 = 0.0;  // superposition meta
    Eigen::MatrixXd bilinear_theta0;
};

inline Eigen::MatrixXd sample_bilinear_theta0(int pbar, int h, double norm, Rng rng) {
    Eigen::MatrixXd theta(pbar, h);
    for (int r = 0; r < pbar; ++r)
        for (int c = 0; c < h; ++c) theta(r, c) = rng.normal();
    const double n = theta.norm();
    if (n > 1e-12) theta *= norm / n;
    return theta;
}

inline SeedSharedState make_seed_shared(const ExperimentConfig& cfg, std::uint64_t seed) {
    SeedSharedState shared;
    WindSchedule schedule = cfg.wind;
    schedule.count = cfg.n_outer;
    shared.wind = wind_sequence(schedule, seed);

    const PlantStack stack = build_plant(cfg);
    const Plant& plant = *stack.plant;
    const int T = cfg.inner_steps();
    const int d = plant.target_dim();

    // pilot rollouts across the first few wind conditions, one uncompensated
    // (f_hat = 0) pass and one omniscient pass, so the state cloud spans both
    // the excursion and the regulated regime under representative winds; the
    // uncompensated targets feed the gradient bounds, the union cloud feeds
    // the bandwidth median heuristic
    std::vector<Eigen::VectorXd> zs, ys, cloud;
    const int pilot_conditions = std::min<int>(6, static_cast<int>(shared.wind.size()));
    for (const bool compensate : {false, true}) {
        Eigen::VectorXd x = plant.initial_state();
        Rng prng = Rng(seed).derive("pilot-disturbance");
        for (int k = 0; k < pilot_conditions; ++k) {
            for (int t = 1; t <= T; ++t) {
                const Eigen::VectorXd z = plant.feature_input(x);
                const Eigen::VectorXd f = plant.f_true(x, shared.wind[k]);
                const Eigen::VectorXd u =
                    stack.law->control(x, compensate ? f : Eigen::VectorXd::Zero(d));
                const Eigen::VectorXd w = cfg.disturbance.sample(prng, d);
                if (!compensate) {
                    zs.push_back(z);
                    ys.push_back(f - w);
                }
                cloud.push_back(z);
                x = plant.step(x, u, shared.wind[k], w).x_next;
            }
        }
    }

    std::vector<Eigen::VectorXd> pilot_sample;
    const std::size_t stride = std::max<std::size_t>(1, cloud.size() / 96);
    for (std::size_t k = 0; k < cloud.size(); k += stride) pilot_sample.push_back(cloud[k]);
    shared.sigma = cfg.learning.sigma > 0.0 ? cfg.learning.sigma
                                            : median_heuristic_sigma(pilot_sample);

    // inner-rate heuristic: Lemma-4 schedule D/G. The rate is shared by every
    // method, so G is the max inner-gradient norm at c = 0 across the three
    // model wirings on the pilot data.
    shared.bilinear_theta0 = sample_bilinear_theta0(
        cfg.learning.meta_features, cfg.learning.latent_dim,
        cfg.learning.theta0_norm_scale * cfg.learning.K_theta, Rng(seed).derive("bilinear-theta0"));
    MatrixBasis Y = MatrixBasis::block_diagonal(plant.feature_dim(), d,
                                                cfg.learning.meta_features / d, shared.sigma,
                                                Rng(seed).derive("basis-bilinear").seed());
    MatrixBasis Y2 = MatrixBasis::block_diagonal(plant.feature_dim(), d,
                                                 cfg.learning.latent_dim / d, shared.sigma,
                                                 Rng(seed).derive("basis-Y2").seed());
    const DeepModel deep(plant.feature_dim(), d, cfg.learning.latent_dim, cfg.learning.deep_hidden,
                         cfg.learning.spectral_bound, Rng(seed).derive("deep-init").seed());
    double g_max = 1e-9;
    for (std::size_t k = 0; k < zs.size(); ++k) {
        const Eigen::MatrixXd Yx = Y.eval(zs[k]);
        g_max = std::max(g_max, (2.0 * (Yx * shared.bilinear_theta0).transpose() * ys[k]).norm());
        g_max = std::max(g_max, (2.0 * Y2.eval(zs[k]).transpose() * ys[k]).norm());
        g_max = std::max(g_max, (2.0 * deep.phi(zs[k]).transpose() * ys[k]).norm());
    }
    const double G_pilot = cfg.learning.pilot_margin * g_max;
    shared.inner_rate0 = cfg.learning.inner_rate0 > 0.0 ? cfg.learning.inner_rate0
                                                        : 2.0 * cfg.learning.K_c / G_pilot;

    // meta-rate heuristic: replay the pilot data through the baseline inner
    // adapter and size the first meta step to a fixed fraction of the ball
    if (cfg.learning.meta_rate0 > 0.0) {
        shared.meta_rate0 = cfg.learning.meta_rate0;
    } else {
        double g_meta = 1e-9;
        for (int k = 0; k < pilot_conditions; ++k) {
            OgdAdapter inner(cfg.learning.K_c, shared.inner_rate0, OgdScheduleKind::InverseSqrt);
            Eigen::VectorXd c_hat = Eigen::VectorXd::Zero(cfg.learning.latent_dim);
            Eigen::MatrixXd meta_grad =
                Eigen::MatrixXd::Zero(cfg.learning.meta_features, cfg.learning.latent_dim);
            for (int t = 0; t < T; ++t) {
                const std::size_t idx = static_cast<std::size_t>(k) * T + t;
                const Eigen::MatrixXd Yx = Y.eval(zs[idx]);
                const Eigen::VectorXd r = Yx * (shared.bilinear_theta0 * c_hat) - ys[idx];
                meta_grad.noalias() += 2.0 * Yx.transpose() * r * c_hat.transpose();
                const Eigen::VectorXd g_c = 2.0 * (Yx * shared.bilinear_theta0).transpose() * r;
                c_hat = inner.step(c_hat, g_c);
            }
            g_meta = std::max(g_meta, meta_grad.norm());
        }
        shared.meta_rate0 = cfg.learning.meta_pilot_fraction * cfg.learning.K_theta / g_meta;
    }

    // same pilot replay for the superposition meta gradient
    {
        MatrixBasis Y1 = MatrixBasis::block_diagonal(plant.feature_dim(), d,
                                                     cfg.learning.meta_features / d, shared.sigma,
                                                     Rng(seed).derive("basis-Y1").seed());
        MatrixBasis Y2 = MatrixBasis::block_diagonal(plant.feature_dim(), d,
                                                     cfg.learning.latent_dim / d, shared.sigma,
                                                     Rng(seed).derive("basis-Y2").seed());
        double g_meta = 1e-9;
        for (int k = 0; k < pilot_conditions; ++k) {
            OgdAdapter inner(cfg.learning.K_c, shared.inner_rate0, OgdScheduleKind::InverseSqrt);
            Eigen::VectorXd c_hat = Eigen::VectorXd::Zero(cfg.learning.latent_dim);
            Eigen::VectorXd meta_grad = Eigen::VectorXd::Zero(cfg.learning.meta_features);
            for (int t = 0; t < T; ++t) {
                const std::size_t idx = static_cast<std::size_t>(k) * T + t;
                const Eigen::MatrixXd Y2x = Y2.eval(zs[idx]);
                const Eigen::VectorXd r = Y2x * c_hat - ys[idx];  // Theta^(1) = 0
                meta_grad.noalias() += 2.0 * Y1.eval(zs[idx]).transpose() * r;
                c_hat = inner.step(c_hat, 2.0 * Y2x.transpose() * r);
            }
            g_meta = std::max(g_meta, meta_grad.norm());
        }
        shared.convex_meta_rate0 =
            cfg.learning.meta_pilot_fraction * cfg.learning.K_theta / g_meta;
    }
    return shared;
}

inline std::unique_ptr<Controller> build_controller(const ExperimentConfig& cfg,
                                                    const Plant& plant,
                                                    const SeedSharedState& shared,
                                                    const std::string& name, std::uint64_t seed) {
    const auto& lc = cfg.learning;
    const int d = plant.target_dim();
    const int in_dim = plant.feature_dim();
    const int h = lc.latent_dim;
    const int T = cfg.inner_steps();

    if (name == "no-adapt") return std::make_unique<NoAdaptController>(d);
    if (name == "omniscient") return std::make_unique<OmniscientController>();

    const OgdAdapter inner(lc.K_c, shared.inner_rate0, OgdScheduleKind::InverseSqrt);

    if (name == "omac-convex") {
        MatrixBasis Y1 = MatrixBasis::block_diagonal(in_dim, d, lc.meta_features / d, shared.sigma,
                                                     Rng(seed).derive("basis-Y1").seed());
        MatrixBasis Y2 = MatrixBasis::block_diagonal(in_dim, d, h / d, shared.sigma,
                                                     Rng(seed).derive("basis-Y2").seed());
        ScheduleConstants k;
        k.K1 = Y1.bound_constant();
        k.K2 = Y2.bound_constant();
        k.K_theta = lc.K_theta;
        k.K_c = lc.K_c;
        k.W = cfg.disturbance.bound;
        auto model = std::make_unique<SuperpositionModel>(std::move(Y1), std::move(Y2));
        OmacOptions opt;
        opt.variant = OmacVariant::Convex;
        OgdAdapter inner_used = inner;
        OgdAdapter meta_used(lc.K_theta, shared.convex_meta_rate0, OgdScheduleKind::InverseSqrt,
                             2.0 * lc.meta_pilot_fraction * lc.K_theta);
        if (lc.convex_schedule == "corollary4") {
            inner_used = corollary4_inner_adapter(k);
            meta_used = corollary4_meta_adapter(k, T);
        } else if (lc.convex_schedule == "fixed") {
            inner_used = OgdAdapter(k.K_c, corollary4_inner_adapter(k).rate0(),
                                    OgdScheduleKind::Fixed);
            meta_used = OgdAdapter(k.K_theta, corollary4_meta_adapter(k, T).rate0(),
                                   OgdScheduleKind::Fixed);
        }
        return std::make_unique<OmacController>(std::move(model), inner_used, meta_used, opt);
    }

    if (name == "baseline" || name == "omac-biconvex" || name == "omac-bilinear-ridge") {
        MatrixBasis Y = MatrixBasis::block_diagonal(in_dim, d, lc.meta_features / d, shared.sigma,
                                                    Rng(seed).derive("basis-bilinear").seed());
        auto model = std::make_unique<BilinearModel>(std::move(Y), h);
        model->set_theta(shared.bilinear_theta0);
        OmacOptions opt;
        opt.variant = name == "omac-bilinear-ridge" ? OmacVariant::BilinearRidge
                                                    : OmacVariant::BilinearOgd;
        opt.freeze_meta = name == "baseline";
        OgdAdapter meta(lc.K_theta, shared.meta_rate0, OgdScheduleKind::InverseSqrt,
                        2.0 * lc.meta_pilot_fraction * lc.K_theta);
        auto ctrl = std::make_unique<OmacController>(std::move(model), inner, meta, opt);
        if (opt.variant == OmacVariant::BilinearRidge)
            ctrl->set_ridge(RidgeMetaAdapter(lc.ridge_lambda, lc.meta_features, h));
        return ctrl;
    }

    if (name == "omac-deep") {
        auto model = std::make_unique<DeepModel>(in_dim, d, h, lc.deep_hidden, lc.spectral_bound,
                                                 Rng(seed).derive("deep-init").seed());
        OmacOptions opt;
        opt.variant = OmacVariant::Deep;
        opt.deep_replay_epochs = lc.deep_replay_epochs;
        auto ctrl = std::make_unique<OmacController>(std::move(model), inner, OgdAdapter(), opt);
        ctrl->set_adam(AdamState(lc.adam_step));
        return ctrl;
    }

    throw std::invalid_argument("unknown controller: " + name);
}

// ---------------------------------------------------------------------------
// Benchmark runner.
// ---------------------------------------------------------------------------

inline RunResult run_single(const ExperimentConfig& cfg, std::uint64_t seed,
                            const std::string& controller_name,
                            const SeedSharedState& shared) {
    RunResult result;
    result.seed = seed;
    result.controller = controller_name;

    const PlantStack stack = build_plant(cfg);
    const Plant& plant = *stack.plant;
    const int T = cfg.inner_steps();
    const int N = cfg.n_outer;

    auto controller = build_controller(cfg, plant, shared, controller_name, seed);
    EpisodeLog log(N, T);
    Eigen::VectorXd x = plant.initial_state();
    Rng disturbance_rng = Rng(seed).derive("disturbance");

    std::uint64_t stream_hash = detail::hash_doubles_init();
    for (const auto& c : shared.wind) detail::hash_vector(stream_hash, c);

    try {
        for (int i = 1; i <= N; ++i) {
            // pre-draw the disturbance stream for this episode; it depends on
            // (config, seed) only, so its hash must match across controllers
            std::vector<Eigen::VectorXd> ws(T);
            for (int t = 0; t < T; ++t) {
                ws[t] = cfg.disturbance.sample(disturbance_rng, plant.target_dim());
                detail::hash_vector(stream_hash, ws[t]);
            }
            std::size_t cursor = 0;

            controller->begin_episode();
            const Eigen::VectorXd& c = shared.wind[i - 1];
            for (int t = 1; t <= T; ++t) {
                const Eigen::VectorXd z = plant.feature_input(x);
                const Eigen::VectorXd f = plant.f_true(x, c);
                const Eigen::VectorXd f_hat = controller->predict(z, f);
                const Eigen::VectorXd u = stack.law->control(x, f_hat);
                const Eigen::VectorXd& w = ws[cursor++];
                StepOutcome outcome;
                try {
                    outcome = plant.step(x, u, c, w);
                } catch (const StateDiverged&) {
                    throw StateDiverged(i, t);
                }
                log.append(StepRecord::make(i, t, plant.logged_state(x), u, f, f_hat, w,
                                            outcome.residual));
                controller->observe(z, f - w);
                x = outcome.x_next;
            }
            controller->end_episode(controller->wants_env()
                                        ? std::optional<Eigen::VectorXd>(c)
                                        : std::nullopt);

            IterationMetric m;
            m.seed = seed;
            m.controller = controller_name;
            m.i = i;
            double pred = 0.0, ctrl_err = 0.0;
            const auto& steps = log.steps();
            for (std::size_t k = steps.size() - T; k < steps.size(); ++k) {
                pred += (steps[k].f_hat - steps[k].f_true).norm();
                ctrl_err += steps[k].x.norm();
            }
            m.mean_pred_err = pred / T;
            m.mean_ctrl_err = ctrl_err / T;
            if (const auto* omac = dynamic_cast<const OmacController*>(controller.get()))
                if (omac->ridge()) m.lambda_min = omac->ridge()->diversity_lambda_min();
            result.metrics.push_back(std::move(m));
        }
    } catch (const StateDiverged& e) {
        result.diverged = true;
        result.failure = e.what();
    } catch (const std::runtime_error& e) {
        result.diverged = true;
        result.failure = e.what();
    }

    result.stream_hash = stream_hash;
    result.log = std::move(log);
    if (!result.diverged && !result.log.empty()) result.ace = ace(result.log);

    if (!result.diverged && cfg.checks.lemma1 && plant.has_eiss_nominal()) {
        const EissConstants k = estimate_eiss_constants(plant.eiss_nominal_matrix());
        const double bound = lemma1_bound(result.log, k);
        CheckResult chk;
        chk.name = "lemma1:" + controller_name + ":seed" + std::to_string(seed);
        chk.pass = result.ace <= bound;
        chk.margin = bound - result.ace;
        std::ostringstream det;
        det << "ace=" << result.ace << " bound=" << bound << " rho=" << k.rho
            << " gamma=" << k.gamma;
        chk.details = det.str();
        result.checks.push_back(std::move(chk));
    }
    return result;
}

inline int worker_count(std::size_t tasks) {
    if (const char* env = std::getenv("OMAC_WORKERS")) {
        const int n = std::atoi(env);
        if (n > 0) return static_cast<int>(std::min<std::size_t>(n, tasks));
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::min<std::size_t>(hw == 0 ? 1 : hw, tasks));
}

inline BenchmarkReport run_benchmark(const ExperimentConfig& cfg) {
    cfg.validate();
    BenchmarkReport report;
    report.config = cfg;

    struct Task {
        std::uint64_t seed;
        std::string controller;
        const SeedSharedState* shared;
    };

    // shared per-seed state first (wind sequences, pilot constants)
    std::map<std::uint64_t, SeedSharedState> shared_by_seed;
    for (std::uint64_t seed : cfg.seeds)
        if (!shared_by_seed.count(seed)) shared_by_seed.emplace(seed, make_seed_shared(cfg, seed));

    std::vector<Task> tasks;
    for (std::uint64_t seed : cfg.seeds)
        for (const auto& ctrl : cfg.controllers)
            tasks.push_back({seed, ctrl, &shared_by_seed.at(seed)});

    report.runs.resize(tasks.size());
    std::atomic<std::size_t> next{0};
    const int workers = worker_count(tasks.size());
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::vector<std::exception_ptr> errors(workers);
    for (int wi = 0; wi < workers; ++wi) {
        pool.emplace_back([&, wi] {
            try {
                while (true) {
                    const std::size_t k = next.fetch_add(1);
                    if (k >= tasks.size()) break;
                    report.runs[k] =
                        run_single(cfg, tasks[k].seed, tasks[k].controller, *tasks[k].shared);
                }
            } catch (...) {
                errors[wi] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    // paired-stream invariant: identical wind/disturbance stream per seed
    for (std::uint64_t seed : cfg.seeds) {
        std::uint64_t reference = 0;
        bool first = true, ok = true;
        for (const auto& run : report.runs) {
            if (run.seed != seed) continue;
            if (first) {
                reference = run.stream_hash;
                first = false;
            } else if (run.stream_hash != reference) {
                ok = false;
            }
        }
        CheckResult chk;
        chk.name = "paired-streams:seed" + std::to_string(seed);
        chk.pass = ok;
        chk.margin = ok ? 0.0 : -1.0;
        report.checks.push_back(std::move(chk));
    }
    for (const auto& run : report.runs)
        report.checks.insert(report.checks.end(), run.checks.begin(), run.checks.end());

    // aggregate ACE across seeds, sample std with n-1 denominator
    for (const auto& name : cfg.controllers) {
        ControllerSummary s;
        s.name = name;
        for (const auto& run : report.runs) {
            if (run.controller != name) continue;
            if (run.diverged) {
                ++s.diverged_seeds;
                continue;
            }
            s.per_seed_ace.push_back(run.ace);
        }
        s.completed_seeds = static_cast<int>(s.per_seed_ace.size());
        if (s.completed_seeds > 0) {
            double sum = 0.0;
            for (double a : s.per_seed_ace) sum += a;
            s.ace_mean = sum / s.completed_seeds;
            if (s.completed_seeds > 1) {
                double sq = 0.0;
                for (double a : s.per_seed_ace) sq += (a - s.ace_mean) * (a - s.ace_mean);
                s.ace_std = std::sqrt(sq / (s.completed_seeds - 1));
            }
        }
        report.summaries.push_back(std::move(s));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Persistence and export.
// ---------------------------------------------------------------------------

inline std::string run_log_filename(std::uint64_t seed, const std::string& controller) {
    return "seed" + std::to_string(seed) + "_" + controller + ".csv";
}

inline void write_report(const BenchmarkReport& report, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "logs");

    for (const auto& run : report.runs) {
        if (run.log.empty()) continue;
        std::ofstream os(fs::path(out_dir) / "logs" / run_log_filename(run.seed, run.controller));
        run.log.write_csv(os);
    }

    // per-seed metrics CSV: i,controller,mean_pred_err,mean_ctrl_err,lambda_min
    for (std::uint64_t seed : report.config.seeds) {
        std::ofstream os(fs::path(out_dir) / ("metrics_seed" + std::to_string(seed) + ".csv"));
        os << "i,controller,mean_pred_err,mean_ctrl_err,lambda_min\n";
        for (const auto& run : report.runs) {
            if (run.seed != seed) continue;
            for (const auto& m : run.metrics) {
                os << m.i << ',' << m.controller << ',' << detail::format_double(m.mean_pred_err)
                   << ',' << detail::format_double(m.mean_ctrl_err) << ',';
                if (m.lambda_min) os << detail::format_double(*m.lambda_min);
                os << '\n';
            }
        }
    }

    json summary;
    summary["config"] = to_json(report.config);
    summary["controllers"] = json::array();
    for (const auto& s : report.summaries) {
        summary["controllers"].push_back({{"name", s.name},
                                          {"ace_mean", s.ace_mean},
                                          {"ace_std", s.ace_std},
                                          {"completed_seeds", s.completed_seeds},
                                          {"diverged_seeds", s.diverged_seeds},
                                          {"per_seed_ace", s.per_seed_ace}});
    }
    summary["checks"] = json::array();
    for (const auto& c : report.checks)
        summary["checks"].push_back(
            {{"name", c.name}, {"pass", c.pass}, {"margin", c.margin}, {"details", c.details}});
    summary["runs"] = json::array();
    for (const auto& run : report.runs)
        summary["runs"].push_back({{"seed", run.seed},
                                   {"controller", run.controller},
                                   {"diverged", run.diverged},
                                   {"failure", run.failure},
                                   {"ace", run.ace},
                                   {"log", "logs/" + run_log_filename(run.seed, run.controller)}});
    std::ofstream os(fs::path(out_dir) / "summary.json");
    os << summary.dump(2) << '\n';
}

// Long-format plot data (controller,seed,i,metric,value) recomputed from the
// persisted episode logs, sufficient to regenerate the error-evolution
// curves externally.
inline void export_plot_data(const std::string& report_dir, const std::string& out_path) {
    namespace fs = std::filesystem;
    std::ifstream sfile(fs::path(report_dir) / "summary.json");
    if (!sfile) throw std::invalid_argument("no summary.json under " + report_dir);
    json summary;
    sfile >> summary;

    std::ofstream os(out_path);
    os << "controller,seed,i,metric,value\n";
    for (const auto& run : summary.at("runs")) {
        if (run.at("diverged").get<bool>()) continue;
        std::ifstream lfile(fs::path(report_dir) / run.at("log").get<std::string>());
        if (!lfile) throw std::runtime_error("missing log file for run");
        const EpisodeLog log = EpisodeLog::read_csv(lfile);
        const std::string controller = run.at("controller").get<std::string>();
        const std::uint64_t seed = run.at("seed").get<std::uint64_t>();

        std::map<int, std::pair<double, int>> ctrl_acc, pred_acc;
        for (const auto& s : log.steps()) {
            auto& ca = ctrl_acc[s.i];
            ca.first += s.x.norm();
            ca.second += 1;
            auto& pa = pred_acc[s.i];
            pa.first += (s.f_hat - s.f_true).norm();
            pa.second += 1;
        }
        for (const auto& [i, acc] : ctrl_acc)
            os << controller << ',' << seed << ',' << i << ",control_error,"
               << detail::format_double(acc.first / acc.second) << '\n';
        for (const auto& [i, acc] : pred_acc)
            os << controller << ',' << seed << ',' << i << ",prediction_error,"
               << detail::format_double(acc.first / acc.second) << '\n';
    }
}

}  // namespace omac
