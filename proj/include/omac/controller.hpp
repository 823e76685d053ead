#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "omac/adapters.hpp"
#include "omac/core.hpp"
#include "omac/dynamics.hpp"
#include "omac/models.hpp"

namespace omac {

// Stabilizing gain for x+ = A x + B u by discrete LQR (fixed-point Riccati).
inline Eigen::MatrixXd dare_gain(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B,
                                 const Eigen::MatrixXd& Q, const Eigen::MatrixXd& R) {
    Eigen::MatrixXd P = Q;
    for (int iter = 0; iter < 100000; ++iter) {
        const Eigen::MatrixXd K =
            (R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
        const Eigen::MatrixXd P_next = Q + A.transpose() * P * (A - B * K);
        const double delta = (P_next - P).cwiseAbs().maxCoeff();
        P = P_next;
        if (delta < 1e-13 * std::max(1.0, P.cwiseAbs().maxCoeff())) break;
    }
    return (R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
}

// ---------------------------------------------------------------------------
// Certainty-equivalence control laws.
// ---------------------------------------------------------------------------

class ControlLaw {
public:
    virtual ~ControlLaw() = default;
    virtual Eigen::VectorXd control(const Eigen::VectorXd& x, const Eigen::VectorXd& f_hat) const = 0;
};

// u = B(x)^+ f_hat for fully actuated plants.
class PseudoInverseLaw final : public ControlLaw {
public:
    explicit PseudoInverseLaw(const GenericPlant& plant) : plant_(plant) {}

    Eigen::VectorXd control(const Eigen::VectorXd& x, const Eigen::VectorXd& f_hat) const override {
        if (!f_hat.allFinite()) throw std::invalid_argument("non-finite prediction");
        const Eigen::MatrixXd B = plant_.spec().B(x);
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(B);
        if (plant_.form() == PlantForm::FullActuation && cod.rank() < B.rows())
            throw std::runtime_error("actuation assumption violated");
        return cod.solve(f_hat);
    }

private:
    const GenericPlant& plant_;
};

// u = -K x - m l g_hat sin(theta) - f_hat.
class PendulumLaw final : public ControlLaw {
public:
    explicit PendulumLaw(const PendulumPlant& plant) : plant_(plant) {}

    static Eigen::RowVector2d lqr_gain(const PendulumParams& p) {
        Eigen::Matrix2d A;
        A << 1.0, p.dt, 0.0, 1.0;
        Eigen::Vector2d B(0.0, p.dt / (p.m * p.l * p.l));
        const Eigen::MatrixXd K =
            dare_gain(A, B, Eigen::Matrix2d::Identity(), Eigen::MatrixXd::Identity(1, 1));
        return Eigen::RowVector2d(K(0, 0), K(0, 1));
    }

    Eigen::VectorXd control(const Eigen::VectorXd& x, const Eigen::VectorXd& f_hat) const override {
        const auto& p = plant_.params();
        const double u = -plant_.gain() * x - p.m * p.l * p.g_hat * std::sin(x(0)) - f_hat(0);
        return Eigen::VectorXd::Constant(1, u);
    }

private:
    const PendulumPlant& plant_;
};

// Cascaded position/attitude controller. The learned force enters the
// position loop, f_d = -m g - m (K_P p + K_D v) - f_hat; a kinematic module
// decomposes f_d into (R_d, T_d) with R_d [0,0,T_d]^T = f_d, and a PD loop on
// the rotation error tracks R_d.
class CascadedQuadController final : public ControlLaw {
public:
    struct Gains {
        Eigen::Matrix3d K_P = 4.0 * Eigen::Matrix3d::Identity();
        Eigen::Matrix3d K_D = 2.8 * Eigen::Matrix3d::Identity();
        double k_R = 2.0;
        double k_omega = 0.4;
        double max_thrust = 1e9;
    };

    CascadedQuadController(const QuadrotorPlant& plant, Gains gains)
        : plant_(plant), gains_(gains) {}

    struct Decomposition {
        Eigen::Matrix3d R_d;
        double thrust = 0.0;
    };

    static Decomposition decompose_desired_force(const Eigen::Vector3d& f_d) {
        Decomposition d;
        d.thrust = f_d.norm();
        Eigen::Vector3d z_d(0.0, 0.0, 1.0);
        if (d.thrust > 1e-12) z_d = f_d / d.thrust;
        Eigen::Vector3d x_c(1.0, 0.0, 0.0);
        if (std::abs(z_d.dot(x_c)) > 0.999) x_c = Eigen::Vector3d(0.0, 1.0, 0.0);
        const Eigen::Vector3d y_d = z_d.cross(x_c).normalized();
        const Eigen::Vector3d x_d = y_d.cross(z_d);
        d.R_d.col(0) = x_d;
        d.R_d.col(1) = y_d;
        d.R_d.col(2) = z_d;
        return d;
    }

    Eigen::VectorXd control(const Eigen::VectorXd& x, const Eigen::VectorXd& f_hat) const override {
        const QuadState s = QuadState::unflatten(x);
        const auto& p = plant_.params();
        const Eigen::Vector3d f_d =
            -p.m * p.g - p.m * (gains_.K_P * s.p + gains_.K_D * s.v) - Eigen::Vector3d(f_hat);
        const Decomposition d = decompose_desired_force(f_d);

        // thrust along the current body z, clamped nonnegative
        double thrust = f_d.dot(s.R.col(2));
        thrust = std::clamp(thrust, 0.0, gains_.max_thrust);

        const Eigen::Vector3d e_R = 0.5 * vee(d.R_d.transpose() * s.R - s.R.transpose() * d.R_d);
        const Eigen::Vector3d e_omega = s.omega;
        const Eigen::Vector3d tau =
            -gains_.k_R * e_R - gains_.k_omega * e_omega - (p.J * s.omega).cross(s.omega);

        Eigen::VectorXd u(4);
        u(0) = thrust;
        u.segment<3>(1) = tau;
        return u;
    }

    const Gains& gains() const { return gains_; }

private:
    const QuadrotorPlant& plant_;
    Gains gains_;
};

// ---------------------------------------------------------------------------
// Controllers (the f_hat producers of Algorithm 1).
// ---------------------------------------------------------------------------

class Controller {
public:
    virtual ~Controller() = default;
    virtual std::string name() const = 0;

    // f_hat at the current feature input. f_true is consumed only by the
    // omniscient baseline.
    virtual Eigen::VectorXd predict(const Eigen::VectorXd& z, const Eigen::VectorXd& f_true) = 0;
    virtual void observe(const Eigen::VectorXd& /*z*/, const Eigen::VectorXd& /*y*/) {}
    virtual void begin_episode() {}
    virtual void end_episode(const std::optional<Eigen::VectorXd>& /*c_observed*/) {}
    virtual bool wants_env() const { return false; }
};

class NoAdaptController final : public Controller {
public:
    explicit NoAdaptController(int target_dim) : dim_(target_dim) {}
    std::string name() const override { return "no-adapt"; }
    Eigen::VectorXd predict(const Eigen::VectorXd&, const Eigen::VectorXd&) override {
        return Eigen::VectorXd::Zero(dim_);
    }

private:
    int dim_;
};

class OmniscientController final : public Controller {
public:
    std::string name() const override { return "omniscient"; }
    Eigen::VectorXd predict(const Eigen::VectorXd&, const Eigen::VectorXd& f_true) override {
        return f_true;
    }
};

enum class OmacVariant { Convex, ElementWise, BilinearRidge, BilinearOgd, Deep };
enum class InnerReset { Zero, CarryOver, CenterOfBall };

inline bool variant_observes_env(OmacVariant v) {
    return v == OmacVariant::ElementWise || v == OmacVariant::BilinearRidge;
}

// Per-run trace used by the regret / concentration checks.
struct OmacTrace {
    struct Episode {
        std::vector<Eigen::VectorXd> inner_grads;     // grad of ell w.r.t. c at the iterate
        std::vector<Eigen::VectorXd> inner_iterates;  // c_t before the OGD step
        std::vector<double> losses;                   // ell(Theta^(i), c_t)
        Eigen::VectorXd meta_grad;                    // grad of G^(i) at Theta^(i)
        Eigen::VectorXd meta_iterate;                 // Theta^(i) (flattened)
    };
    std::vector<Episode> episodes;
};

struct OmacOptions {
    OmacVariant variant = OmacVariant::Convex;
    InnerReset reset = InnerReset::Zero;
    int deep_replay_epochs = 5;
    bool freeze_meta = false;  // baseline-adaptive: Theta stays at Theta^(1)
    bool record_trace = false;
    std::string display_name;
};

// Algorithm-1 orchestration: certainty-equivalence prediction, per-step inner
// adaptation of c, per-episode meta adaptation of Theta according to the
// configured variant.
class OmacController final : public Controller {
public:
    OmacController(std::unique_ptr<FunctionModel> model, OgdAdapter inner, OgdAdapter meta_ogd,
                   OmacOptions opt)
        : model_(std::move(model)), inner_(inner), meta_ogd_(meta_ogd), opt_(opt) {
        if (opt_.variant == OmacVariant::BilinearRidge || opt_.variant == OmacVariant::BilinearOgd) {
            if (model_->kind() != "bilinear")
                throw std::invalid_argument("bilinear variants require a bilinear model");
        }
        if (opt_.variant == OmacVariant::Deep && model_->kind() != "deep")
            throw std::invalid_argument("deep variant requires a deep model");
    }

    void set_ridge(RidgeMetaAdapter ridge) { ridge_.emplace(std::move(ridge)); }
    void set_adam(AdamState adam) { adam_ = adam; }

    std::string name() const override {
        if (!opt_.display_name.empty()) return opt_.display_name;
        if (opt_.freeze_meta) return "baseline";
        switch (opt_.variant) {
            case OmacVariant::Convex: return "omac-convex";
            case OmacVariant::ElementWise: return "omac-elementwise";
            case OmacVariant::BilinearRidge: return "omac-bilinear-ridge";
            case OmacVariant::BilinearOgd: return "omac-biconvex";
            case OmacVariant::Deep: return "omac-deep";
        }
        return "omac";
    }

    bool wants_env() const override { return !opt_.freeze_meta && variant_observes_env(opt_.variant); }

    Eigen::VectorXd predict(const Eigen::VectorXd& z, const Eigen::VectorXd&) override {
        return model_->predict(z);
    }

    void begin_episode() override {
        ++episode_;
        inner_.reset();
        buffer_.clear();
        meta_grad_sum_ = Eigen::VectorXd::Zero(model_->meta_dim());
        switch (opt_.reset) {
            case InnerReset::Zero:
            case InnerReset::CenterOfBall:
                model_->set_inner(Eigen::VectorXd::Zero(model_->inner_dim()));
                break;
            case InnerReset::CarryOver:
                break;
        }
        if (opt_.record_trace) trace_.episodes.emplace_back();
    }

    void observe(const Eigen::VectorXd& z, const Eigen::VectorXd& y) override {
        const LossEval e = model_->loss_and_grads(z, y);
        buffer_.push_back({z, y, model_->inner()});
        if (opt_.variant == OmacVariant::Convex) meta_grad_sum_ += e.grad_theta;
        if (opt_.record_trace) {
            auto& ep = trace_.episodes.back();
            ep.inner_grads.push_back(e.grad_c);
            ep.inner_iterates.push_back(model_->inner());
            ep.losses.push_back(e.value);
        }
        model_->set_inner(inner_.step(model_->inner(), e.grad_c));
    }

    void end_episode(const std::optional<Eigen::VectorXd>& c_observed) override {
        if (opt_.record_trace) {
            auto& ep = trace_.episodes.back();
            ep.meta_iterate = model_->meta_flat();
        }
        if (opt_.freeze_meta) {
            if (opt_.record_trace) trace_.episodes.back().meta_grad = Eigen::VectorXd::Zero(model_->meta_dim());
            return;
        }
        switch (opt_.variant) {
            case OmacVariant::Convex: {
                if (opt_.record_trace) trace_.episodes.back().meta_grad = meta_grad_sum_;
                model_->set_meta_flat(meta_ogd_.step(model_->meta_flat(), meta_grad_sum_));
                break;
            }
            case OmacVariant::ElementWise: {
                if (!c_observed) throw std::runtime_error("ObserveEnv required for this variant");
                const Eigen::VectorXd grad = replay_meta_grad(*c_observed);
                if (opt_.record_trace) trace_.episodes.back().meta_grad = grad;
                model_->set_meta_flat(meta_ogd_.step(model_->meta_flat(), grad));
                break;
            }
            case OmacVariant::BilinearRidge: {
                if (!c_observed) throw std::runtime_error("ObserveEnv required for this variant");
                if (!ridge_) throw std::logic_error("ridge adapter not configured");
                auto* bilinear = dynamic_cast<BilinearModel*>(model_.get());
                for (const auto& s : buffer_) {
                    const Eigen::MatrixXd Y = bilinear->basis().eval(s.z);
                    ridge_->accumulate(kronecker_row(*c_observed, Y), s.y);
                }
                bilinear->set_theta(ridge_->solve());
                break;
            }
            case OmacVariant::BilinearOgd: {
                const Eigen::VectorXd grad = replay_meta_grad_logged_inner();
                if (opt_.record_trace) trace_.episodes.back().meta_grad = grad;
                model_->set_meta_flat(meta_ogd_.step(model_->meta_flat(), grad));
                break;
            }
            case OmacVariant::Deep: {
                auto* deep = dynamic_cast<DeepModel*>(model_.get());
                const Eigen::VectorXd c_now = model_->inner();
                for (int epoch = 0; epoch < opt_.deep_replay_epochs; ++epoch) {
                    const Eigen::VectorXd grad = replay_meta_grad_logged_inner();
                    model_->set_meta_flat(adam_.step(model_->meta_flat(), grad));
                    deep->normalize();
                }
                model_->set_inner(c_now);
                break;
            }
        }
    }

    const FunctionModel& model() const { return *model_; }
    FunctionModel& model() { return *model_; }
    const OmacTrace& trace() const { return trace_; }
    const OgdAdapter& inner_adapter() const { return inner_; }
    const RidgeMetaAdapter* ridge() const { return ridge_ ? &*ridge_ : nullptr; }
    int episode_index() const { return episode_; }

private:
    struct Sample {
        Eigen::VectorXd z, y, c_hat;
    };

    // grad of sum_t ell(Theta, c_fixed) at the current Theta
    Eigen::VectorXd replay_meta_grad(const Eigen::VectorXd& c_fixed) {
        const Eigen::VectorXd c_now = model_->inner();
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(model_->meta_dim());
        model_->set_inner(c_fixed);
        for (const auto& s : buffer_) grad += model_->loss_and_grads(s.z, s.y).grad_theta;
        model_->set_inner(c_now);
        return grad;
    }

    // grad of sum_t ell(Theta, c_hat_t) at the current Theta, with the logged
    // inner iterates treated as constants
    Eigen::VectorXd replay_meta_grad_logged_inner() {
        const Eigen::VectorXd c_now = model_->inner();
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(model_->meta_dim());
        for (const auto& s : buffer_) {
            model_->set_inner(s.c_hat);
            grad += model_->loss_and_grads(s.z, s.y).grad_theta;
        }
        model_->set_inner(c_now);
        return grad;
    }

    std::unique_ptr<FunctionModel> model_;
    OgdAdapter inner_;
    OgdAdapter meta_ogd_;
    std::optional<RidgeMetaAdapter> ridge_;
    AdamState adam_;
    OmacOptions opt_;
    int episode_ = 0;
    std::vector<Sample> buffer_;
    Eigen::VectorXd meta_grad_sum_;
    OmacTrace trace_;
};

// ---------------------------------------------------------------------------
// Episode runner (the inner loop of Algorithm 1).
// ---------------------------------------------------------------------------

// Runs T steps in environment c, starting from x (updated in place so state
// carries across wind switches). Appends one record per step to log.
inline void run_episode(const Plant& plant, const ControlLaw& law, Controller& ctrl,
                        const Eigen::VectorXd& c, int T, const DisturbanceSpec& disturbance,
                        Rng& disturbance_rng, int outer_index, Eigen::VectorXd& x,
                        EpisodeLog& log) {
    ctrl.begin_episode();
    for (int t = 1; t <= T; ++t) {
        const Eigen::VectorXd z = plant.feature_input(x);
        const Eigen::VectorXd f = plant.f_true(x, c);
        const Eigen::VectorXd f_hat = ctrl.predict(z, f);
        const Eigen::VectorXd u = law.control(x, f_hat);
        const Eigen::VectorXd w = disturbance.sample(disturbance_rng, plant.target_dim());
        StepOutcome outcome;
        try {
            outcome = plant.step(x, u, c, w);
        } catch (const StateDiverged&) {
            throw StateDiverged(outer_index, t);
        }
        log.append(StepRecord::make(outer_index, t, plant.logged_state(x), u, f, f_hat, w,
                                    outcome.residual));
        ctrl.observe(z, f - w);
        x = outcome.x_next;
    }
}

}  // namespace omac
