#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "omac/rng.hpp"

namespace omac {

struct StateDiverged : std::runtime_error {
    StateDiverged(int outer, int inner)
        : std::runtime_error("state diverged at (i=" + std::to_string(outer) +
                             ", t=" + std::to_string(inner) + ")"),
          i(outer),
          t(inner) {}
    int i = 0;
    int t = 0;
};

enum class PlantForm { FullActuation, Matched };

struct StepOutcome {
    Eigen::VectorXd x_next;
    Eigen::VectorXd residual;  // x_next - f0_nominal(x); empty if no e-ISS nominal
};

// Discrete-time control-affine plant. `w` in step() is the measurement-channel
// disturbance of dimension target_dim(), defined so that the reconstructed
// measurement satisfies y = f_true(x, c) - w exactly.
class Plant {
public:
    virtual ~Plant() = default;

    virtual std::string name() const = 0;
    virtual PlantForm form() const = 0;
    virtual int state_dim() const = 0;
    virtual int control_dim() const = 0;
    virtual int target_dim() const = 0;  // dim of f, y, w
    virtual int env_dim() const = 0;     // dim of c

    virtual Eigen::VectorXd initial_state() const {
        return Eigen::VectorXd::Zero(state_dim());
    }

    virtual Eigen::VectorXd f_true(const Eigen::VectorXd& x, const Eigen::VectorXd& c) const = 0;

    virtual StepOutcome step(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                             const Eigen::VectorXd& c, const Eigen::VectorXd& w) const = 0;

    // Input handed to the function model / feature maps.
    virtual Eigen::VectorXd feature_input(const Eigen::VectorXd& x) const { return x; }
    virtual int feature_dim() const { return state_dim(); }

    // State vector entering the ACE metric and the episode log.
    virtual Eigen::VectorXd logged_state(const Eigen::VectorXd& x) const { return x; }
    virtual int logged_state_dim() const { return state_dim(); }

    // Linear e-ISS nominal map, when one exists (x+ = A x + residual).
    virtual bool has_eiss_nominal() const { return false; }
    virtual Eigen::MatrixXd eiss_nominal_matrix() const {
        throw std::logic_error("plant has no linear e-ISS nominal");
    }
};

// Generic plant built from callables, realizing
//   full actuation: x+ = f0(x) + B(x) u - f(x, c) + w
//   matched:        x+ = f0(x) + B(x) (u - f(x, c) + w_m)
// (matched disturbance lives in the actuation channel so y = f - w_m holds).
struct PlantSpec {
    std::string name = "generic";
    int n = 0;
    int m = 0;
    int d = 0;  // output dim of f (n for full actuation, m for matched)
    int h_env = 0;
    PlantForm form = PlantForm::FullActuation;
    double dt = 1.0;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> f0;
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> B;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> f_unknown;
    // set when f0 is linear (x -> A x), enabling Lemma-1 checks
    Eigen::MatrixXd nominal_A;
};

class GenericPlant final : public Plant {
public:
    explicit GenericPlant(PlantSpec spec) : spec_(std::move(spec)) {
        if (spec_.form == PlantForm::FullActuation && spec_.d != spec_.n)
            throw std::invalid_argument("full actuation requires d == n");
        if (spec_.form == PlantForm::Matched && spec_.d != spec_.m)
            throw std::invalid_argument("matched form requires d == m");
    }

    std::string name() const override { return spec_.name; }
    PlantForm form() const override { return spec_.form; }
    int state_dim() const override { return spec_.n; }
    int control_dim() const override { return spec_.m; }
    int target_dim() const override { return spec_.d; }
    int env_dim() const override { return spec_.h_env; }

    Eigen::VectorXd f_true(const Eigen::VectorXd& x, const Eigen::VectorXd& c) const override {
        return spec_.f_unknown(x, c);
    }

    StepOutcome step(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                     const Eigen::VectorXd& c, const Eigen::VectorXd& w) const override {
        const Eigen::VectorXd f0x = spec_.f0(x);
        const Eigen::MatrixXd Bx = spec_.B(x);
        const Eigen::VectorXd f = spec_.f_unknown(x, c);
        StepOutcome out;
        if (spec_.form == PlantForm::FullActuation) {
            out.x_next = f0x + Bx * u - f + w;
        } else {
            out.x_next = f0x + Bx * (u - f + w);
        }
        if (!out.x_next.allFinite()) throw StateDiverged(0, 0);
        out.residual = out.x_next - f0x;
        return out;
    }

    bool has_eiss_nominal() const override { return spec_.nominal_A.size() > 0; }
    Eigen::MatrixXd eiss_nominal_matrix() const override { return spec_.nominal_A; }

    const PlantSpec& spec() const { return spec_; }

private:
    PlantSpec spec_;
};

// Scalar test system x+ = a x + u - f(x, c) + w with f = c0 sin(x) + c1.
inline PlantSpec scalar_plant_spec(double a, int h_env = 2) {
    PlantSpec s;
    s.name = "scalar";
    s.n = 1;
    s.m = 1;
    s.d = 1;
    s.h_env = h_env;
    s.form = PlantForm::FullActuation;
    s.f0 = [a](const Eigen::VectorXd& x) { return Eigen::VectorXd::Constant(1, a * x(0)); };
    s.B = [](const Eigen::VectorXd&) { return Eigen::MatrixXd::Identity(1, 1); };
    s.f_unknown = [](const Eigen::VectorXd& x, const Eigen::VectorXd& c) {
        double v = 0.0;
        if (c.size() > 0) v += c(0) * std::sin(x(0));
        if (c.size() > 1) v += c(1);
        return Eigen::VectorXd::Constant(1, v);
    };
    s.nominal_A = Eigen::MatrixXd::Constant(1, 1, a);
    return s;
}

// ---------------------------------------------------------------------------
// Inverted pendulum with 2-D wind, damping, and gravity mismatch.
// ---------------------------------------------------------------------------

struct PendulumParams {
    double m = 1.0;       // mass [kg]
    double l = 1.0;       // length [m]
    double g = 9.81;      // true gravity [m/s^2]
    double g_hat = 9.0;   // controller's gravity estimate
    double alpha1 = 0.3;  // damping coefficient
    double alpha2 = 0.5;  // air drag coefficient
    double dt = 0.01;     // discretization step [s]

    bool valid() const { return m > 0.0 && l > 0.0 && dt > 0.0; }
};

inline double cross2(const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
    return a.x() * b.y() - a.y() * b.x();
}

// f(theta, theta_dot, c) = l_vec x F_wind - alpha1 theta_dot + m l (g - g_hat) sin(theta)
// with F_wind = alpha2 ||r|| r and r = w - [l theta_dot cos(theta); -l theta_dot sin(theta)].
inline double pendulum_unknown_dynamics(double theta, double theta_dot, const Eigen::Vector2d& c,
                                        const PendulumParams& p) {
    const Eigen::Vector2d bob_vel(p.l * theta_dot * std::cos(theta),
                                  -p.l * theta_dot * std::sin(theta));
    const Eigen::Vector2d r = c - bob_vel;
    const Eigen::Vector2d f_wind = p.alpha2 * r.norm() * r;
    const Eigen::Vector2d l_vec(p.l * std::sin(theta), -p.l * std::cos(theta));
    return cross2(l_vec, f_wind) - p.alpha1 * theta_dot +
           p.m * p.l * (p.g - p.g_hat) * std::sin(theta);
}

// Discrete model x+ = A x + B (u + m l g_hat sin(theta) + f - w) with
// A = [[1, dt], [0, 1]] and B = [0; dt/(m l^2)]. The scalar disturbance w is
// the measurement-channel one: y = f - w. The e-ISS nominal is the stabilized
// closed loop (A - B K), so the plant carries its feedback gain K.
class PendulumPlant final : public Plant {
public:
    PendulumPlant(PendulumParams params, Eigen::RowVector2d gain)
        : params_(params), gain_(gain) {
        if (!params_.valid()) throw std::invalid_argument("invalid pendulum parameters");
        A_ << 1.0, params_.dt, 0.0, 1.0;
        B_ << 0.0, params_.dt / (params_.m * params_.l * params_.l);
    }

    std::string name() const override { return "pendulum"; }
    PlantForm form() const override { return PlantForm::Matched; }
    int state_dim() const override { return 2; }
    int control_dim() const override { return 1; }
    int target_dim() const override { return 1; }
    int env_dim() const override { return 2; }

    Eigen::VectorXd f_true(const Eigen::VectorXd& x, const Eigen::VectorXd& c) const override {
        return Eigen::VectorXd::Constant(
            1, pendulum_unknown_dynamics(x(0), x(1), Eigen::Vector2d(c(0), c(1)), params_));
    }

    StepOutcome step(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                     const Eigen::VectorXd& c, const Eigen::VectorXd& w) const override {
        const double f = f_true(x, c)(0);
        const double channel = u(0) + params_.m * params_.l * params_.g_hat * std::sin(x(0)) +
                               f - w(0);
        StepOutcome out;
        out.x_next = A_ * x + B_ * channel;
        if (!out.x_next.allFinite()) throw StateDiverged(0, 0);
        out.residual = out.x_next - eiss_nominal_matrix() * x;
        return out;
    }

    bool has_eiss_nominal() const override { return true; }
    Eigen::MatrixXd eiss_nominal_matrix() const override { return A_ - B_ * gain_; }

    const PendulumParams& params() const { return params_; }
    const Eigen::Matrix2d& A() const { return A_; }
    const Eigen::Vector2d& B() const { return B_; }
    const Eigen::RowVector2d& gain() const { return gain_; }

private:
    PendulumParams params_;
    Eigen::RowVector2d gain_;
    Eigen::Matrix2d A_;
    Eigen::Vector2d B_;
};

// ---------------------------------------------------------------------------
// 6-DoF quadrotor with 3-D wind.
// ---------------------------------------------------------------------------

struct QuadrotorParams {
    double m = 1.0;                                        // mass [kg]
    Eigen::Matrix3d J = Eigen::Vector3d(0.01, 0.01, 0.02).asDiagonal();  // inertia
    Eigen::Vector3d g = Eigen::Vector3d(0.0, 0.0, -9.81);  // gravity vector
    Eigen::Vector3d drag_coeffs = Eigen::Vector3d(0.075, 0.075, 0.11);   // surrogate aero
    double dt = 0.01;

    bool valid() const {
        return m > 0.0 && dt > 0.0 && J.isApprox(J.transpose(), 1e-12) &&
               J.llt().info() == Eigen::Success;
    }
};

struct QuadState {
    Eigen::Vector3d p = Eigen::Vector3d::Zero();
    Eigen::Vector3d v = Eigen::Vector3d::Zero();
    Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
    Eigen::Vector3d omega = Eigen::Vector3d::Zero();

    Eigen::VectorXd flatten() const {
        Eigen::VectorXd x(18);
        x.segment<3>(0) = p;
        x.segment<3>(3) = v;
        x.segment<9>(6) = Eigen::Map<const Eigen::VectorXd>(R.data(), 9);
        x.segment<3>(15) = omega;
        return x;
    }

    static QuadState unflatten(const Eigen::VectorXd& x) {
        QuadState s;
        s.p = x.segment<3>(0);
        s.v = x.segment<3>(3);
        s.R = Eigen::Map<const Eigen::Matrix3d>(x.segment<9>(6).data());
        s.omega = x.segment<3>(15);
        return s;
    }
};

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d s;
    s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return s;
}

inline Eigen::Vector3d vee(const Eigen::Matrix3d& s) {
    return Eigen::Vector3d(s(2, 1), s(0, 2), s(1, 0));
}

inline Eigen::Matrix3d gram_schmidt(const Eigen::Matrix3d& R) {
    Eigen::Matrix3d out;
    Eigen::Vector3d c0 = R.col(0).normalized();
    Eigen::Vector3d c1 = (R.col(1) - c0 * c0.dot(R.col(1))).normalized();
    Eigen::Vector3d c2 = c0.cross(c1);
    out.col(0) = c0;
    out.col(1) = c1;
    out.col(2) = c2;
    return out;
}

// Multiplicative wind-attitude-velocity drag surrogate:
//   f = -||v_rel|| R D R^T v_rel,  v_rel = v - w_wind,  D = diag(drag_coeffs).
// Anisotropic in the body frame, so the force couples wind and attitude and
// is not additive in the wind condition.
inline Eigen::Vector3d surrogate_aero_force(const QuadState& state, const Eigen::Vector3d& wind,
                                            const QuadrotorParams& params) {
    const Eigen::Vector3d v_rel = state.v - wind;
    const Eigen::Matrix3d D = params.drag_coeffs.asDiagonal();
    return -v_rel.norm() * (state.R * D * state.R.transpose() * v_rel);
}

// RK4 step of the rigid-body dynamics
//   p' = v, m v' = m g + R [0,0,T]^T + f_aero, R' = R S(omega),
//   J omega' = J omega x omega + tau,
// with thrust, torque, and f_aero held constant over dt. R is
// re-orthonormalized (Gram-Schmidt) after the step.
inline QuadState quadrotor_step(const QuadrotorParams& params, const QuadState& state,
                                double thrust, const Eigen::Vector3d& tau,
                                const Eigen::Vector3d& f_aero) {
    const double drift = (state.R.transpose() * state.R - Eigen::Matrix3d::Identity()).norm();
    if (drift > 1e-3) throw std::runtime_error("attitude integration failure");

    const Eigen::Matrix3d J_inv = params.J.inverse();
    auto deriv = [&](const QuadState& s) {
        QuadState d;
        d.p = s.v;
        d.v = params.g + (s.R * Eigen::Vector3d(0.0, 0.0, thrust) + f_aero) / params.m;
        d.R = s.R * skew(s.omega);
        d.omega = J_inv * ((params.J * s.omega).cross(s.omega) + tau);
        return d;
    };
    auto advance = [](const QuadState& s, const QuadState& d, double h) {
        QuadState out;
        out.p = s.p + h * d.p;
        out.v = s.v + h * d.v;
        out.R = s.R + h * d.R;
        out.omega = s.omega + h * d.omega;
        return out;
    };

    const double h = params.dt;
    const QuadState k1 = deriv(state);
    const QuadState k2 = deriv(advance(state, k1, h / 2.0));
    const QuadState k3 = deriv(advance(state, k2, h / 2.0));
    const QuadState k4 = deriv(advance(state, k3, h));

    QuadState next;
    next.p = state.p + h / 6.0 * (k1.p + 2.0 * k2.p + 2.0 * k3.p + k4.p);
    next.v = state.v + h / 6.0 * (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v);
    next.R = state.R + h / 6.0 * (k1.R + 2.0 * k2.R + 2.0 * k3.R + k4.R);
    next.omega = state.omega + h / 6.0 * (k1.omega + 2.0 * k2.omega + 2.0 * k3.omega + k4.omega);

    if ((next.R.transpose() * next.R - Eigen::Matrix3d::Identity()).norm() > 1e-3)
        throw std::runtime_error("attitude integration failure");
    next.R = gram_schmidt(next.R);
    return next;
}

// Quadrotor as a Plant. State is the 18-dim flat vector; the logged
// (regulation-error) state is (p, v); the learned target is the 3-D
// aerodynamic force. Control is u = [T, tau_x, tau_y, tau_z].
class QuadrotorPlant final : public Plant {
public:
    explicit QuadrotorPlant(QuadrotorParams params) : params_(params) {
        if (!params_.valid()) throw std::invalid_argument("invalid quadrotor parameters");
    }

    std::string name() const override { return "quadrotor"; }
    PlantForm form() const override { return PlantForm::Matched; }
    int state_dim() const override { return 18; }
    int control_dim() const override { return 4; }
    int target_dim() const override { return 3; }
    int env_dim() const override { return 3; }

    Eigen::VectorXd f_true(const Eigen::VectorXd& x, const Eigen::VectorXd& c) const override {
        return surrogate_aero_force(QuadState::unflatten(x), c, params_);
    }

    StepOutcome step(const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                     const Eigen::VectorXd& c, const Eigen::VectorXd& w) const override {
        const QuadState s = QuadState::unflatten(x);
        const Eigen::Vector3d f_net = f_true(x, c) - w;
        const QuadState next =
            quadrotor_step(params_, s, u(0), u.segment<3>(1), f_net);
        StepOutcome out;
        out.x_next = next.flatten();
        if (!out.x_next.allFinite()) throw StateDiverged(0, 0);
        return out;
    }

    // features: velocity and flattened attitude, the inputs f depends on
    Eigen::VectorXd feature_input(const Eigen::VectorXd& x) const override {
        Eigen::VectorXd z(12);
        z.segment<3>(0) = x.segment<3>(3);
        z.segment<9>(3) = x.segment<9>(6);
        return z;
    }
    int feature_dim() const override { return 12; }

    Eigen::VectorXd logged_state(const Eigen::VectorXd& x) const override {
        return x.segment<6>(0);
    }
    int logged_state_dim() const override { return 6; }

    Eigen::VectorXd initial_state() const override { return QuadState().flatten(); }

    const QuadrotorParams& params() const { return params_; }

private:
    QuadrotorParams params_;
};

// ---------------------------------------------------------------------------
// Wind-condition scheduling.
// ---------------------------------------------------------------------------

enum class WindSampling { RandomUniformInBox, FixedList, AdversarialCallback };

struct WindSchedule {
    int env_dim = 0;
    double box_bound = 0.0;  // K_c: each component in [-box_bound, box_bound]
    double dwell_seconds = 2.0;
    int count = 0;  // N
    WindSampling sampling = WindSampling::RandomUniformInBox;
    std::vector<Eigen::VectorXd> fixed_list;
    std::function<Eigen::VectorXd(int)> callback;

    int inner_steps(double dt) const {
        return static_cast<int>(std::lround(dwell_seconds / dt));
    }
};

inline std::vector<Eigen::VectorXd> wind_sequence(const WindSchedule& schedule,
                                                  std::uint64_t seed) {
    std::vector<Eigen::VectorXd> out;
    switch (schedule.sampling) {
        case WindSampling::FixedList:
            out = schedule.fixed_list;
            break;
        case WindSampling::RandomUniformInBox: {
            Rng rng = Rng(seed).derive("wind");
            out.reserve(schedule.count);
            for (int i = 0; i < schedule.count; ++i)
                out.push_back(rng.uniform_vector(schedule.env_dim, -schedule.box_bound,
                                                 schedule.box_bound));
            break;
        }
        case WindSampling::AdversarialCallback:
            if (!schedule.callback) throw std::invalid_argument("missing wind callback");
            out.reserve(schedule.count);
            for (int i = 0; i < schedule.count; ++i) out.push_back(schedule.callback(i));
            break;
    }
    for (const auto& c : out) {
        if (c.size() != schedule.env_dim) throw std::invalid_argument("wind condition dimension mismatch");
        if (schedule.box_bound > 0.0 && c.lpNorm<Eigen::Infinity>() > schedule.box_bound + 1e-12)
            throw std::invalid_argument("wind condition outside declared box");
    }
    return out;
}

}  // namespace omac
