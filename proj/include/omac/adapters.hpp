#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace omac {

// Euclidean/Frobenius ball projection. A boundary point (||v|| = radius) is
// feasible and returned unchanged.
inline Eigen::VectorXd project_ball(const Eigen::VectorXd& v, double radius) {
    const double n = v.norm();
    if (n <= radius) return v;
    return v * (radius / n);
}

enum class OgdScheduleKind { InverseSqrt, Fixed };

// Projected online gradient descent over a norm ball of the flattened
// parameter. InverseSqrt plays eta_t = rate0 / sqrt(t); with rate0 = D/G this
// is the Lemma-4 schedule whose regret is <= (3/2) G D sqrt(T).
//
// Step lengths are capped at max_step / sqrt(t) (default max_step = 2 radius,
// the ball diameter). Under the true gradient bound G the Lemma-4 schedule
// already satisfies ||eta_t grad|| <= D / sqrt(t), so the cap only binds when
// an empirically tuned rate meets an outlier gradient.
class OgdAdapter {
public:
    OgdAdapter() = default;
    OgdAdapter(double radius, double rate0, OgdScheduleKind schedule = OgdScheduleKind::InverseSqrt,
               double max_step = 0.0)
        : radius_(radius),
          rate0_(rate0),
          schedule_(schedule),
          max_step_(max_step > 0.0 ? max_step : 2.0 * radius) {}

    static OgdAdapter lemma4(double diameter_D, double grad_bound_G, double radius) {
        return OgdAdapter(radius, diameter_D / grad_bound_G, OgdScheduleKind::InverseSqrt);
    }

    double learning_rate(int t) const {
        if (schedule_ == OgdScheduleKind::Fixed) return rate0_;
        return rate0_ / std::sqrt(static_cast<double>(t));
    }

    double step_length_limit(int t) const {
        if (schedule_ == OgdScheduleKind::Fixed) return max_step_;
        return max_step_ / std::sqrt(static_cast<double>(t));
    }

    Eigen::VectorXd step(const Eigen::VectorXd& param, const Eigen::VectorXd& grad) {
        if (param.size() != grad.size()) throw std::invalid_argument("OGD shape mismatch");
        ++count_;
        Eigen::VectorXd move = learning_rate(count_) * grad;
        const double len = move.norm();
        const double limit = step_length_limit(count_);
        if (len > limit) move *= limit / len;
        return project_ball(param - move, radius_);
    }

    void reset() { count_ = 0; }
    int step_count() const { return count_; }
    double radius() const { return radius_; }
    double rate0() const { return rate0_; }
    double max_step() const { return max_step_; }

private:
    double radius_ = 1.0;
    double rate0_ = 1.0;
    OgdScheduleKind schedule_ = OgdScheduleKind::InverseSqrt;
    double max_step_ = 2.0;
    int count_ = 0;
};

// Constants of the convex-case learning-rate schedules:
//   C1 = 4 K1^2 K_Theta + 4 K1 K2 K_c + 2 K1 W
//   C2 = 4 K2^2 K_c + 4 K1 K2 K_Theta + 2 K2 W
struct ScheduleConstants {
    double K1 = 0.0;       // sup ||Y1(x)||
    double K2 = 0.0;       // sup ||Y2(x)||
    double K_theta = 0.0;  // meta ball radius
    double K_c = 0.0;      // inner ball radius
    double W = 0.0;        // disturbance bound

    double C1() const { return 4.0 * K1 * K1 * K_theta + 4.0 * K1 * K2 * K_c + 2.0 * K1 * W; }
    double C2() const { return 4.0 * K2 * K2 * K_c + 4.0 * K1 * K2 * K_theta + 2.0 * K2 * W; }
};

struct Corollary4Schedules {
    std::function<double(int)> meta_rate;   // eta_bar(i) = 2 K_Theta / (C1 T sqrt(i))
    std::function<double(int)> inner_rate;  // eta_t = 2 K_c / (C2 sqrt(t))
};

inline Corollary4Schedules corollary4_schedules(const ScheduleConstants& k, int T) {
    if (k.C1() <= 0.0 || k.C2() <= 0.0) throw std::invalid_argument("schedule constants must be positive");
    const double meta0 = 2.0 * k.K_theta / (k.C1() * static_cast<double>(T));
    const double inner0 = 2.0 * k.K_c / k.C2();
    Corollary4Schedules s;
    s.meta_rate = [meta0](int i) { return meta0 / std::sqrt(static_cast<double>(i)); };
    s.inner_rate = [inner0](int t) { return inner0 / std::sqrt(static_cast<double>(t)); };
    return s;
}

inline OgdAdapter corollary4_meta_adapter(const ScheduleConstants& k, int T) {
    return OgdAdapter(k.K_theta, 2.0 * k.K_theta / (k.C1() * static_cast<double>(T)),
                      OgdScheduleKind::InverseSqrt);
}

inline OgdAdapter corollary4_inner_adapter(const ScheduleConstants& k) {
    return OgdAdapter(k.K_c, 2.0 * k.K_c / k.C2(), OgdScheduleKind::InverseSqrt);
}

// Ridge-regression meta-adapter. Accumulates
//   V = lambda I + sum_j sum_t Z^T Z,   moment = sum_j sum_t Z^T y
// and solves vec(Theta) = V^{-1} moment once per outer iteration.
class RidgeMetaAdapter {
public:
    RidgeMetaAdapter(double lambda, int pbar, int latent_dim)
        : lambda_(lambda), pbar_(pbar), h_(latent_dim) {
        if (lambda <= 0.0) throw std::invalid_argument("lambda must be positive");
        const int dim = pbar_ * h_;
        V_ = lambda * Eigen::MatrixXd::Identity(dim, dim);
        moment_ = Eigen::VectorXd::Zero(dim);
    }

    int dim() const { return pbar_ * h_; }
    double lambda() const { return lambda_; }

    void accumulate(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y) {
        if (Z.cols() != dim() || Z.rows() != y.size())
            throw std::invalid_argument("ridge accumulate dimension mismatch");
        V_.noalias() += Z.transpose() * Z;
        moment_.noalias() += Z.transpose() * y;
    }

    Eigen::MatrixXd solve() const {
        Eigen::LLT<Eigen::MatrixXd> llt(V_);
        if (llt.info() != Eigen::Success) {
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(V_, Eigen::EigenvaluesOnly);
            std::ostringstream msg;
            msg << "Gram matrix ill-conditioned (lambda_min=" << es.eigenvalues()(0) << ")";
            throw std::runtime_error(msg.str());
        }
        const Eigen::VectorXd vec_theta = llt.solve(moment_);
        return Eigen::Map<const Eigen::MatrixXd>(vec_theta.data(), pbar_, h_);
    }

    // lambda_min of the data part V - lambda I; grows ~linearly in the
    // iteration count under environment diversity.
    double diversity_lambda_min() const {
        const Eigen::MatrixXd data = V_ - lambda_ * Eigen::MatrixXd::Identity(dim(), dim());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(data, Eigen::EigenvaluesOnly);
        return es.eigenvalues()(0);
    }

    const Eigen::MatrixXd& gram() const { return V_; }
    const Eigen::VectorXd& moment() const { return moment_; }

private:
    double lambda_;
    int pbar_;
    int h_;
    Eigen::MatrixXd V_;
    Eigen::VectorXd moment_;
};

// Standard bias-corrected Adam on a flat parameter vector.
class AdamState {
public:
    AdamState() = default;
    explicit AdamState(double step_size, double beta1 = 0.9, double beta2 = 0.999,
                       double eps = 1e-8)
        : step_size_(step_size), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    Eigen::VectorXd step(const Eigen::VectorXd& params, const Eigen::VectorXd& grads) {
        if (params.size() != grads.size()) throw std::invalid_argument("Adam shape mismatch");
        if (m_.size() != params.size()) {
            m_ = Eigen::VectorXd::Zero(params.size());
            v_ = Eigen::VectorXd::Zero(params.size());
            t_ = 0;
        }
        ++t_;
        m_ = beta1_ * m_ + (1.0 - beta1_) * grads;
        v_ = beta2_ * v_ + (1.0 - beta2_) * grads.array().square().matrix();
        const double mc = 1.0 - std::pow(beta1_, t_);
        const double vc = 1.0 - std::pow(beta2_, t_);
        const Eigen::ArrayXd mhat = m_.array() / mc;
        const Eigen::ArrayXd vhat = v_.array() / vc;
        return params.array() - step_size_ * mhat / (vhat.sqrt() + eps_);
    }

    void reset() {
        m_.resize(0);
        v_.resize(0);
        t_ = 0;
    }

    double step_size() const { return step_size_; }
    int step_count() const { return t_; }

private:
    double step_size_ = 1e-3;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    Eigen::VectorXd m_;
    Eigen::VectorXd v_;
    int t_ = 0;
};

}  // namespace omac
