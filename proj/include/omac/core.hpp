#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "omac/rng.hpp"

namespace omac {

// State snapshot at inner step t of outer iteration i (both 1-based).
struct EnvState {
    Eigen::VectorXd x;
    int t = 1;
    int i = 1;

    bool valid(int horizon_T, int horizon_N) const {
        return x.allFinite() && t >= 1 && t <= horizon_T && i >= 1 && i <= horizon_N;
    }
};

enum class DisturbanceKind { BoundedAdversarial, SubGaussian, Constant, Zero };

// Disturbance generator for the measurement channel w with ||w|| <= W.
// Sub-Gaussian draws are Gaussian per component and clipped to the ball of
// radius W (default W = 4 R sqrt(dim)) so the norm bound stays valid.
struct DisturbanceSpec {
    DisturbanceKind kind = DisturbanceKind::Zero;
    double bound = 0.0;  // W
    double sub_gaussian_R = 0.0;
    Eigen::VectorXd constant_value;

    static DisturbanceSpec zero() { return {}; }

    static DisturbanceSpec constant(const Eigen::VectorXd& value) {
        DisturbanceSpec d;
        d.kind = DisturbanceKind::Constant;
        d.constant_value = value;
        d.bound = value.norm();
        return d;
    }

    static DisturbanceSpec bounded(double W) {
        DisturbanceSpec d;
        d.kind = DisturbanceKind::BoundedAdversarial;
        d.bound = W;
        return d;
    }

    static DisturbanceSpec sub_gaussian(double R, int dim) {
        DisturbanceSpec d;
        d.kind = DisturbanceKind::SubGaussian;
        d.sub_gaussian_R = R;
        d.bound = 4.0 * R * std::sqrt(static_cast<double>(dim));
        return d;
    }

    Eigen::VectorXd sample(Rng& rng, int dim) const {
        switch (kind) {
            case DisturbanceKind::Zero:
                return Eigen::VectorXd::Zero(dim);
            case DisturbanceKind::Constant:
                if (constant_value.size() != dim)
                    throw std::invalid_argument("constant disturbance has wrong dimension");
                return constant_value;
            case DisturbanceKind::BoundedAdversarial:
                return rng.uniform_in_ball(dim, bound);
            case DisturbanceKind::SubGaussian: {
                Eigen::VectorXd w = rng.normal_vector(dim, sub_gaussian_R);
                const double n = w.norm();
                if (bound > 0.0 && n > bound) w *= bound / n;
                return w;
            }
        }
        return Eigen::VectorXd::Zero(dim);
    }
};

// Constants of the exponential ISS bound
//   ||x_t|| <= beta rho^{t-1} ||x_1|| + gamma sum rho^{t-1-k} ||v_k||.
struct EissConstants {
    double beta = 0.0;
    double rho = 0.0;   // in [0, 1)
    double gamma = 0.0;

    bool valid() const { return rho >= 0.0 && rho < 1.0 && beta >= 0.0 && gamma >= 0.0; }
};

// One logged step. y = f_true - w is constructed, never re-measured, so the
// reconstruction identity holds bit-exactly. `residual` is the deviation
// input fed to the e-ISS nominal dynamics, v_t = x_{t+1} - f0(x_t); it equals
// B u - f + w for the full-actuation form. It is kept in memory only (not
// part of the CSV schema).
struct StepRecord {
    int i = 1;
    int t = 1;
    Eigen::VectorXd x;
    Eigen::VectorXd u;
    Eigen::VectorXd f_true;
    Eigen::VectorXd f_hat;
    Eigen::VectorXd w;
    Eigen::VectorXd y;
    double loss = 0.0;
    Eigen::VectorXd residual;

    static StepRecord make(int i, int t, Eigen::VectorXd x, Eigen::VectorXd u,
                           Eigen::VectorXd f_true, Eigen::VectorXd f_hat, Eigen::VectorXd w,
                           Eigen::VectorXd residual) {
        StepRecord r;
        r.i = i;
        r.t = t;
        r.x = std::move(x);
        r.u = std::move(u);
        r.f_true = std::move(f_true);
        r.f_hat = std::move(f_hat);
        r.w = std::move(w);
        r.y = r.f_true - r.w;
        r.loss = (r.f_hat - r.y).squaredNorm();
        r.residual = std::move(residual);
        return r;
    }
};

namespace detail {

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void append_vector_header(std::ostream& os, const char* name, int dim) {
    for (int k = 0; k < dim; ++k) os << ',' << name << k;
}

inline void append_vector_row(std::ostream& os, const Eigen::VectorXd& v) {
    for (int k = 0; k < v.size(); ++k) os << ',' << format_double(v(k));
}

}  // namespace detail

// Complete record of one benchmark run: N outer iterations of T steps each.
class EpisodeLog {
public:
    EpisodeLog() = default;
    EpisodeLog(int n_outer, int n_inner) : n_outer_(n_outer), n_inner_(n_inner) {}

    void append(StepRecord rec) { steps_.push_back(std::move(rec)); }

    const std::vector<StepRecord>& steps() const { return steps_; }
    bool empty() const { return steps_.empty(); }
    std::size_t size() const { return steps_.size(); }
    int n_outer() const { return n_outer_; }
    int n_inner() const { return n_inner_; }

    bool complete() const {
        return n_outer_ > 0 && n_inner_ > 0 &&
               steps_.size() == static_cast<std::size_t>(n_outer_) * n_inner_;
    }

    // Header: i,t,x...,u...,f...,fhat...,w...,loss with dimension suffixes.
    void write_csv(std::ostream& os) const {
        if (steps_.empty()) throw std::invalid_argument("empty episode");
        const auto& first = steps_.front();
        os << "i,t";
        detail::append_vector_header(os, "x", static_cast<int>(first.x.size()));
        detail::append_vector_header(os, "u", static_cast<int>(first.u.size()));
        detail::append_vector_header(os, "f", static_cast<int>(first.f_true.size()));
        detail::append_vector_header(os, "fhat", static_cast<int>(first.f_hat.size()));
        detail::append_vector_header(os, "w", static_cast<int>(first.w.size()));
        os << ",loss\n";
        for (const auto& s : steps_) {
            os << s.i << ',' << s.t;
            detail::append_vector_row(os, s.x);
            detail::append_vector_row(os, s.u);
            detail::append_vector_row(os, s.f_true);
            detail::append_vector_row(os, s.f_hat);
            detail::append_vector_row(os, s.w);
            os << ',' << detail::format_double(s.loss) << '\n';
        }
    }

    // Parses a CSV produced by write_csv. Residuals are not part of the
    // schema and come back empty; y is reconstructed as f - w.
    static EpisodeLog read_csv(std::istream& is) {
        std::string line;
        if (!std::getline(is, line)) throw std::invalid_argument("empty episode");
        int dim_x = 0, dim_u = 0, dim_f = 0, dim_fhat = 0, dim_w = 0;
        {
            std::stringstream header(line);
            std::string col;
            while (std::getline(header, col, ',')) {
                if (col.rfind("fhat", 0) == 0) ++dim_fhat;
                else if (col.rfind('x', 0) == 0) ++dim_x;
                else if (col.rfind('u', 0) == 0) ++dim_u;
                else if (col.rfind('f', 0) == 0 && col != "fhat") ++dim_f;
                else if (col.rfind('w', 0) == 0) ++dim_w;
            }
        }
        EpisodeLog log;
        int max_i = 0, max_t = 0;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            std::stringstream row(line);
            std::string cell;
            auto next = [&]() -> double {
                if (!std::getline(row, cell, ',')) throw std::invalid_argument("short CSV row");
                return std::stod(cell);
            };
            auto next_vec = [&](int dim) {
                Eigen::VectorXd v(dim);
                for (int k = 0; k < dim; ++k) v(k) = next();
                return v;
            };
            StepRecord rec;
            rec.i = static_cast<int>(next());
            rec.t = static_cast<int>(next());
            rec.x = next_vec(dim_x);
            rec.u = next_vec(dim_u);
            rec.f_true = next_vec(dim_f);
            rec.f_hat = next_vec(dim_fhat);
            rec.w = next_vec(dim_w);
            rec.y = rec.f_true - rec.w;
            rec.loss = next();
            max_i = std::max(max_i, rec.i);
            max_t = std::max(max_t, rec.t);
            log.append(std::move(rec));
        }
        log.n_outer_ = max_i;
        log.n_inner_ = max_t;
        return log;
    }

private:
    int n_outer_ = 0;
    int n_inner_ = 0;
    std::vector<StepRecord> steps_;
};

// Average control error: mean Euclidean state norm over all logged steps.
inline double ace(const EpisodeLog& log) {
    if (log.empty()) throw std::invalid_argument("empty episode");
    double total = 0.0;
    for (const auto& s : log.steps()) total += s.x.norm();
    return total / static_cast<double>(log.size());
}

// gamma/(1-rho) * sqrt(mean squared residual norm), the e-ISS bound on ACE.
inline double lemma1_bound(const EpisodeLog& log, const EissConstants& k) {
    if (log.empty()) throw std::invalid_argument("empty episode");
    if (!k.valid()) throw std::invalid_argument("invalid e-ISS constants");
    double sum_sq = 0.0;
    for (const auto& s : log.steps()) {
        if (s.residual.size() == 0)
            throw std::invalid_argument("episode log has no residuals (loaded from CSV?)");
        sum_sq += s.residual.squaredNorm();
    }
    const double mean_sq = sum_sq / static_cast<double>(log.size());
    return k.gamma / (1.0 - k.rho) * std::sqrt(mean_sq);
}

namespace detail {

inline double spectral_norm(const Eigen::MatrixXd& m) {
    if (m.size() == 0) return 0.0;
    return m.jacobiSvd().singularValues()(0);
}

}  // namespace detail

// Numerical e-ISS constants for a stable linear map x+ = A x.
// rho = spectral radius + eps_margin. gamma is the sup over k of
// ||A^k||/rho^k: swept directly up to k_max, with the k > k_max tail bounded
// through the eigenbasis, ||A^k|| <= kappa2(V) r^k, so the returned value is
// an upper bound for every k. beta = gamma (Eq.-style bound with x_1 != 0).
inline EissConstants estimate_eiss_constants(const Eigen::MatrixXd& A, double eps_margin = 1e-6,
                                             int k_max = 500) {
    if (A.rows() != A.cols()) throw std::invalid_argument("A must be square");
    Eigen::EigenSolver<Eigen::MatrixXd> es(A);
    if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
    const double radius = es.eigenvalues().cwiseAbs().maxCoeff();
    if (radius >= 1.0) throw std::domain_error("nominal dynamics not stable");
    const double rho = radius + eps_margin;

    double gamma = 1.0;  // k = 0 term
    Eigen::MatrixXd power = Eigen::MatrixXd::Identity(A.rows(), A.cols());
    double rho_k = 1.0;
    for (int k = 1; k <= k_max; ++k) {
        power = power * A;
        rho_k *= rho;
        const double norm_k = detail::spectral_norm(power);
        if (norm_k == 0.0 || rho_k < 1e-280) break;
        gamma = std::max(gamma, norm_k / rho_k);
    }

    const Eigen::MatrixXcd V = es.eigenvectors();
    const auto sv = V.jacobiSvd().singularValues();
    const double sv_min = sv(sv.size() - 1);
    const double kappa = sv_min > 0.0 ? sv(0) / sv_min : std::numeric_limits<double>::infinity();
    const double tail = kappa * std::pow(radius / rho, k_max + 1);
    gamma = std::max(gamma, tail);

    EissConstants out;
    out.beta = gamma;
    out.rho = rho;
    out.gamma = gamma;
    return out;
}

}  // namespace omac
