#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "omac/features.hpp"
#include "omac/rng.hpp"

namespace omac {

// Squared-error loss value with exact gradients for both parameter blocks.
// grad_theta is flattened column-major.
struct LossEval {
    double value = 0.0;
    Eigen::VectorXd grad_theta;
    Eigen::VectorXd grad_c;
};

// Shared-representation model F(phi(x; Theta), c) with a meta block Theta
// (adapted between environments) and an inner block c (adapted per step).
class FunctionModel {
public:
    virtual ~FunctionModel() = default;

    virtual int output_dim() const = 0;
    virtual int inner_dim() const = 0;
    virtual int meta_dim() const = 0;

    virtual Eigen::VectorXd predict(const Eigen::VectorXd& x) const = 0;
    virtual LossEval loss_and_grads(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const = 0;

    virtual const Eigen::VectorXd& inner() const = 0;
    virtual void set_inner(const Eigen::VectorXd& c) = 0;
    virtual Eigen::VectorXd meta_flat() const = 0;
    virtual void set_meta_flat(const Eigen::VectorXd& theta) = 0;

    virtual std::unique_ptr<FunctionModel> clone() const = 0;
    virtual std::string kind() const = 0;

    double loss(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const {
        return (predict(x) - y).squaredNorm();
    }
};

// F = Y1(x) Theta + Y2(x) c. Loss is jointly convex in (Theta, c).
class SuperpositionModel final : public FunctionModel {
public:
    SuperpositionModel(MatrixBasis y1, MatrixBasis y2)
        : y1_(std::move(y1)), y2_(std::move(y2)) {
        if (y1_.rows() != y2_.rows()) throw std::invalid_argument("basis output dims differ");
        theta_ = Eigen::VectorXd::Zero(y1_.cols());
        c_ = Eigen::VectorXd::Zero(y2_.cols());
    }

    int output_dim() const override { return y1_.rows(); }
    int inner_dim() const override { return static_cast<int>(c_.size()); }
    int meta_dim() const override { return static_cast<int>(theta_.size()); }

    Eigen::VectorXd predict(const Eigen::VectorXd& x) const override {
        return y1_.eval(x) * theta_ + y2_.eval(x) * c_;
    }

    LossEval loss_and_grads(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const override {
        const Eigen::MatrixXd Y1 = y1_.eval(x);
        const Eigen::MatrixXd Y2 = y2_.eval(x);
        const Eigen::VectorXd r = Y1 * theta_ + Y2 * c_ - y;
        LossEval e;
        e.value = r.squaredNorm();
        e.grad_theta = 2.0 * Y1.transpose() * r;
        e.grad_c = 2.0 * Y2.transpose() * r;
        return e;
    }

    const Eigen::VectorXd& inner() const override { return c_; }
    void set_inner(const Eigen::VectorXd& c) override { c_ = c; }
    Eigen::VectorXd meta_flat() const override { return theta_; }
    void set_meta_flat(const Eigen::VectorXd& theta) override { theta_ = theta; }

    std::unique_ptr<FunctionModel> clone() const override {
        return std::make_unique<SuperpositionModel>(*this);
    }
    std::string kind() const override { return "superposition"; }

    const MatrixBasis& basis1() const { return y1_; }
    const MatrixBasis& basis2() const { return y2_; }

private:
    MatrixBasis y1_, y2_;
    Eigen::VectorXd theta_;
    Eigen::VectorXd c_;
};

// F = Y(x) Theta c with Theta in R^{pbar x h}. Loss is convex in each block
// with the other fixed. vec(Theta) is column-major throughout.
class BilinearModel final : public FunctionModel {
public:
    BilinearModel(MatrixBasis y, int latent_dim) : y_(std::move(y)) {
        theta_ = Eigen::MatrixXd::Zero(y_.cols(), latent_dim);
        c_ = Eigen::VectorXd::Zero(latent_dim);
    }

    int output_dim() const override { return y_.rows(); }
    int inner_dim() const override { return static_cast<int>(c_.size()); }
    int meta_dim() const override { return static_cast<int>(theta_.size()); }

    Eigen::VectorXd predict(const Eigen::VectorXd& x) const override {
        return y_.eval(x) * (theta_ * c_);
    }

    LossEval loss_and_grads(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const override {
        const Eigen::MatrixXd Y = y_.eval(x);
        const Eigen::VectorXd r = Y * (theta_ * c_) - y;
        LossEval e;
        e.value = r.squaredNorm();
        const Eigen::MatrixXd grad_theta_mat = 2.0 * Y.transpose() * r * c_.transpose();
        e.grad_theta = Eigen::Map<const Eigen::VectorXd>(grad_theta_mat.data(), grad_theta_mat.size());
        e.grad_c = 2.0 * (Y * theta_).transpose() * r;
        return e;
    }

    const Eigen::VectorXd& inner() const override { return c_; }
    void set_inner(const Eigen::VectorXd& c) override { c_ = c; }
    Eigen::VectorXd meta_flat() const override {
        return Eigen::Map<const Eigen::VectorXd>(theta_.data(), theta_.size());
    }
    void set_meta_flat(const Eigen::VectorXd& theta) override {
        theta_ = Eigen::Map<const Eigen::MatrixXd>(theta.data(), theta_.rows(), theta_.cols());
    }

    std::unique_ptr<FunctionModel> clone() const override {
        return std::make_unique<BilinearModel>(*this);
    }
    std::string kind() const override { return "bilinear"; }

    const MatrixBasis& basis() const { return y_; }
    const Eigen::MatrixXd& theta() const { return theta_; }
    void set_theta(const Eigen::MatrixXd& t) { theta_ = t; }

private:
    MatrixBasis y_;
    Eigen::MatrixXd theta_;  // pbar x h
    Eigen::VectorXd c_;
};

// Kronecker-lifted regressor Z = c^T (x) Y so that Z vec(Theta) = Y Theta c
// under column-major vec.
inline Eigen::MatrixXd kronecker_row(const Eigen::VectorXd& c, const Eigen::MatrixXd& Yx) {
    const int n = static_cast<int>(Yx.rows());
    const int pbar = static_cast<int>(Yx.cols());
    const int h = static_cast<int>(c.size());
    Eigen::MatrixXd z(n, pbar * h);
    for (int k = 0; k < h; ++k) z.block(0, k * pbar, n, pbar) = c(k) * Yx;
    return z;
}

// Top singular value by power iteration, warm-started from u (u is updated
// in place). Runs at least min_iters rounds, then until the Rayleigh
// quotient stabilizes.
inline double power_iteration_sigma(const Eigen::MatrixXd& w, Eigen::VectorXd& u,
                                    int min_iters = 5, int max_iters = 400) {
    double sigma = 0.0;
    double prev = -1.0;
    Eigen::VectorXd v;
    for (int iter = 1; iter <= max_iters; ++iter) {
        v = w.transpose() * u;
        const double vn = v.norm();
        if (vn < 1e-300) return 0.0;
        v /= vn;
        Eigen::VectorXd wu = w * v;
        const double un = wu.norm();
        if (un < 1e-300) return 0.0;
        u = wu / un;
        sigma = u.dot(w * v);
        if (iter >= min_iters && std::abs(sigma - prev) <= 1e-12 * std::max(1.0, sigma)) break;
        prev = sigma;
    }
    return sigma;
}

// W <- W * min(1, bound / sigma_1(W)) with sigma_1 from power iteration.
inline void spectral_scale_to_bound(Eigen::MatrixXd& w, Eigen::VectorXd& u, double bound,
                                    int min_iters = 5) {
    const double sigma = power_iteration_sigma(w, u, min_iters);
    if (sigma > bound) w *= bound / sigma;
}

// phi(x; Theta) c where phi is an MLP with tanh hidden layers and a linear
// output reshaped (column-major) to n x h. Each weight matrix is constrained
// by spectral normalization; the power-iteration vectors are warm-started
// across calls.
class DeepModel final : public FunctionModel {
public:
    struct Layer {
        Eigen::MatrixXd w;
        Eigen::VectorXd b;
        Eigen::VectorXd power_u;  // warm start for the top singular pair
    };

    // Biases are initialized away from zero so the representation does not
    // vanish at the regulation point x = 0; output_scale keeps ||phi||
    // comparable to the sqrt(2)-bounded random Fourier bases.
    DeepModel(int input_dim, int output_dim, int latent_dim, std::vector<int> hidden,
              double spectral_bound, std::uint64_t seed, double output_scale = 0.5)
        : input_dim_(input_dim),
          output_dim_(output_dim),
          latent_dim_(latent_dim),
          spectral_bound_(spectral_bound),
          output_scale_(output_scale),
          seed_(seed) {
        Rng rng(seed);
        int prev = input_dim;
        std::vector<int> widths = std::move(hidden);
        widths.push_back(output_dim * latent_dim);
        for (int width : widths) {
            Layer layer;
            const double scale = std::sqrt(1.0 / static_cast<double>(prev));
            layer.w.resize(width, prev);
            for (int r = 0; r < width; ++r)
                for (int c = 0; c < prev; ++c) layer.w(r, c) = rng.normal(0.0, scale);
            layer.b = rng.normal_vector(width, 0.5);
            layer.power_u = rng.unit_sphere(width);
            layers_.push_back(std::move(layer));
            prev = width;
        }
        c_ = Eigen::VectorXd::Zero(latent_dim);
        normalize();
    }

    int output_dim() const override { return output_dim_; }
    int inner_dim() const override { return latent_dim_; }
    int meta_dim() const override {
        int n = 0;
        for (const auto& l : layers_) n += static_cast<int>(l.w.size() + l.b.size());
        return n;
    }

    Eigen::MatrixXd phi(const Eigen::VectorXd& x) const {
        Eigen::VectorXd a = x;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            a = layers_[l].w * a + layers_[l].b;
            if (l + 1 < layers_.size()) a = a.array().tanh();
        }
        a *= output_scale_;
        return Eigen::Map<const Eigen::MatrixXd>(a.data(), output_dim_, latent_dim_);
    }

    Eigen::VectorXd predict(const Eigen::VectorXd& x) const override { return phi(x) * c_; }

    LossEval loss_and_grads(const Eigen::VectorXd& x, const Eigen::VectorXd& y) const override {
        // forward, keeping activations
        std::vector<Eigen::VectorXd> acts;
        acts.reserve(layers_.size() + 1);
        acts.push_back(x);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            Eigen::VectorXd z = layers_[l].w * acts.back() + layers_[l].b;
            if (l + 1 < layers_.size()) z = z.array().tanh();
            acts.push_back(std::move(z));
        }
        const Eigen::MatrixXd phi_x =
            output_scale_ *
            Eigen::Map<const Eigen::MatrixXd>(acts.back().data(), output_dim_, latent_dim_);
        const Eigen::VectorXd r = phi_x * c_ - y;

        LossEval e;
        e.value = r.squaredNorm();
        e.grad_c = 2.0 * phi_x.transpose() * r;

        // d loss / d raw output = output_scale * vec(2 r c^T), column-major
        const Eigen::MatrixXd dphi = 2.0 * output_scale_ * r * c_.transpose();
        Eigen::VectorXd delta = Eigen::Map<const Eigen::VectorXd>(dphi.data(), dphi.size());

        e.grad_theta.resize(meta_dim());
        int offset = meta_dim();
        for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
            const Eigen::VectorXd& a_in = acts[l];
            const Eigen::MatrixXd dw = delta * a_in.transpose();
            offset -= static_cast<int>(layers_[l].w.size() + layers_[l].b.size());
            e.grad_theta.segment(offset, dw.size()) =
                Eigen::Map<const Eigen::VectorXd>(dw.data(), dw.size());
            e.grad_theta.segment(offset + dw.size(), delta.size()) = delta;
            if (l > 0) {
                delta = layers_[l].w.transpose() * delta;
                // tanh'(z) = 1 - tanh(z)^2, and acts[l] already holds tanh(z)
                delta.array() *= 1.0 - acts[l].array().square();
            }
        }
        return e;
    }

    const Eigen::VectorXd& inner() const override { return c_; }
    void set_inner(const Eigen::VectorXd& c) override { c_ = c; }

    Eigen::VectorXd meta_flat() const override {
        Eigen::VectorXd out(meta_dim());
        int offset = 0;
        for (const auto& l : layers_) {
            out.segment(offset, l.w.size()) = Eigen::Map<const Eigen::VectorXd>(l.w.data(), l.w.size());
            offset += static_cast<int>(l.w.size());
            out.segment(offset, l.b.size()) = l.b;
            offset += static_cast<int>(l.b.size());
        }
        return out;
    }

    void set_meta_flat(const Eigen::VectorXd& theta) override {
        int offset = 0;
        for (auto& l : layers_) {
            l.w = Eigen::Map<const Eigen::MatrixXd>(theta.data() + offset, l.w.rows(), l.w.cols());
            offset += static_cast<int>(l.w.size());
            l.b = theta.segment(offset, l.b.size());
            offset += static_cast<int>(l.b.size());
        }
    }

    // Rescales every weight matrix to top singular value <= spectral_bound,
    // warm-starting each layer's power iteration from the previous call.
    void normalize() {
        for (auto& l : layers_) spectral_scale_to_bound(l.w, l.power_u, spectral_bound_);
    }

    double spectral_bound() const { return spectral_bound_; }
    const std::vector<Layer>& layers() const { return layers_; }
    Eigen::MatrixXd& layer_weight(std::size_t l) { return layers_[l].w; }

    // Lipschitz constant of phi under the layer bounds (tanh is 1-Lipschitz).
    double lipschitz_bound() const {
        return output_scale_ * std::pow(spectral_bound_, static_cast<double>(layers_.size()));
    }

    std::unique_ptr<FunctionModel> clone() const override {
        return std::make_unique<DeepModel>(*this);
    }
    std::string kind() const override { return "deep"; }

    int input_dim() const { return input_dim_; }
    double output_scale() const { return output_scale_; }
    std::uint64_t seed() const { return seed_; }
    std::vector<int> hidden_widths() const {
        std::vector<int> w;
        for (std::size_t l = 0; l + 1 < layers_.size(); ++l)
            w.push_back(static_cast<int>(layers_[l].w.rows()));
        return w;
    }

private:
    int input_dim_;
    int output_dim_;
    int latent_dim_;
    double spectral_bound_;
    double output_scale_;
    std::uint64_t seed_;
    std::vector<Layer> layers_;
    Eigen::VectorXd c_;
};

inline void spectral_normalize(DeepModel& model) { model.normalize(); }

// --- checkpoints: one JSON header line, then raw 64-bit parameter values ---

inline void save_checkpoint(const FunctionModel& model, const std::string& path) {
    nlohmann::json header;
    header["kind"] = model.kind();
    header["output_dim"] = model.output_dim();
    header["inner_dim"] = model.inner_dim();
    header["meta_dim"] = model.meta_dim();
    if (const auto* deep = dynamic_cast<const DeepModel*>(&model)) {
        header["input_dim"] = deep->input_dim();
        header["hidden"] = deep->hidden_widths();
        header["spectral_bound"] = deep->spectral_bound();
        header["output_scale"] = deep->output_scale();
        header["seed"] = deep->seed();
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path);
    os << header.dump() << '\n';
    const Eigen::VectorXd theta = model.meta_flat();
    const Eigen::VectorXd& c = model.inner();
    os.write(reinterpret_cast<const char*>(theta.data()),
             static_cast<std::streamsize>(sizeof(double) * theta.size()));
    os.write(reinterpret_cast<const char*>(c.data()),
             static_cast<std::streamsize>(sizeof(double) * c.size()));
}

// Restores the parameter blocks of a structurally matching model.
inline void load_checkpoint(FunctionModel& model, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    std::string line;
    std::getline(is, line);
    const nlohmann::json header = nlohmann::json::parse(line);
    if (header.at("kind").get<std::string>() != model.kind())
        throw std::runtime_error("checkpoint model kind mismatch");
    if (header.at("meta_dim").get<int>() != model.meta_dim() ||
        header.at("inner_dim").get<int>() != model.inner_dim())
        throw std::runtime_error("checkpoint shape mismatch");
    Eigen::VectorXd theta(model.meta_dim());
    Eigen::VectorXd c(model.inner_dim());
    is.read(reinterpret_cast<char*>(theta.data()),
            static_cast<std::streamsize>(sizeof(double) * theta.size()));
    is.read(reinterpret_cast<char*>(c.data()),
            static_cast<std::streamsize>(sizeof(double) * c.size()));
    if (!is) throw std::runtime_error("corrupt checkpoint");
    model.set_meta_flat(theta);
    model.set_inner(c);
}

}  // namespace omac
