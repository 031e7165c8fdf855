#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "davihd/tensor.hpp"

namespace davihd {

// Global-norm gradient clipping over a parameter set. If the joint L2 norm
// exceeds max_norm the gradients are scaled by max_norm/norm in place. The
// tiny relative slack makes repeated application a no-op.
inline double clip_global_norm(std::vector<Tensor>& params, double max_norm) {
    if (max_norm <= 0.0) throw ShapeError("clip_global_norm: max_norm must be > 0");
    double sq = 0.0;
    for (Tensor& p : params)
        for (double g : p.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm * (1.0 + 1e-12)) {
        const double s = max_norm / norm;
        for (Tensor& p : params)
            for (double& g : p.grad()) g *= s;
    }
    return norm;
}

// Adam with bias correction. Weight decay is coupled L2: added to the raw
// gradient before the moment updates.
class Adam {
public:
    Adam(std::vector<Tensor> params, double lr, double weight_decay = 0.0, double beta1 = 0.9,
         double beta2 = 0.999, double eps = 1e-8)
        : params_(std::move(params)),
          lr_(lr),
          weight_decay_(weight_decay),
          beta1_(beta1),
          beta2_(beta2),
          eps_(eps) {
        if (lr < 0.0) throw ShapeError("adam: lr must be >= 0");
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (const Tensor& p : params_) {
            m_.emplace_back(p.numel(), 0.0);
            v_.emplace_back(p.numel(), 0.0);
        }
    }

    const std::vector<Tensor>& params() const { return params_; }
    std::vector<Tensor>& params() { return params_; }
    long long step_count() const { return t_; }

    void zero_grad() {
        for (Tensor& p : params_) p.zero_grad();
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& val = params_[i].values();
            const auto& grad = params_[i].grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < val.size(); ++j) {
                const double g = grad[j] + weight_decay_ * val[j];
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                val[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, weight_decay_, beta1_, beta2_, eps_;
    long long t_ = 0;
};

// ---------------------------------------------------------------------------
// finite-difference verification
// ---------------------------------------------------------------------------

struct GradCheckGroup {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t elements = 0;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    double max_rel_err = 0.0;
    bool pass(double tol) const { return max_rel_err < tol; }
};

// Relative error convention shared by all gradient checks:
// |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-8).
inline double grad_rel_err(double g_ad, double g_fd) {
    const double denom = std::max({std::abs(g_ad), std::abs(g_fd), 1e-8});
    return std::abs(g_ad - g_fd) / denom;
}

// Central-difference check of d(loss)/d(tensor) for every element of every
// named tensor. `loss_fn` must be deterministic and must not itself open a
// tape; the reverse-mode gradient is computed once, then each element is
// perturbed by +/-eps with no tape active.
inline GradCheckReport grad_check_many(const std::function<Tensor()>& loss_fn,
                                       std::vector<std::pair<std::string, Tensor>> tensors,
                                       double eps = 1e-5) {
    GradCheckReport report;
    for (auto& [name, t] : tensors)
        if (!t.requires_grad()) t.set_requires_grad(true);
    for (auto& [name, t] : tensors) t.zero_grad();
    std::vector<std::vector<double>> g_ad;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = loss_fn();
        tape.backward(loss);
    }
    g_ad.reserve(tensors.size());
    for (auto& [name, t] : tensors) g_ad.push_back(t.grad());

    for (std::size_t gi = 0; gi < tensors.size(); ++gi) {
        auto& [name, t] = tensors[gi];
        GradCheckGroup group{name, 0.0, t.numel()};
        auto& vals = t.values();
        for (std::size_t j = 0; j < vals.size(); ++j) {
            const double keep = vals[j];
            vals[j] = keep + eps;
            const double fp = loss_fn().item();
            vals[j] = keep - eps;
            const double fm = loss_fn().item();
            vals[j] = keep;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("grad_check: non-finite loss during perturbation of " + name);
            const double g_fd = (fp - fm) / (2.0 * eps);
            group.max_rel_err = std::max(group.max_rel_err, grad_rel_err(g_ad[gi][j], g_fd));
        }
        report.max_rel_err = std::max(report.max_rel_err, group.max_rel_err);
        report.groups.push_back(std::move(group));
    }
    return report;
}

// Single-tensor convenience wrapper: max relative error of d f / d x.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                         double eps = 1e-5) {
    auto loss_fn = [&]() { return f(x); };
    auto report = grad_check_many(loss_fn, {{"x", x}}, eps);
    return report.max_rel_err;
}

}  // namespace davihd
