#pragma once

#include "cfci/core/autodiff.hpp"

namespace cfci {

/// Adam with decoupled weight decay. The learning rate is supplied per
/// step so schedules stay outside the optimizer.
struct AdamW {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 1e-5;
    std::int64_t step_count = 0;
    std::vector<Var> params;
    std::vector<Tensor> m, v;

    AdamW() = default;
    explicit AdamW(std::vector<Var> params_, double weight_decay_ = 1e-5)
        : weight_decay(weight_decay_), params(std::move(params_)) {
        for (const auto& p : params) {
            m.emplace_back(Shape(p.shape()));
            v.emplace_back(Shape(p.shape()));
        }
    }

    void zero_grad() {
        for (auto& p : params) p.zero_grad();
    }

    void step(double lr) {
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!params[i].has_grad()) continue;
            Tensor& x = params[i].value_mut();
            const Tensor& g = params[i].grad();
            Tensor& mi = m[i];
            Tensor& vi = v[i];
            for (std::int64_t j = 0; j < x.numel(); ++j) {
                mi[j] = beta1 * mi[j] + (1 - beta1) * g[j];
                vi[j] = beta2 * vi[j] + (1 - beta2) * g[j] * g[j];
                const double mhat = mi[j] / bc1;
                const double vhat = vi[j] / bc2;
                x[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * x[j]);
            }
        }
    }
};

/// Cosine decay from lr0 to lr_min across total steps.
inline double cosine_lr(double lr0, double lr_min, std::int64_t step, std::int64_t total) {
    if (total <= 1) return lr0;
    const double t = std::min<double>(1.0, static_cast<double>(step) / static_cast<double>(total - 1));
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

} // namespace cfci
