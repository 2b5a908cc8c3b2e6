#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "di3cl/core/error.hpp"
#include "di3cl/nn/layers.hpp"

namespace di3cl {

/// min_lr + (base_lr - min_lr) * (1 + cos(pi * step / total)) / 2
inline double cosine_lr(long step, long total_steps, double base_lr, double min_lr = 0.0) {
    if (total_steps <= 0) return base_lr;
    const double t = static_cast<double>(std::clamp(step, 0L, total_steps)) / static_cast<double>(total_steps);
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

/// base_lr * (1 - iter / max_iter)^power
inline double poly_lr(long iter, long max_iter, double base_lr, double power = 0.9) {
    if (max_iter <= 0) return base_lr;
    const double t = static_cast<double>(std::clamp(iter, 0L, max_iter)) / static_cast<double>(max_iter);
    return base_lr * std::pow(1.0 - t, power);
}

namespace nn {

/// SGD with heavy-ball momentum and L2 weight decay:
///   v <- mu * v + (g + wd * w);  w <- w - lr * v
template <typename T>
class Sgd {
public:
    Sgd() = default;
    Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

    void step(const ParamList<T>& params, double lr) {
        if (velocity_.empty()) {
            velocity_.resize(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) velocity_[i].assign(params[i]->value.size(), T(0));
        }
        if (velocity_.size() != params.size()) throw ShapeError("Sgd: parameter list changed between steps");
        const T mu = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_), eta = static_cast<T>(lr);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& p = *params[i];
            auto& v = velocity_[i];
            for (std::size_t j = 0; j < p.value.size(); ++j) {
                v[j] = mu * v[j] + p.grad[j] + wd * p.value[j];
                p.value[j] -= eta * v[j];
            }
        }
    }

    std::vector<std::vector<T>>& velocity() { return velocity_; }
    const std::vector<std::vector<T>>& velocity() const { return velocity_; }

private:
    double momentum_ = 0.9;
    double weight_decay_ = 1e-4;
    std::vector<std::vector<T>> velocity_;
};

template <typename T>
void zero_grad(const ParamList<T>& params) {
    for (auto* p : params) p->zero_grad();
}

}  // namespace nn
}  // namespace di3cl
