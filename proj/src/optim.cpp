#include "tbe/optim.hpp"

#include <cmath>

#include "tbe/errors.hpp"

namespace tbe {

Sgd::Sgd(float lr, float momentum) : lr_(lr), momentum_(momentum) {
    set_lr(lr);
    if (!(momentum >= 0.0f && momentum < 1.0f)) {
        throw ParameterError("momentum must lie in [0, 1)");
    }
}

void Sgd::set_lr(float lr) {
    if (!(lr > 0.0f)) {
        throw ParameterError("learning rate must be positive");
    }
    lr_ = lr;
}

void Sgd::step(const std::string& name, std::span<float> param, std::span<const float> grad) {
    if (param.size() != grad.size()) {
        throw DimensionError("parameter '" + name + "' has " + std::to_string(param.size()) +
                             " values but gradient has " + std::to_string(grad.size()));
    }
    auto& v = velocity_[name];
    if (v.empty()) {
        v.assign(param.size(), 0.0f);
    } else if (v.size() != param.size()) {
        throw DimensionError("velocity for '" + name + "' has the wrong size");
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
        v[i] = momentum_ * v[i] - lr_ * grad[i];
        param[i] += v[i];
    }
}

double clip_grad_norm(ParamMap& params, double max_norm) {
    double sq = 0.0;
    for (auto& [name, p] : params) {
        if (!p.requires_grad() || !p.has_grad()) continue;
        for (float g : p.grad()) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const auto k = static_cast<float>(max_norm / norm);
        for (auto& [name, p] : params) {
            if (!p.requires_grad() || !p.has_grad()) continue;
            for (float& g : p.mutable_grad()) g *= k;
        }
    }
    return norm;
}

void Sgd::step(ParamMap& params) {
    for (auto& [name, p] : params) {
        if (!p.requires_grad() || !p.has_grad()) {
            continue;
        }
        step(name, p.mutable_data(), p.grad());
    }
}

}  // namespace tbe
