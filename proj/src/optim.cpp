#include "procver/optim.hpp"

#include <cmath>
#include <numbers>

namespace procver {

void AdamState::init(const std::vector<Parameter*>& params) {
    m.clear();
    v.clear();
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Parameter* p : params) {
        m.push_back(Tensor::zeros(p->value.shape));
        v.push_back(Tensor::zeros(p->value.shape));
    }
    step_count = 0;
}

void AdamState::step(const std::vector<Parameter*>& params, double lr) {
    if (m.size() != params.size() || v.size() != params.size()) {
        throw ShapeError("adam: moment slots do not match parameter count");
    }
    ++step_count;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step_count));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step_count));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        if (!p.value.same_shape(m[i])) {
            throw ShapeError("adam: parameter '" + p.name + "' changed shape");
        }
        for (std::size_t j = 0; j < p.value.data.size(); ++j) {
            const double g = p.grad.data[j];
            if (!std::isfinite(g)) {
                throw NumericError("adam: non-finite gradient in parameter '" + p.name + "'");
            }
            m[i].data[j] = config.beta1 * m[i].data[j] + (1.0 - config.beta1) * g;
            v[i].data[j] = config.beta2 * v[i].data[j] + (1.0 - config.beta2) * g * g;
            const double m_hat = m[i].data[j] / bc1;
            const double v_hat = v[i].data[j] / bc2;
            // decay is decoupled: it sees the pre-update value, not the gradient
            p.value.data[j] -= lr * config.weight_decay * p.value.data[j];
            p.value.data[j] -= lr * m_hat / (std::sqrt(v_hat) + config.eps);
        }
    }
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr) {
    if (total_steps == 0) {
        throw ConfigError("cosine_lr: total_steps must be positive");
    }
    if (step >= total_steps) {
        return 0.0;
    }
    const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

double clip_global_norm(const std::vector<Parameter*>& params, double max_norm) {
    double sq = 0.0;
    for (const Parameter* p : params) {
        for (double g : p->grad.data) {
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (Parameter* p : params) {
            for (double& g : p->grad.data) {
                g *= scale;
            }
        }
    }
    return norm;
}

} // namespace procver
