#include "bimamsleep/optimizer.hpp"

#include "bimamsleep/error.hpp"

#include <cmath>

namespace bimamsleep {

Adam::Adam(std::vector<ParamTensor*> params, AdamConfig cfg)
    : params_(std::move(params))
    , cfg_(cfg)
{
    for (const auto* p : params_) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
    }
}

void Adam::step(double lr)
{
    for (const auto* p : params_) {
        if (p->grad.shape() != p->value.shape()) {
            throw ShapeError("adam: gradient shape mismatch for " + p->name);
        }
        if (!p->grad.all_finite()) {
            throw NumericError("adam: non-finite gradient in parameter '" + p->name + "'");
        }
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& value = params_[k]->value;
        const auto& grad = params_[k]->grad;
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double g = grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            value[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
        }
    }
}

double clip_grad_norm(const std::vector<ParamTensor*>& params, double max_norm)
{
    double sq = 0.0;
    for (const auto* p : params) {
        for (double g : p->grad.values()) {
            sq += g * g;
        }
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && std::isfinite(norm)) {
        const double scale = max_norm / norm;
        for (auto* p : params) {
            for (auto& g : p->grad.values()) {
                g *= scale;
            }
        }
    }
    return norm;
}

} // namespace bimamsleep
