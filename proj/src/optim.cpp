#include "scenegen/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace scenegen::num {

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
    if (config_.lr <= 0.0f || config_.eps <= 0.0f) {
        throw std::invalid_argument("adam: lr and eps must be positive");
    }
    if (config_.beta1 < 0.0f || config_.beta1 >= 1.0f || config_.beta2 < 0.0f ||
        config_.beta2 >= 1.0f) {
        throw std::invalid_argument("adam: betas must be in [0, 1)");
    }
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const Tensor& p : params_) {
        m_.emplace_back(p.numel(), 0.0f);
        v_.emplace_back(p.numel(), 0.0f);
    }
}

void Adam::step() {
    t_ += 1;
    const float bc1 = 1.0f - std::pow(config_.beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(config_.beta2, static_cast<float>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad()) continue;
        const std::vector<float>& g = p.grad_vec();
        if (g.size() != static_cast<size_t>(p.numel())) {
            throw std::invalid_argument("adam: gradient/parameter shape mismatch");
        }
        std::vector<float>& m = m_[i];
        std::vector<float>& v = v_[i];
        float* pd = p.data();
        for (size_t j = 0; j < g.size(); ++j) {
            m[j] = config_.beta1 * m[j] + (1.0f - config_.beta1) * g[j];
            v[j] = config_.beta2 * v[j] + (1.0f - config_.beta2) * g[j] * g[j];
            const float mhat = m[j] / bc1;
            const float vhat = v[j] / bc2;
            pd[j] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

std::vector<float> finite_difference_gradient(
    const std::function<double(const std::vector<float>&)>& f,
    std::vector<float> point, float h) {
    if (h <= 0.0f) throw std::invalid_argument("finite_difference_gradient: h must be positive");
    std::vector<float> grad(point.size());
    for (size_t i = 0; i < point.size(); ++i) {
        const float saved = point[i];
        const float hi = saved + h;
        const float lo = saved - h;
        point[i] = hi;
        const double plus = f(point);
        point[i] = lo;
        const double minus = f(point);
        point[i] = saved;
        // divide by the step that was actually representable
        grad[i] = static_cast<float>((plus - minus) /
                                     (static_cast<double>(hi) - static_cast<double>(lo)));
    }
    return grad;
}

} // namespace scenegen::num
