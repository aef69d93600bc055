#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "scenegen/tensor.hpp"

namespace scenegen::num {

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

// Adam with bias correction. Moment buffers are zero at t = 0 and advance in
// lockstep with the parameters they belong to; both are checkpointable.
class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig config);

    // One update from the gradients currently stored on the parameters.
    // Parameters without an allocated gradient are treated as zero-grad.
    void step();
    void zero_grad();

    int64_t t() const { return t_; }
    void set_t(int64_t t) { t_ = t; }
    void set_lr(float lr) { config_.lr = lr; }
    const AdamConfig& config() const { return config_; }

    size_t size() const { return params_.size(); }
    const std::vector<Tensor>& params() const { return params_; }
    std::vector<float>& moment1(size_t i) { return m_[i]; }
    std::vector<float>& moment2(size_t i) { return v_[i]; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    AdamConfig config_;
    int64_t t_ = 0;
};

// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h for every component.
std::vector<float> finite_difference_gradient(
    const std::function<double(const std::vector<float>&)>& f,
    std::vector<float> point, float h);

} // namespace scenegen::num
