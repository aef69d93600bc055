#include "scenegen/tensor.hpp"

#include <stdexcept>

namespace scenegen::num {

int64_t shape_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int extent : shape) {
        if (extent < 0) throw std::invalid_argument("tensor shape has negative extent");
        n *= extent;
    }
    return n;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->value.assign(static_cast<size_t>(shape_numel(shape)), 0.0f);
    t.impl_->shape = std::move(shape);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(std::vector<int> shape, float value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (float& v : t.impl_->value) v = value;
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> values, bool requires_grad) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw std::invalid_argument("tensor data length does not match shape");
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->value = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, float stddev, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (float& v : t.impl_->value) v = stddev * rng.gaussian();
    return t;
}

Tensor Tensor::scalar(float value) {
    return from_data({1}, {value});
}

float* Tensor::grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), 0.0f);
    return impl_->grad.data();
}

void Tensor::zero_grad() {
    impl_->grad.assign(impl_->value.size(), 0.0f);
}

Tensor Tensor::detach() const {
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = impl_->shape;
    t.impl_->value = impl_->value; // value copy; detached views are small here
    t.impl_->requires_grad = false;
    return t;
}

float Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item() requires a scalar tensor");
    return impl_->value[0];
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* active_tape() { return g_active_tape; }
bool grad_enabled() { return g_active_tape != nullptr; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) {
    g_active_tape = &tape;
}

TapeScope::~TapeScope() {
    g_active_tape = previous_;
}

void Tape::backward(Tensor& loss) {
    if (loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar");
    }
    loss.grad()[0] += 1.0f;
    for (size_t i = entries_.size(); i-- > 0;) {
        entries_[i]();
    }
}

} // namespace scenegen::num
