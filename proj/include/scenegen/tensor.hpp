#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "scenegen/rng.hpp"

namespace scenegen::num {

// Dense row-major float32 tensor. Copies are shallow: tensors share one
// underlying buffer, which is also how parameter identity works for autodiff
// (the gradient lives next to the values it belongs to).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float value, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<float> values,
                            bool requires_grad = false);
    static Tensor randn(std::vector<int> shape, Rng& rng, float stddev,
                        bool requires_grad = false);
    static Tensor scalar(float value);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(impl_->value.size()); }

    float* data() { return impl_->value.data(); }
    const float* data() const { return impl_->value.data(); }
    std::vector<float>& values() { return impl_->value; }
    const std::vector<float>& values() const { return impl_->value; }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool enable) { impl_->requires_grad = enable; }

    // Lazily allocated, zero-initialized, same length as the values.
    float* grad();
    const std::vector<float>& grad_vec() const { return impl_->grad; }
    bool has_grad() const { return !impl_->grad.empty(); }
    void zero_grad();

    // Shares the value buffer but never participates in differentiation.
    Tensor detach() const;

    float item() const;

    // Stable identity of the underlying buffer; keys gradient maps.
    const void* id() const { return impl_.get(); }
    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    struct Impl {
        std::vector<int> shape;
        std::vector<float> value;
        std::vector<float> grad;
        bool requires_grad = false;
    };

    std::shared_ptr<Impl> impl_;

    friend class Tape;
    friend Tensor alias_no_grad(const Tensor&);
};

int64_t shape_numel(const std::vector<int>& shape);

// Record of executed differentiable primitives. Entries are appended in
// execution order, so the list itself is a topological order of the graph
// and replaying it in reverse implements the chain rule.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_fn) {
        entries_.push_back(std::move(backward_fn));
    }

    // Seeds d(loss)/d(loss) = 1 and replays recorded entries in reverse.
    // Gradients accumulate (+=) into every tensor's grad buffer, so repeated
    // uses of one tensor sum as required. Throws std::invalid_argument when
    // the loss is not scalar.
    void backward(Tensor& loss);

    size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

private:
    std::vector<std::function<void()>> entries_;
};

// Ops consult the active tape: with none installed they run forward-only.
Tape* active_tape();

class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

bool grad_enabled();

} // namespace scenegen::num
