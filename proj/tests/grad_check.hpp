#pragma once

// Finite-difference gradient harness shared by the unit tests and the
// acceptance suite. The forward pass under test runs in float32; errors are
// normalized so that thresholds stay meaningful near zero.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "scenegen/ops.hpp"
#include "scenegen/optim.hpp"
#include "scenegen/rng.hpp"
#include "scenegen/tensor.hpp"

namespace gradcheck {

using scenegen::Rng;
using namespace scenegen::num;

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

// Compares tape gradients of `input` against central differences of the same
// float32 forward. Returns the worst normalized error over components.
template <typename MakeLoss>
double check_input(Tensor input, MakeLoss make_loss, float h) {
    const std::vector<float> original = input.values();
    input.set_requires_grad(true);
    input.zero_grad();

    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = make_loss();
        tape.backward(loss);
    }
    const std::vector<float> backward_grad = input.grad_vec();

    auto f = [&](const std::vector<float>& p) {
        input.values() = p;
        return static_cast<double>(make_loss().item());
    };
    const std::vector<float> fd_grad = finite_difference_gradient(f, original, h);
    input.values() = original;

    double worst = 0.0;
    for (size_t i = 0; i < fd_grad.size(); ++i) {
        worst = std::max(worst, rel_err(backward_grad[i], fd_grad[i]));
    }
    return worst;
}

// One pass over every differentiable primitive with random small inputs
// (all extents <= 8). Returns the worst error seen.
inline double primitive_suite_worst(uint64_t seed) {
    Rng rng(seed);
    double worst = 0.0;
    const float h = 1e-2f;

    auto wsum = [](const Tensor& t, const Tensor& r) { return sum_all(mul(t, r)); };
    auto bump = [&worst](double e) { worst = std::max(worst, e); };

    // matmul
    {
        Tensor a = Tensor::randn({3, 4}, rng, 1.0f);
        Tensor b = Tensor::randn({4, 5}, rng, 1.0f);
        Tensor r = Tensor::randn({3, 5}, rng, 1.0f);
        bump(check_input(a, [&] { return wsum(matmul(a, b), r); }, h));
        bump(check_input(b, [&] { return wsum(matmul(a, b), r); }, h));
    }
    // conv2d, stride 1 and stride 2
    for (int stride : {1, 2}) {
        Tensor x = Tensor::randn({2, 3, 6, 6}, rng, 1.0f);
        Tensor w = Tensor::randn({4, 3, 3, 3}, rng, 0.5f);
        Tensor b = Tensor::randn({4}, rng, 0.5f);
        const int oh = (6 + 2 - 3) / stride + 1;
        Tensor r = Tensor::randn({2, 4, oh, oh}, rng, 1.0f);
        auto loss = [&] { return wsum(conv2d(x, w, b, stride, 1), r); };
        bump(check_input(x, loss, h));
        bump(check_input(w, loss, h));
        bump(check_input(b, loss, h));
    }
    // layer_norm
    {
        Tensor x = Tensor::randn({5, 7}, rng, 1.0f);
        Tensor g = Tensor::randn({7}, rng, 0.5f);
        Tensor b = Tensor::randn({7}, rng, 0.5f);
        Tensor r = Tensor::randn({5, 7}, rng, 1.0f);
        auto loss = [&] { return wsum(layer_norm(x, g, b), r); };
        bump(check_input(x, loss, h));
        bump(check_input(g, loss, h));
        bump(check_input(b, loss, h));
    }
    // causal multi-head attention
    {
        const int batch = 2, len = 5, dim = 8;
        Tensor q = Tensor::randn({batch * len, dim}, rng, 1.0f);
        Tensor k = Tensor::randn({batch * len, dim}, rng, 1.0f);
        Tensor v = Tensor::randn({batch * len, dim}, rng, 1.0f);
        Tensor r = Tensor::randn({batch * len, dim}, rng, 1.0f);
        auto loss = [&] {
            return wsum(causal_self_attention(q, k, v, batch, len, 2), r);
        };
        bump(check_input(q, loss, h));
        bump(check_input(k, loss, h));
        bump(check_input(v, loss, h));
    }
    // embedding lookup, with a repeated id to exercise accumulation
    {
        Tensor table = Tensor::randn({6, 4}, rng, 1.0f);
        const std::vector<int> ids = {1, 4, 4, 0, 5};
        Tensor r = Tensor::randn({5, 4}, rng, 1.0f);
        bump(check_input(table, [&] { return wsum(embedding(table, ids), r); }, h));
    }
    // softmax cross entropy
    {
        Tensor logits = Tensor::randn({4, 6}, rng, 1.0f);
        const std::vector<int> targets = {0, 5, 2, 2};
        bump(check_input(logits, [&] { return softmax_cross_entropy(logits, targets); }, h));
    }
    // pointwise nonlinearities; inputs kept away from the relu kink
    {
        Tensor x = Tensor::randn({4, 5}, rng, 1.0f);
        for (float& v : x.values()) {
            if (std::abs(v) < 0.15f) v = v < 0.0f ? v - 0.2f : v + 0.2f;
        }
        Tensor r = Tensor::randn({4, 5}, rng, 1.0f);
        bump(check_input(x, [&] { return wsum(relu(x), r); }, 1e-3f));
        bump(check_input(x, [&] { return wsum(leaky_relu(x, 0.2f), r); }, 1e-3f));
        bump(check_input(x, [&] { return wsum(gelu(x), r); }, h));
        bump(check_input(x, [&] { return wsum(tanh_op(x), r); }, h));
    }
    // bias broadcast, elementwise arithmetic
    {
        Tensor x = Tensor::randn({6, 3}, rng, 1.0f);
        Tensor b = Tensor::randn({3}, rng, 1.0f);
        Tensor y = Tensor::randn({6, 3}, rng, 1.0f);
        Tensor r = Tensor::randn({6, 3}, rng, 1.0f);
        auto bias_loss = [&] { return wsum(add_bias(x, b), r); };
        bump(check_input(x, bias_loss, h));
        bump(check_input(b, bias_loss, h));
        bump(check_input(x, [&] { return wsum(add(x, y), r); }, h));
        bump(check_input(x, [&] { return wsum(sub(x, y), r); }, h));
        bump(check_input(x, [&] { return wsum(mul(x, y), r); }, h));
        bump(check_input(x, [&] { return wsum(scale(x, -1.7f), r); }, h));
        bump(check_input(x, [&] { return wsum(rsub_scalar(0.3f, x), r); }, h));
    }
    // reductions and losses
    {
        Tensor x = Tensor::randn({4, 4}, rng, 1.0f);
        Tensor y = Tensor::randn({4, 4}, rng, 1.0f);
        bump(check_input(x, [&] { return mse_loss(x, y); }, h));
        bump(check_input(y, [&] { return mse_loss(x, y); }, h));
        bump(check_input(x, [&] { return mean_all(x); }, h));
        bump(check_input(x, [&] { return sum_all(x); }, h));
    }
    // layout-changing ops
    {
        Tensor x = Tensor::randn({2, 3, 4, 4}, rng, 1.0f);
        Tensor r1 = Tensor::randn({2 * 4 * 4, 3}, rng, 1.0f);
        Tensor r2 = Tensor::randn({2, 3, 8, 8}, rng, 1.0f);
        Tensor r3 = Tensor::randn({2, 3}, rng, 1.0f);
        bump(check_input(x, [&] { return wsum(nchw_to_rows(x), r1); }, h));
        bump(check_input(x, [&] { return wsum(upsample_nearest2(x), r2); }, h));
        bump(check_input(x, [&] { return wsum(global_avg_pool(x), r3); }, h));

        Tensor rows = Tensor::randn({2 * 4 * 4, 3}, rng, 1.0f);
        Tensor r4 = Tensor::randn({2, 3, 4, 4}, rng, 1.0f);
        bump(check_input(rows, [&] { return wsum(rows_to_nchw(rows, 2, 4, 4), r4); }, h));

        Tensor seq = Tensor::randn({2 * 6, 3}, rng, 1.0f);
        Tensor r5 = Tensor::randn({2 * 3, 3}, rng, 1.0f);
        bump(check_input(seq, [&] { return wsum(slice_seq(seq, 2, 6, 2, 3), r5); }, h));
    }
    // dropout with a replayed mask
    {
        Tensor x = Tensor::randn({5, 4}, rng, 1.0f);
        Tensor r = Tensor::randn({5, 4}, rng, 1.0f);
        bump(check_input(x, [&] {
            Rng mask_rng(123);
            return wsum(dropout(x, 0.3f, mask_rng), r);
        }, h));
    }
    // straight-through: forward ignores the soft path by construction, so the
    // check is the analytic one: d(sum(st(hard, x) * r))/dx == r.
    {
        Tensor hard = Tensor::randn({5, 4}, rng, 1.0f);
        Tensor x = Tensor::randn({5, 4}, rng, 1.0f, true);
        Tensor r = Tensor::randn({5, 4}, rng, 1.0f);
        Tape tape;
        {
            TapeScope scope(tape);
            Tensor loss = wsum(straight_through(hard, x), r);
            tape.backward(loss);
        }
        for (int64_t i = 0; i < x.numel(); ++i) {
            bump(rel_err(x.grad_vec()[static_cast<size_t>(i)], r.data()[i]));
        }
    }
    return worst;
}

} // namespace gradcheck
