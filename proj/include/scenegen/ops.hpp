#pragma once

#include <stdexcept>
#include <vector>

#include "scenegen/tensor.hpp"

namespace scenegen::num {

// A differentiable primitive executed while a Tape is active records its
// backward step onto that tape. Without an active tape everything here is
// plain forward arithmetic.

struct UnsupportedOperationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Call sites that move values out of the autodiff world (pixel export,
// sampling) use this to refuse silently breaking a recorded chain.
void require_no_grad(const char* op, const Tensor& t);

// elementwise, identical shapes
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, float s);
Tensor add_scalar(const Tensor& x, float c);
Tensor rsub_scalar(float c, const Tensor& x); // c - x

// a: [..., K] treated as [M, K]; b: [K, N] -> [M-rows shape..., N]
Tensor matmul(const Tensor& a, const Tensor& b);

// x: [..., D], bias: [D]
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, float negative_slope);
Tensor gelu(const Tensor& x);
Tensor tanh_op(const Tensor& x);

// normalization over the trailing dimension with learned gain/bias
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  float eps = 1e-5f);

// table: [V, D]; ids in [0, V) -> [n, D]
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

// x viewed as [B, L, D]; copies rows [start, start+len) of each sequence
Tensor slice_seq(const Tensor& x, int batch, int seq_len, int start, int len);

// q, k, v: [B*L, D]; multi-head scaled dot-product attention where position
// t attends to positions <= t only.
Tensor causal_self_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                             int batch, int seq_len, int heads);

// inverted-scale dropout; rate 0 is a true no-op
Tensor dropout(const Tensor& x, float rate, Rng& rng);

// x: [B, C, H, W]; w: [OC, C, KH, KW]; bias: [OC] (may be undefined)
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride, int pad);

Tensor upsample_nearest2(const Tensor& x);

// x: [B, C, H, W] -> [B, C]
Tensor global_avg_pool(const Tensor& x);

// layout changes between conv lattices and per-cell rows
Tensor nchw_to_rows(const Tensor& x);                            // -> [B*H*W, C]
Tensor rows_to_nchw(const Tensor& x, int batch, int h, int w);   // <- [B*h*w, C]

// logits: [M, V] (leading dims folded); targets.size() == M; mean NLL
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets);

Tensor mse_loss(const Tensor& a, const Tensor& b);
Tensor mean_all(const Tensor& x);
Tensor sum_all(const Tensor& x);

// Forward takes the values of `hard`; gradient flows to `soft` unchanged.
// `hard` must not itself require grad.
Tensor straight_through(const Tensor& hard, const Tensor& soft);

} // namespace scenegen::num
