#include "scenegen/ops.hpp"

#include <cmath>
#include <cstring>
#include <memory>
#include <string>

namespace scenegen::num {

namespace {

bool tracked(const Tensor& t) { return grad_enabled() && t.requires_grad(); }

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
}

// Fixed-association lane accumulators: vectorizes without relaxing FP
// semantics, so results stay bit-reproducible.
float dot(const float* a, const float* b, int64_t n) {
    constexpr int kLanes = 16;
    float acc[kLanes] = {};
    int64_t i = 0;
    for (; i + kLanes <= n; i += kLanes) {
        for (int l = 0; l < kLanes; ++l) acc[l] += a[i + l] * b[i + l];
    }
    float tail = 0.0f;
    for (; i < n; ++i) tail += a[i] * b[i];
    float total = tail;
    for (int l = 0; l < kLanes; ++l) total += acc[l];
    return total;
}

void axpy(float alpha, const float* x, float* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

} // namespace

void require_no_grad(const char* op, const Tensor& t) {
    if (tracked(t)) {
        throw UnsupportedOperationError(std::string(op) +
                                        ": no registered derivative for this operation");
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (tracked(a) || tracked(b)) {
        out.set_requires_grad(true);
        active_tape()->record([a = a, b = b, out]() mutable {
            if (!out.has_grad()) return;
            const float* og = out.grad_vec().data();
            const int64_t m = out.numel();
            if (a.requires_grad()) axpy(1.0f, og, a.grad(), m);
            if (b.requires_grad()) axpy(1.0f, og, b.grad(), m);
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (tracked(a) || tracked(b)) {
        out.set_requires_grad(true);
        active_tape()->record([a = a, b = b, out]() mutable {
            if (!out.has_grad()) return;
            const float* og = out.grad_vec().data();
            const int64_t m = out.numel();
            if (a.requires_grad()) axpy(1.0f, og, a.grad(), m);
            if (b.requires_grad()) axpy(-1.0f, og, b.grad(), m);
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    Tensor out = Tensor::zeros(a.shape());
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (tracked(a) || tracked(b)) {
        out.set_requires_grad(true);
        active_tape()->record([a = a, b = b, out]() mutable {
            if (!out.has_grad()) return;
            const float* og = out.grad_vec().data();
            const int64_t m = out.numel();
            if (a.requires_grad()) {
                float* ag = a.grad();
                for (int64_t i = 0; i < m; ++i) ag[i] += og[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                float* bg = b.grad();
                for (int64_t i = 0; i < m; ++i) bg[i] += og[i] * a.data()[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, float s) {
    Tensor out = Tensor::zeros(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = s * x.data()[i];
    if (tracked(x)) {
        out.set_requires_grad(true);
        active_tape()->record([x = x, out, s]() mutable {
            if (!out.has_grad()) return;
            axpy(s, out.grad_vec().data(), x.grad(), out.numel());
        });
    }
    return out;
}

Tensor add_scalar(const Tensor& x, float c) {
    Tensor out = Tensor::zeros(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] + c;
    if (tracked(x)) {
        out.set_requires_grad(true);
        active_tape()->record([x = x, out]() mutable {
            if (!out.has_grad()) return;
            axpy(1.0f, out.grad_vec().data(), x.grad(), out.numel());
        });
    }
    return out;
}

Tensor rsub_scalar(float c, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = c - x.data()[i];
    if (tracked(x)) {
        out.set_requires_grad(true);
        active_tape()->record([x = x, out]() mutable {
            if (!out.has_grad()) return;
            axpy(-1.0f, out.grad_vec().data(), x.grad(), out.numel());
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 1 || b.ndim() != 2) {
        throw std::invalid_argument("matmul: expects a [..., K] lhs and [K, N] rhs");
    }
    const int k = a.shape().back();
    if (k != b.dim(0)) throw std::invalid_argument("matmul: inner dimensions differ");
    const int n = b.dim(1);
    const int64_t m = a.numel() / k;

    std::vector<int> out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
    Tensor out = Tensor::zeros(out_shape);

    const float* ap = a.data();
    const float* bp = b.data();
    float* cp = out.data();
    for (int64_t i = 0; i < m; ++i) {
        float* crow = cp + i * n;
        const float* arow = ap + i * k;
        for (int kk = 0; kk < k; ++kk) {
            const float aik = arow[kk];
            if (aik != 0.0f) axpy(aik, bp + static_cast<int64_t>(kk) * n, crow, n);
        }
    }

    if (tracked(a) || tracked(b)) {
        out.set_requires_grad(true);
        active_tape()->record([a = a, b = b, out, m, k = k, n]() mutable {
            if (!out.has_grad()) return;
            const float* og = out.grad_vec().data();
            if (a.requires_grad()) {
                float* ag = a.grad();
                const float* bp2 = b.data();
                for (int64_t i = 0; i < m; ++i) {
                    const float* grow = og + i * n;
                    float* arow = ag + i * k;
                    for (int kk = 0; kk < k; ++kk) {
                        arow[kk] += dot(grow, bp2 + static_cast<int64_t>(kk) * n, n);
                    }
                }
            }
            if (b.requires_grad()) {
                float* bg = b.grad();
                const float* ap2 = a.data();
                for (int64_t i = 0; i < m; ++i) {
                    const float* grow = og + i * n;
                    const float* arow = ap2 + i * k;
                    for (int kk = 0; kk < k; ++kk) {
                        const float aik = arow[kk];
                        if (aik != 0.0f) axpy(aik, grow, bg + static_cast<int64_t>(kk) * n, n);
                    }
                }
            }
        });
    }
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
    if (bias.ndim() != 1 || x.shape().back() != bias.dim(0)) {
        throw std::invalid_argument("add_bias: bias must match trailing dimension");
    }
    const int d = bias.dim(0);
    const int64_t rows = x.numel() / d;
    Tensor out = Tensor::zeros(x.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const float* xrow = x.data() + r * d;
        float* orow = out.data() + r * d;
        for (int j = 0; j < d; ++j) orow[j] = xrow[j] + bias.data()[j];
    }
    if (tracked(x) || tracked(bias)) {
        out.set_requires_grad(true);
        active_tape()->record([x = x, bias = bias, out, rows, d]() mutable {
            if (!out.has_grad()) return;
            const float* og = out.grad_vec().data();
            if (x.requires_grad()) axpy(1.0f, og, x.grad(), out.numel());
            if (bias.requires_grad()) {
                float* bg = bias.grad();
                for (int64_t r = 0; r < rows; ++r) {
                    axpy(1.0f, og + r * d, bg, d);
                }
            }
        });
    }
    return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor pointwise(const Tensor& x, Fwd fwd, Bwd dfdx) {
    Tensor out = Tensor::zeros(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = fwd(x.data()[i]);
    if (tracked(x)) {
        out.set_requires_grad(true);
        active_tape()->record([x = x, out, dfdx]() mutable {
            if (!out.has_grad()) return;
            const float* og = out.grad_vec().data();
            float* xg = x.grad();
            const int64_t m = out.numel();
            for (int64_t i = 0; i < m; ++i) xg[i] += og[i] * dfdx(x.data()[i]);
        });
    }
    return out;
}

} // namespace

Tensor relu(const Tensor& x) {
    return pointwise(
        x, [](float v) { return v > 0.0f ? v : 0.0f; },
        [](float v) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor leaky_relu(const Tensor& x, float negative_slope) {
    return pointwise(
        x, [negative_slope](float v) { return v > 0.0f ? v : negative_slope * v; },
        [negative_slope](float v) { return v > 0.0f ? 1.0f : negative_slope; });
}

Tensor gelu(const Tensor& x) {
    constexpr float kSqrt2OverPi = 0.7978845608028654f;
    constexpr float kCubic = 0.044715f;
    return pointwise(
        x,
        [](float v) {
            const float u = kSqrt2OverPi * (v + kCubic * v * v * v);
            return 0.5f * v * (1.0f + std::tanh(u));
        },
        [](float v) {
            const float u = kSqrt2OverPi * (v + kCubic * v * v * v);
            const float t = std::tanh(u);
            const float du = kSqrt2OverPi * (1.0f + 3.0f * kCubic * v * v);
            return 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du;
        });
}

Tensor tanh_op(const Tensor& x) {
    return pointwise(
        x, [](float v) { return std::tanh(v); },
        [](float v) {
            const float t = std::tanh(v);
            return 1.0f - t * t;
        });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    const int d = x.shape().back();
    if (gain.numel() != d || bias.numel() != d) {
        throw std::invalid_argument("layer_norm: gain/bias must match trailing dimension");
    }
    const int64_t rows = x.numel() / d;
    Tensor out = Tensor::zeros(x.shape());

    auto stats = std::make_shared<std::vector<float>>(rows * 2); // mean, invstd per row
    for (int64_t r = 0; r < rows; ++r) {
        const float* xr = x.data() + r * d;
        double sum = 0.0;
        for (int j = 0; j < d; ++j) sum += xr[j];
        const float mean = static_cast<float>(sum / d);
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            const double c = xr[j] - mean;
            var += c * c;
        }
        const float invstd = 1.0f / std::sqrt(static_cast<float>(var / d) + eps);
        (*stats)[r * 2] = mean;
        (*stats)[r * 2 + 1] = invstd;
        float* orow = out.data() + r * d;
        for (int j = 0; j < d; ++j) {
            orow[j] = (xr[j] - mean) * invstd * gain.data()[j] + bias.data()[j];
        }
    }

    if (tracked(x) || tracked(gain) || tracked(bias)) {
        out.set_requires_grad(true);
        active_tape()->record([x = x, gain = gain, bias = bias, out, stats, rows, d]() mutable {
            if (!out.has_grad()) return;
            const float* og = out.grad_vec().data();
            float* xg = x.requires_grad() ? x.grad() : nullptr;
            float* gg = gain.requires_grad() ? gain.grad() : nullptr;
            float* bg = bias.requires_grad() ? bias.grad() : nullptr;
            std::vector<float> xhat(static_cast<size_t>(d));
            for (int64_t r = 0; r < rows; ++r) {
                const float mean = (*stats)[r * 2];
                const float invstd = (*stats)[r * 2 + 1];
                const float* xr = x.data() + r * d;
                const float* gr = og + r * d;
                float sum1 = 0.0f, sum2 = 0.0f;
                for (int j = 0; j < d; ++j) {
                    xhat[j] = (xr[j] - mean) * invstd;
                    const float dxhat = gr[j] * gain.data()[j];
                    sum1 += dxhat;
                    sum2 += dxhat * xhat[j];
                }
                if (gg || bg) {
                    for (int j = 0; j < d; ++j) {
                        if (gg) gg[j] += gr[j] * xhat[j];
                        if (bg) bg[j] += gr[j];
                    }
                }
                if (xg) {
                    float* xgr = xg + r * d;
                    const float inv_d = 1.0f / static_cast<float>(d);
                    for (int j = 0; j < d; ++j) {
                        const float dxhat = gr[j] * gain.data()[j];
                        xgr[j] += invstd * (dxhat - sum1 * inv_d - xhat[j] * sum2 * inv_d);
                    }
                }
            }
        });
    }
    return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) throw std::invalid_argument("embedding: table must be [V, D]");
    const int v = table.dim(0);
    const int d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || id >= v) throw std::invalid_argument("embedding: id out of range");
    }
    Tensor out = Tensor::zeros({static_cast<int>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i) {
        std::memcpy(out.data() + i * d, table.data() + static_cast<int64_t>(ids[i]) * d,
                    sizeof(float) * static_cast<size_t>(d));
    }
    if (tracked(table)) {
        out.set_requires_grad(true);
        active_tape()->record([table = table, out, ids, d]() mutable {
            if (!out.has_grad()) return;
            const float* og = out.grad_vec().data();
            float* tg = table.grad();
            for (size_t i = 0; i < ids.size(); ++i) {
                axpy(1.0f, og + i * d, tg + static_cast<int64_t>(ids[i]) * d, d);
            }
        });
    }
    return out;
}

Tensor slice_seq(const Tensor& x, int batch, int seq_len, int start, int len) {
    const int d = x.shape().back();
    if (x.numel() != static_cast<int64_t>(batch) * seq_len * d) {
        throw std::invalid_argument("slice_seq: shape does not factor as [B, L, D]");
    }
    if (start < 0 || len <= 0 || start + len > seq_len) {
        throw std::invalid_argument("slice_seq: window out of range");
    }
    Tensor out = Tensor::zeros({batch * len, d});
    for (int b = 0; b < batch; ++b) {
        const float* src = x.data() + (static_cast<int64_t>(b) * seq_len + start) * d;
        float* dst = out.data() + static_cast<int64_t>(b) * len * d;
        std::memcpy(dst, src, sizeof(float) * static_cast<size_t>(len) * d);
    }
    if (tracked(x)) {
        out.set_requires_grad(true);
        active_tape()->record([x = x, out, batch, seq_len, start, len, d]() mutable {
            if (!out.has_grad()) return;
            const float* og = out.grad_vec().data();
            float* xg = x.grad();
            for (int b = 0; b < batch; ++b) {
                axpy(1.0f, og + static_cast<int64_t>(b) * len * d,
                     xg + (static_cast<int64_t>(b) * seq_len + start) * d,
                     static_cast<int64_t>(len) * d);
            }
        });
    }
    return out;
}

Tensor causal_self_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                             int batch, int seq_len, int heads) {
    const int d = q.shape().back();
    if (q.shape() != k.shape() || q.shape() != v.shape()) {
        throw std::invalid_argument("attention: q/k/v shapes differ");
    }
    if (q.numel() != static_cast<int64_t>(batch) * seq_len * d) {
        throw std::invalid_argument("attention: shape does not factor as [B, L, D]");
    }
    if (heads <= 0 || d % heads != 0) {
        throw std::invalid_argument("attention: head count must divide model dimension");
    }
    const int dh = d / heads;
    const float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));

    Tensor out = Tensor::zeros(q.shape());
    // probs[(b*H + h)*L*L + t*L + u], zero above the diagonal
    auto probs = std::make_shared<std::vector<float>>(
        static_cast<size_t>(batch) * heads * seq_len * seq_len, 0.0f);

    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
            float* pr_base = probs->data() +
                             (static_cast<int64_t>(b) * heads + h) * seq_len * seq_len;
            for (int t = 0; t < seq_len; ++t) {
                const float* qrow = q.data() + (static_cast<int64_t>(b) * seq_len + t) * d + h * dh;
                float* pr = pr_base + static_cast<int64_t>(t) * seq_len;
                float maxv = -1e30f;
                for (int u = 0; u <= t; ++u) {
                    const float* krow =
                        k.data() + (static_cast<int64_t>(b) * seq_len + u) * d + h * dh;
                    pr[u] = dot(qrow, krow, dh) * att_scale;
                    maxv = std::max(maxv, pr[u]);
                }
                float denom = 0.0f;
                for (int u = 0; u <= t; ++u) {
                    pr[u] = std::exp(pr[u] - maxv);
                    denom += pr[u];
                }
                const float inv = 1.0f / denom;
                float* orow = out.data() + (static_cast<int64_t>(b) * seq_len + t) * d + h * dh;
                for (int u = 0; u <= t; ++u) {
                    pr[u] *= inv;
                    const float* vrow =
                        v.data() + (static_cast<int64_t>(b) * seq_len + u) * d + h * dh;
                    axpy(pr[u], vrow, orow, dh);
                }
            }
        }
    }

    if (tracked(q) || tracked(k) || tracked(v)) {
        out.set_requires_grad(true);
        active_tape()->record([q = q, k = k, v = v, out, probs, batch, seq_len, heads, dh, d, att_scale]() mutable {
            if (!out.has_grad()) return;
            const float* og = out.grad_vec().data();
            float* qg = q.requires_grad() ? q.grad() : nullptr;
            float* kg = k.requires_grad() ? k.grad() : nullptr;
            float* vg = v.requires_grad() ? v.grad() : nullptr;
            std::vector<float> dp(static_cast<size_t>(seq_len));
            for (int b = 0; b < batch; ++b) {
                for (int h = 0; h < heads; ++h) {
                    const float* pr_base =
                        probs->data() + (static_cast<int64_t>(b) * heads + h) * seq_len * seq_len;
                    for (int t = 0; t < seq_len; ++t) {
                        const float* pr = pr_base + static_cast<int64_t>(t) * seq_len;
                        const float* dorow =
                            og + (static_cast<int64_t>(b) * seq_len + t) * d + h * dh;
                        float sum_pd = 0.0f;
                        for (int u = 0; u <= t; ++u) {
                            const float* vrow =
                                v.data() + (static_cast<int64_t>(b) * seq_len + u) * d + h * dh;
                            dp[u] = dot(dorow, vrow, dh);
                            sum_pd += pr[u] * dp[u];
                            if (vg) {
                                axpy(pr[u], dorow,
                                     vg + (static_cast<int64_t>(b) * seq_len + u) * d + h * dh, dh);
                            }
                        }
                        const float* qrow =
                            q.data() + (static_cast<int64_t>(b) * seq_len + t) * d + h * dh;
                        for (int u = 0; u <= t; ++u) {
                            const float ds = pr[u] * (dp[u] - sum_pd) * att_scale;
                            if (ds == 0.0f) continue;
                            const float* krow =
                                k.data() + (static_cast<int64_t>(b) * seq_len + u) * d + h * dh;
                            if (qg) {
                                axpy(ds, krow,
                                     qg + (static_cast<int64_t>(b) * seq_len + t) * d + h * dh, dh);
                            }
                            if (kg) {
                                axpy(ds, qrow,
                                     kg + (static_cast<int64_t>(b) * seq_len + u) * d + h * dh, dh);
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor dropout(const Tensor& x, float rate, Rng& rng) {
    if (rate < 0.0f || rate >= 1.0f) throw std::invalid_argument("dropout: rate must be in [0, 1)");
    if (rate == 0.0f) return x;
    const float keep_scale = 1.0f / (1.0f - rate);
    auto mask = std::make_shared<std::vector<float>>(static_cast<size_t>(x.numel()));
    Tensor out = Tensor::zeros(x.shape());
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) {
        const float m = rng.uniform() >= rate ? keep_scale : 0.0f;
        (*mask)[static_cast<size_t>(i)] = m;
        out.data()[i] = x.data()[i] * m;
    }
    if (tracked(x)) {
        out.set_requires_grad(true);
        active_tape()->record([x = x, out, mask]() mutable {
            if (!out.has_grad()) return;
            const float* og = out.grad_vec().data();
            float* xg = x.grad();
            const int64_t m = out.numel();
            for (int64_t i = 0; i < m; ++i) xg[i] += og[i] * (*mask)[static_cast<size_t>(i)];
        });
    }
    return out;
}

namespace {

struct ConvDims {
    int b, c, h, w, oc, kh, kw, oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
    if (x.ndim() != 4 || w.ndim() != 4) {
        throw std::invalid_argument("conv2d: expects [B,C,H,W] input and [OC,C,KH,KW] weights");
    }
    ConvDims dims{};
    dims.b = x.dim(0);
    dims.c = x.dim(1);
    dims.h = x.dim(2);
    dims.w = x.dim(3);
    dims.oc = w.dim(0);
    dims.kh = w.dim(2);
    dims.kw = w.dim(3);
    if (w.dim(1) != dims.c) throw std::invalid_argument("conv2d: channel mismatch");
    if (stride <= 0) throw std::invalid_argument("conv2d: stride must be positive");
    dims.oh = (dims.h + 2 * pad - dims.kh) / stride + 1;
    dims.ow = (dims.w + 2 * pad - dims.kw) / stride + 1;
    if (dims.oh <= 0 || dims.ow <= 0) throw std::invalid_argument("conv2d: empty output");
    return dims;
}

// cols: [OH*OW, C*KH*KW] for one batch element
void im2col(const float* x, const ConvDims& d, int stride, int pad, float* cols) {
    const int ckk = d.c * d.kh * d.kw;
    std::memset(cols, 0, sizeof(float) * static_cast<size_t>(d.oh) * d.ow * ckk);
    for (int oy = 0; oy < d.oh; ++oy) {
        for (int ox = 0; ox < d.ow; ++ox) {
            float* col = cols + (static_cast<int64_t>(oy) * d.ow + ox) * ckk;
            for (int c = 0; c < d.c; ++c) {
                for (int ky = 0; ky < d.kh; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int kx = 0; kx < d.kw; ++kx) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= d.w) continue;
                        col[(c * d.kh + ky) * d.kw + kx] =
                            x[(static_cast<int64_t>(c) * d.h + iy) * d.w + ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const float* cols, const ConvDims& d, int stride, int pad, float* xg) {
    const int ckk = d.c * d.kh * d.kw;
    for (int oy = 0; oy < d.oh; ++oy) {
        for (int ox = 0; ox < d.ow; ++ox) {
            const float* col = cols + (static_cast<int64_t>(oy) * d.ow + ox) * ckk;
            for (int c = 0; c < d.c; ++c) {
                for (int ky = 0; ky < d.kh; ++ky) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= d.h) continue;
                    for (int kx = 0; kx < d.kw; ++kx) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= d.w) continue;
                        xg[(static_cast<int64_t>(c) * d.h + iy) * d.w + ix] +=
                            col[(c * d.kh + ky) * d.kw + kx];
                    }
                }
            }
        }
    }
}

} // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    const ConvDims d = conv_dims(x, w, stride, pad);
    if (bias.defined() && bias.numel() != d.oc) {
        throw std::invalid_argument("conv2d: bias size mismatch");
    }
    const int ckk = d.c * d.kh * d.kw;
    const int64_t plane = static_cast<int64_t>(d.oh) * d.ow;
    Tensor out = Tensor::zeros({d.b, d.oc, d.oh, d.ow});

    std::vector<float> cols(static_cast<size_t>(plane) * ckk);
    for (int b = 0; b < d.b; ++b) {
        im2col(x.data() + static_cast<int64_t>(b) * d.c * d.h * d.w, d, stride, pad, cols.data());
        float* ob = out.data() + static_cast<int64_t>(b) * d.oc * plane;
        for (int oc = 0; oc < d.oc; ++oc) {
            const float* wrow = w.data() + static_cast<int64_t>(oc) * ckk;
            const float bv = bias.defined() ? bias.data()[oc] : 0.0f;
            float* orow = ob + static_cast<int64_t>(oc) * plane;
            for (int64_t r = 0; r < plane; ++r) {
                orow[r] = dot(cols.data() + r * ckk, wrow, ckk) + bv;
            }
        }
    }

    const bool need = tracked(x) || tracked(w) || (bias.defined() && tracked(bias));
    if (need) {
        out.set_requires_grad(true);
        active_tape()->record([x = x, w = w, bias = bias, out, d, stride, pad, ckk, plane]() mutable {
            if (!out.has_grad()) return;
            const float* og = out.grad_vec().data();
            float* xg = x.requires_grad() ? x.grad() : nullptr;
            float* wg = w.requires_grad() ? w.grad() : nullptr;
            float* bg = (bias.defined() && bias.requires_grad()) ? bias.grad() : nullptr;
            std::vector<float> cols(static_cast<size_t>(plane) * ckk);
            std::vector<float> dcols;
            if (xg) dcols.resize(static_cast<size_t>(plane) * ckk);
            for (int b = 0; b < d.b; ++b) {
                im2col(x.data() + static_cast<int64_t>(b) * d.c * d.h * d.w, d, stride, pad,
                       cols.data());
                if (xg) std::fill(dcols.begin(), dcols.end(), 0.0f);
                const float* ob = og + static_cast<int64_t>(b) * d.oc * plane;
                for (int oc = 0; oc < d.oc; ++oc) {
                    const float* grow = ob + static_cast<int64_t>(oc) * plane;
                    const float* wrow = w.data() + static_cast<int64_t>(oc) * ckk;
                    float* wgrow = wg ? wg + static_cast<int64_t>(oc) * ckk : nullptr;
                    for (int64_t r = 0; r < plane; ++r) {
                        const float g = grow[r];
                        if (g == 0.0f) continue;
                        if (wgrow) axpy(g, cols.data() + r * ckk, wgrow, ckk);
                        if (xg) axpy(g, wrow, dcols.data() + r * ckk, ckk);
                        if (bg) bg[oc] += g;
                    }
                }
                if (xg) {
                    col2im_add(dcols.data(), d, stride, pad,
                               xg + static_cast<int64_t>(b) * d.c * d.h * d.w);
                }
            }
        });
    }
    return out;
}

Tensor upsample_nearest2(const Tensor& x) {
    if (x.ndim() != 4) throw std::invalid_argument("upsample_nearest2: expects [B,C,H,W]");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor out = Tensor::zeros({b, c, 2 * h, 2 * w});
    for (int64_t p = 0; p < static_cast<int64_t>(b) * c; ++p) {
        const float* src = x.data() + p * h * w;
        float* dst = out.data() + p * 4 * h * w;
        for (int y = 0; y < 2 * h; ++y) {
            const float* srow = src + static_cast<int64_t>(y / 2) * w;
            float* drow = dst + static_cast<int64_t>(y) * 2 * w;
            for (int xx = 0; xx < 2 * w; ++xx) drow[xx] = srow[xx / 2];
        }
    }
    if (tracked(x)) {
        out.set_requires_grad(true);
        active_tape()->record([x = x, out, b = b, c, h, w = w]() mutable {
            if (!out.has_grad()) return;
            const float* og = out.grad_vec().data();
            float* xg = x.grad();
            for (int64_t p = 0; p < static_cast<int64_t>(b) * c; ++p) {
                float* gsrc = xg + p * h * w;
                const float* gdst = og + p * 4 * h * w;
                for (int y = 0; y < 2 * h; ++y) {
                    const float* drow = gdst + static_cast<int64_t>(y) * 2 * w;
                    float* srow = gsrc + static_cast<int64_t>(y / 2) * w;
                    for (int xx = 0; xx < 2 * w; ++xx) srow[xx / 2] += drow[xx];
                }
            }
        });
    }
    return out;
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.ndim() != 4) throw std::invalid_argument("global_avg_pool: expects [B,C,H,W]");
    const int b = x.dim(0), c = x.dim(1);
    const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    Tensor out = Tensor::zeros({b, c});
    for (int64_t p = 0; p < static_cast<int64_t>(b) * c; ++p) {
        double acc = 0.0;
        const float* src = x.data() + p * hw;
        for (int64_t i = 0; i < hw; ++i) acc += src[i];
        out.data()[p] = static_cast<float>(acc / static_cast<double>(hw));
    }
    if (tracked(x)) {
        out.set_requires_grad(true);
        active_tape()->record([x = x, out, b = b, c, hw]() mutable {
            if (!out.has_grad()) return;
            const float* og = out.grad_vec().data();
            float* xg = x.grad();
            const float inv = 1.0f / static_cast<float>(hw);
            for (int64_t p = 0; p < static_cast<int64_t>(b) * c; ++p) {
                const float g = og[p] * inv;
                float* dst = xg + p * hw;
                for (int64_t i = 0; i < hw; ++i) dst[i] += g;
            }
        });
    }
    return out;
}

Tensor nchw_to_rows(const Tensor& x) {
    if (x.ndim() != 4) throw std::invalid_argument("nchw_to_rows: expects [B,C,H,W]");
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int64_t hw = static_cast<int64_t>(h) * w;
    Tensor out = Tensor::zeros({b * h * w, c});
    for (int bb = 0; bb < b; ++bb) {
        const float* src = x.data() + static_cast<int64_t>(bb) * c * hw;
        float* dst = out.data() + static_cast<int64_t>(bb) * hw * c;
        for (int cc = 0; cc < c; ++cc) {
            for (int64_t i = 0; i < hw; ++i) dst[i * c + cc] = src[cc * hw + i];
        }
    }
    if (tracked(x)) {
        out.set_requires_grad(true);
        active_tape()->record([x = x, out, b = b, c, hw]() mutable {
            if (!out.has_grad()) return;
            const float* og = out.grad_vec().data();
            float* xg = x.grad();
            for (int bb = 0; bb < b; ++bb) {
                float* gsrc = xg + static_cast<int64_t>(bb) * c * hw;
                const float* gdst = og + static_cast<int64_t>(bb) * hw * c;
                for (int cc = 0; cc < c; ++cc) {
                    for (int64_t i = 0; i < hw; ++i) gsrc[cc * hw + i] += gdst[i * c + cc];
                }
            }
        });
    }
    return out;
}

Tensor rows_to_nchw(const Tensor& x, int batch, int h, int w) {
    if (x.ndim() != 2) throw std::invalid_argument("rows_to_nchw: expects [B*h*w, C]");
    const int c = x.dim(1);
    const int64_t hw = static_cast<int64_t>(h) * w;
    if (x.dim(0) != batch * h * w) {
        throw std::invalid_argument("rows_to_nchw: row count does not match lattice");
    }
    Tensor out = Tensor::zeros({batch, c, h, w});
    for (int bb = 0; bb < batch; ++bb) {
        const float* src = x.data() + static_cast<int64_t>(bb) * hw * c;
        float* dst = out.data() + static_cast<int64_t>(bb) * c * hw;
        for (int cc = 0; cc < c; ++cc) {
            for (int64_t i = 0; i < hw; ++i) dst[cc * hw + i] = src[i * c + cc];
        }
    }
    if (tracked(x)) {
        out.set_requires_grad(true);
        active_tape()->record([x = x, out, batch, c, hw]() mutable {
            if (!out.has_grad()) return;
            const float* og = out.grad_vec().data();
            float* xg = x.grad();
            for (int bb = 0; bb < batch; ++bb) {
                float* gsrc = xg + static_cast<int64_t>(bb) * hw * c;
                const float* gdst = og + static_cast<int64_t>(bb) * c * hw;
                for (int cc = 0; cc < c; ++cc) {
                    for (int64_t i = 0; i < hw; ++i) gsrc[i * c + cc] += gdst[cc * hw + i];
                }
            }
        });
    }
    return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets) {
    if (logits.ndim() != 2) throw std::invalid_argument("softmax_cross_entropy: logits must be [M, V]");
    const int m = logits.dim(0);
    const int v = logits.dim(1);
    if (static_cast<int>(targets.size()) != m) {
        throw std::invalid_argument("softmax_cross_entropy: target count mismatch");
    }
    for (int t : targets) {
        if (t < 0 || t >= v) throw std::invalid_argument("softmax_cross_entropy: target out of range");
    }

    double total = 0.0;
    for (int i = 0; i < m; ++i) {
        const float* row = logits.data() + static_cast<int64_t>(i) * v;
        float maxv = row[0];
        for (int j = 1; j < v; ++j) maxv = std::max(maxv, row[j]);
        double denom = 0.0;
        for (int j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j] - maxv));
        total += std::log(denom) - static_cast<double>(row[targets[static_cast<size_t>(i)]] - maxv);
    }
    Tensor out = Tensor::scalar(static_cast<float>(total / m));

    if (tracked(logits)) {
        out.set_requires_grad(true);
        active_tape()->record([logits = logits, out, targets, m, v = v]() mutable {
            if (!out.has_grad()) return;
            const float g = out.grad_vec()[0] / static_cast<float>(m);
            float* lg = logits.grad();
            for (int i = 0; i < m; ++i) {
                const float* row = logits.data() + static_cast<int64_t>(i) * v;
                float maxv = row[0];
                for (int j = 1; j < v; ++j) maxv = std::max(maxv, row[j]);
                double denom = 0.0;
                for (int j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j] - maxv));
                float* grow = lg + static_cast<int64_t>(i) * v;
                const float inv = static_cast<float>(1.0 / denom);
                for (int j = 0; j < v; ++j) {
                    const float p = std::exp(row[j] - maxv) * inv;
                    grow[j] += g * (p - (j == targets[static_cast<size_t>(i)] ? 1.0f : 0.0f));
                }
            }
        });
    }
    return out;
}

Tensor mse_loss(const Tensor& a, const Tensor& b) {
    check_same_shape("mse_loss", a, b);
    const int64_t n = a.numel();
    if (n == 0) throw std::invalid_argument("mse_loss: empty input");
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(a.data()[i]) - b.data()[i];
        acc += d * d;
    }
    Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
    if (tracked(a) || tracked(b)) {
        out.set_requires_grad(true);
        active_tape()->record([a = a, b = b, out, n]() mutable {
            if (!out.has_grad()) return;
            const float g = out.grad_vec()[0] * 2.0f / static_cast<float>(n);
            float* ag = a.requires_grad() ? a.grad() : nullptr;
            float* bg = b.requires_grad() ? b.grad() : nullptr;
            for (int64_t i = 0; i < n; ++i) {
                const float d = a.data()[i] - b.data()[i];
                if (ag) ag[i] += g * d;
                if (bg) bg[i] -= g * d;
            }
        });
    }
    return out;
}

Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) acc += x.data()[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc));
    if (tracked(x)) {
        out.set_requires_grad(true);
        active_tape()->record([x = x, out]() mutable {
            if (!out.has_grad()) return;
            const float g = out.grad_vec()[0];
            float* xg = x.grad();
            const int64_t m = x.numel();
            for (int64_t i = 0; i < m; ++i) xg[i] += g;
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x) {
    const int64_t n = x.numel();
    if (n == 0) throw std::invalid_argument("mean_all: empty input");
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += x.data()[i];
    Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
    if (tracked(x)) {
        out.set_requires_grad(true);
        active_tape()->record([x = x, out, n]() mutable {
            if (!out.has_grad()) return;
            const float g = out.grad_vec()[0] / static_cast<float>(n);
            float* xg = x.grad();
            for (int64_t i = 0; i < n; ++i) xg[i] += g;
        });
    }
    return out;
}

Tensor straight_through(const Tensor& hard, const Tensor& soft) {
    check_same_shape("straight_through", hard, soft);
    if (hard.requires_grad()) {
        throw std::invalid_argument("straight_through: quantized side must be detached");
    }
    Tensor out = Tensor::from_data(hard.shape(), hard.values());
    if (tracked(soft)) {
        out.set_requires_grad(true);
        active_tape()->record([soft = soft, out]() mutable {
            if (!out.has_grad()) return;
            axpy(1.0f, out.grad_vec().data(), soft.grad(), out.numel());
        });
    }
    return out;
}

} // namespace scenegen::num
