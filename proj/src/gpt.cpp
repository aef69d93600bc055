#include "scenegen/gpt.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

namespace scenegen::ar {

using num::Tensor;

void TransformerConfig::validate() const {
    if (layers <= 0 || heads <= 0 || dim <= 0) {
        throw std::invalid_argument("transformer config: sizes must be positive");
    }
    if (dim % heads != 0) {
        throw std::invalid_argument("transformer config: heads must divide the embedding dim");
    }
    if (dropout < 0.0f || dropout >= 1.0f) {
        throw std::invalid_argument("transformer config: dropout must be in [0, 1)");
    }
    if (cond_len < 0 || image_tokens <= 0) {
        throw std::invalid_argument("transformer config: context must hold image tokens");
    }
    if (vocab_size <= 0) throw std::invalid_argument("transformer config: empty vocabulary");
}

void SamplerConfig::validate() const {
    if (temperature <= 0.0f) throw std::invalid_argument("sampler: temperature must be positive");
    if (top_k < 1) throw std::invalid_argument("sampler: top_k must be at least 1");
}

GptModel::GptModel(const TransformerConfig& config, Rng& init_rng) : config_(config) {
    config_.validate();
    const int d = config_.dim;
    constexpr float kInitStd = 0.02f; // GPT-2 convention

    auto mat = [&](std::vector<int> shape, const std::string& name) {
        Tensor t = Tensor::randn(std::move(shape), init_rng, kInitStd, true);
        named_.emplace_back(name, t);
        return t;
    };
    auto vec = [&](int n, float fill, const std::string& name) {
        Tensor t = Tensor::full({n}, fill, true);
        named_.emplace_back(name, t);
        return t;
    };

    tok_emb_ = mat({config_.vocab_size, d}, "tok_emb");
    pos_emb_ = mat({config_.context_len(), d}, "pos_emb");
    for (int l = 0; l < config_.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        Layer layer;
        layer.ln1_g = vec(d, 1.0f, p + "ln1.g");
        layer.ln1_b = vec(d, 0.0f, p + "ln1.b");
        layer.wq = mat({d, d}, p + "attn.wq");
        layer.bq = vec(d, 0.0f, p + "attn.bq");
        layer.wk = mat({d, d}, p + "attn.wk");
        layer.bk = vec(d, 0.0f, p + "attn.bk");
        layer.wv = mat({d, d}, p + "attn.wv");
        layer.bv = vec(d, 0.0f, p + "attn.bv");
        layer.wo = mat({d, d}, p + "attn.wo");
        layer.bo = vec(d, 0.0f, p + "attn.bo");
        layer.ln2_g = vec(d, 1.0f, p + "ln2.g");
        layer.ln2_b = vec(d, 0.0f, p + "ln2.b");
        layer.fc_w = mat({d, 4 * d}, p + "mlp.fc_w");
        layer.fc_b = vec(4 * d, 0.0f, p + "mlp.fc_b");
        layer.proj_w = mat({4 * d, d}, p + "mlp.proj_w");
        layer.proj_b = vec(d, 0.0f, p + "mlp.proj_b");
        layers_.push_back(std::move(layer));
    }
    lnf_g_ = vec(d, 1.0f, "ln_f.g");
    lnf_b_ = vec(d, 0.0f, "ln_f.b");
    head_w_ = mat({d, config_.vocab_size}, "head.w");
}

Tensor GptModel::hidden_states(const std::vector<int>& tokens, int batch, int len, bool train,
                               Rng* dropout_rng) const {
    if (static_cast<int>(tokens.size()) != batch * len) {
        throw std::invalid_argument("hidden_states: token count does not match batch layout");
    }
    if (len > config_.context_len()) {
        throw std::invalid_argument("hidden_states: sequence longer than the context");
    }
    for (int t : tokens) {
        if (t < 0 || t >= config_.vocab_size) {
            throw std::invalid_argument("hidden_states: token outside vocabulary");
        }
    }
    const float p = train ? config_.dropout : 0.0f;
    if (p > 0.0f && dropout_rng == nullptr) {
        throw std::invalid_argument("hidden_states: dropout requires an rng");
    }
    auto drop = [&](Tensor x) { return p > 0.0f ? num::dropout(x, p, *dropout_rng) : x; };

    std::vector<int> positions(tokens.size());
    for (int b = 0; b < batch; ++b) {
        for (int i = 0; i < len; ++i) positions[static_cast<size_t>(b) * len + i] = i;
    }

    Tensor x = num::add(num::embedding(tok_emb_, tokens), num::embedding(pos_emb_, positions));
    x = drop(x);
    for (const Layer& layer : layers_) {
        Tensor h = num::layer_norm(x, layer.ln1_g, layer.ln1_b);
        Tensor q = num::add_bias(num::matmul(h, layer.wq), layer.bq);
        Tensor k = num::add_bias(num::matmul(h, layer.wk), layer.bk);
        Tensor v = num::add_bias(num::matmul(h, layer.wv), layer.bv);
        Tensor a = num::causal_self_attention(q, k, v, batch, len, config_.heads);
        a = drop(num::add_bias(num::matmul(a, layer.wo), layer.bo));
        x = num::add(x, a);

        Tensor m = num::layer_norm(x, layer.ln2_g, layer.ln2_b);
        m = num::gelu(num::add_bias(num::matmul(m, layer.fc_w), layer.fc_b));
        m = drop(num::add_bias(num::matmul(m, layer.proj_w), layer.proj_b));
        x = num::add(x, m);
    }
    return num::layer_norm(x, lnf_g_, lnf_b_);
}

Tensor GptModel::forward_logits(const std::vector<int>& sequence) const {
    Tensor h = hidden_states(sequence, 1, static_cast<int>(sequence.size()), false, nullptr);
    return num::matmul(h, head_w_);
}

std::vector<std::pair<std::string, Tensor>> GptModel::named_parameters() { return named_; }

std::vector<Tensor> GptModel::parameters() {
    std::vector<Tensor> out;
    for (auto& [name, tensor] : named_) out.push_back(tensor);
    return out;
}

Tensor ar_loss(const GptModel& model, std::span<const SequenceExample> batch, bool train,
               Rng* dropout_rng) {
    const TransformerConfig& cfg = model.config();
    if (batch.empty()) throw std::invalid_argument("ar_loss: empty batch");

    const int len = cfg.context_len();
    std::vector<int> tokens;
    tokens.reserve(batch.size() * static_cast<size_t>(len));
    std::vector<int> targets;
    targets.reserve(batch.size() * static_cast<size_t>(cfg.image_tokens));
    for (const SequenceExample& ex : batch) {
        if (static_cast<int>(ex.cond.size()) != cfg.cond_len ||
            static_cast<int>(ex.image.size()) != cfg.image_tokens) {
            throw std::invalid_argument("ar_loss: example does not fit the configured context");
        }
        tokens.insert(tokens.end(), ex.cond.begin(), ex.cond.end());
        tokens.insert(tokens.end(), ex.image.begin(), ex.image.end());
        targets.insert(targets.end(), ex.image.begin(), ex.image.end());
    }

    Tensor h = model.hidden_states(tokens, static_cast<int>(batch.size()), len, train,
                                   dropout_rng);
    // position cond_len - 1 predicts the first image token
    Tensor at_image = num::slice_seq(h, static_cast<int>(batch.size()), len, cfg.cond_len - 1,
                                     cfg.image_tokens);
    Tensor logits = num::matmul(at_image, model.head_weights());
    return num::softmax_cross_entropy(logits, targets);
}

// ------------------------------------------------------------- GptDecoder

namespace {

void matvec_add(const float* x, const Tensor& w, const Tensor& b, float* out, int in_dim,
                int out_dim) {
    if (b.defined()) {
        std::memcpy(out, b.data(), sizeof(float) * static_cast<size_t>(out_dim));
    } else {
        std::memset(out, 0, sizeof(float) * static_cast<size_t>(out_dim));
    }
    for (int i = 0; i < in_dim; ++i) {
        const float xi = x[i];
        if (xi == 0.0f) continue;
        const float* row = w.data() + static_cast<int64_t>(i) * out_dim;
        for (int j = 0; j < out_dim; ++j) out[j] += xi * row[j];
    }
}

void layer_norm_inplace(float* x, const float* g, const float* b, int d) {
    double sum = 0.0;
    for (int j = 0; j < d; ++j) sum += x[j];
    const float mean = static_cast<float>(sum / d);
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
        const double c = x[j] - mean;
        var += c * c;
    }
    const float invstd = 1.0f / std::sqrt(static_cast<float>(var / d) + 1e-5f);
    for (int j = 0; j < d; ++j) x[j] = (x[j] - mean) * invstd * g[j] + b[j];
}

float gelu_scalar(float v) {
    const float u = 0.7978845608028654f * (v + 0.044715f * v * v * v);
    return 0.5f * v * (1.0f + std::tanh(u));
}

} // namespace

GptDecoder::GptDecoder(const GptModel& model) : model_(model) {
    const TransformerConfig& cfg = model_.config();
    const size_t cache = static_cast<size_t>(cfg.layers) * cfg.context_len() * cfg.dim;
    k_cache_.assign(cache, 0.0f);
    v_cache_.assign(cache, 0.0f);
    x_.assign(static_cast<size_t>(cfg.dim), 0.0f);
    h_.assign(static_cast<size_t>(cfg.dim), 0.0f);
    q_.assign(static_cast<size_t>(cfg.dim), 0.0f);
    attn_.assign(static_cast<size_t>(cfg.dim), 0.0f);
    mlp_.assign(static_cast<size_t>(4 * cfg.dim), 0.0f);
    logits_.assign(static_cast<size_t>(cfg.vocab_size), 0.0f);
}

void GptDecoder::reset() { fed_ = 0; }

const std::vector<float>& GptDecoder::step(int token) {
    const TransformerConfig& cfg = model_.config();
    const int d = cfg.dim;
    const int dh = d / cfg.heads;
    const int position = fed_;
    if (position >= cfg.context_len()) {
        throw std::invalid_argument("decoder: context exhausted");
    }
    if (token < 0 || token >= cfg.vocab_size) {
        throw std::invalid_argument("decoder: token outside vocabulary");
    }

    const float* te = model_.tok_emb_.data() + static_cast<int64_t>(token) * d;
    const float* pe = model_.pos_emb_.data() + static_cast<int64_t>(position) * d;
    for (int j = 0; j < d; ++j) x_[static_cast<size_t>(j)] = te[j] + pe[j];

    std::vector<float> scores(static_cast<size_t>(position) + 1);
    for (int l = 0; l < cfg.layers; ++l) {
        const GptModel::Layer& layer = model_.layers_[static_cast<size_t>(l)];
        std::memcpy(h_.data(), x_.data(), sizeof(float) * static_cast<size_t>(d));
        layer_norm_inplace(h_.data(), layer.ln1_g.data(), layer.ln1_b.data(), d);

        float* krow = k_cache_.data() +
                      (static_cast<int64_t>(l) * cfg.context_len() + position) * d;
        float* vrow = v_cache_.data() +
                      (static_cast<int64_t>(l) * cfg.context_len() + position) * d;
        matvec_add(h_.data(), layer.wq, layer.bq, q_.data(), d, d);
        matvec_add(h_.data(), layer.wk, layer.bk, krow, d, d);
        matvec_add(h_.data(), layer.wv, layer.bv, vrow, d, d);

        const float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));
        for (int head = 0; head < cfg.heads; ++head) {
            const int off = head * dh;
            float maxv = -1e30f;
            for (int u = 0; u <= position; ++u) {
                const float* ku = k_cache_.data() +
                                  (static_cast<int64_t>(l) * cfg.context_len() + u) * d + off;
                float dot = 0.0f;
                for (int j = 0; j < dh; ++j) dot += q_[static_cast<size_t>(off + j)] * ku[j];
                scores[static_cast<size_t>(u)] = dot * att_scale;
                maxv = std::max(maxv, scores[static_cast<size_t>(u)]);
            }
            float denom = 0.0f;
            for (int u = 0; u <= position; ++u) {
                scores[static_cast<size_t>(u)] = std::exp(scores[static_cast<size_t>(u)] - maxv);
                denom += scores[static_cast<size_t>(u)];
            }
            const float inv = 1.0f / denom;
            for (int j = 0; j < dh; ++j) attn_[static_cast<size_t>(off + j)] = 0.0f;
            for (int u = 0; u <= position; ++u) {
                const float weight = scores[static_cast<size_t>(u)] * inv;
                const float* vu = v_cache_.data() +
                                  (static_cast<int64_t>(l) * cfg.context_len() + u) * d + off;
                for (int j = 0; j < dh; ++j) attn_[static_cast<size_t>(off + j)] += weight * vu[j];
            }
        }
        matvec_add(attn_.data(), layer.wo, layer.bo, h_.data(), d, d);
        for (int j = 0; j < d; ++j) x_[static_cast<size_t>(j)] += h_[static_cast<size_t>(j)];

        std::memcpy(h_.data(), x_.data(), sizeof(float) * static_cast<size_t>(d));
        layer_norm_inplace(h_.data(), layer.ln2_g.data(), layer.ln2_b.data(), d);
        matvec_add(h_.data(), layer.fc_w, layer.fc_b, mlp_.data(), d, 4 * d);
        for (int j = 0; j < 4 * d; ++j) mlp_[static_cast<size_t>(j)] = gelu_scalar(mlp_[static_cast<size_t>(j)]);
        matvec_add(mlp_.data(), layer.proj_w, layer.proj_b, h_.data(), 4 * d, d);
        for (int j = 0; j < d; ++j) x_[static_cast<size_t>(j)] += h_[static_cast<size_t>(j)];
    }

    layer_norm_inplace(x_.data(), model_.lnf_g_.data(), model_.lnf_b_.data(), d);
    matvec_add(x_.data(), model_.head_w_, Tensor(), logits_.data(), d, cfg.vocab_size);
    ++fed_;
    return logits_;
}

// ---------------------------------------------------------------- sampling

std::vector<float> top_k_filter(const std::vector<float>& logits, int k) {
    if (k < 1) throw std::invalid_argument("top_k_filter: k must be at least 1");
    const int v = static_cast<int>(logits.size());
    const int keep = std::min(k, v);

    std::vector<int> order(static_cast<size_t>(v));
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + keep, order.end(), [&](int a, int b) {
        if (logits[static_cast<size_t>(a)] != logits[static_cast<size_t>(b)]) {
            return logits[static_cast<size_t>(a)] > logits[static_cast<size_t>(b)];
        }
        return a < b; // ties at the threshold keep lower ids
    });

    float maxv = logits[static_cast<size_t>(order[0])];
    double denom = 0.0;
    std::vector<float> probs(static_cast<size_t>(v), 0.0f);
    for (int i = 0; i < keep; ++i) {
        const float e = std::exp(logits[static_cast<size_t>(order[static_cast<size_t>(i)])] - maxv);
        probs[static_cast<size_t>(order[static_cast<size_t>(i)])] = e;
        denom += e;
    }
    const float inv = static_cast<float>(1.0 / denom);
    for (float& p : probs) p *= inv;
    return probs;
}

namespace {

int draw_from(const std::vector<float>& probs, Rng& rng) {
    const double u = rng.uniform();
    double cumulative = 0.0;
    int last_positive = 0;
    for (size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0f) continue;
        last_positive = static_cast<int>(i);
        cumulative += probs[i];
        if (u < cumulative) return static_cast<int>(i);
    }
    return last_positive;
}

int pick_image_token(const std::vector<float>& logits, int codebook_size,
                     const SamplerConfig& sampler, Rng& rng) {
    if (sampler.greedy) {
        int best = 0;
        for (int i = 1; i < codebook_size; ++i) {
            if (logits[static_cast<size_t>(i)] > logits[static_cast<size_t>(best)]) best = i;
        }
        return best;
    }
    // restrict to the image-token range, temperature before top-k
    std::vector<float> scaled(static_cast<size_t>(codebook_size));
    for (int i = 0; i < codebook_size; ++i) {
        scaled[static_cast<size_t>(i)] = logits[static_cast<size_t>(i)] / sampler.temperature;
    }
    return draw_from(top_k_filter(scaled, sampler.top_k), rng);
}

} // namespace

vq::TokenGrid sample_tokens(const GptModel& model, const layout::ConditioningSequence& cond,
                            const SamplerConfig& sampler, int grid_h, int grid_w,
                            int codebook_size) {
    sampler.validate();
    const TransformerConfig& cfg = model.config();
    if (cond.length() != cfg.cond_len) {
        throw std::invalid_argument("sample_tokens: conditioning length does not match model");
    }
    if (grid_h * grid_w != cfg.image_tokens) {
        throw std::invalid_argument("sample_tokens: grid does not match the trained context");
    }
    Rng rng(sampler.seed);
    GptDecoder decoder(model);
    const std::vector<float>* logits = nullptr;
    for (int t : cond.tokens) logits = &decoder.step(t);

    vq::TokenGrid grid;
    grid.h = grid_h;
    grid.w = grid_w;
    grid.tokens.reserve(static_cast<size_t>(grid_h) * grid_w);
    for (int i = 0; i < cfg.image_tokens; ++i) {
        const int token = pick_image_token(*logits, codebook_size, sampler, rng);
        grid.tokens.push_back(token);
        if (i + 1 < cfg.image_tokens) logits = &decoder.step(token);
    }
    return grid;
}

vq::TokenGrid sliding_window_sample(const GptModel& model,
                                    std::span<const layout::LayoutObject> objects,
                                    int global_h, int global_w, int window_h, int window_w,
                                    const layout::GridSpec& grid,
                                    const layout::VocabularyMap& vocab, int n_max,
                                    const SamplerConfig& sampler, int codebook_size) {
    sampler.validate();
    const TransformerConfig& cfg = model.config();
    if (global_h < window_h || global_w < window_w) {
        throw std::invalid_argument("sliding_window_sample: window larger than the global grid");
    }
    if (window_h * window_w != cfg.image_tokens) {
        throw std::invalid_argument("sliding_window_sample: window does not match the model");
    }

    Rng rng(sampler.seed);
    GptDecoder decoder(model);
    vq::TokenGrid out;
    out.h = global_h;
    out.w = global_w;
    out.tokens.assign(static_cast<size_t>(global_h) * global_w, -1);

    // When the window stays put along a row, the decoder state is extended by
    // one token instead of being rebuilt.
    int active_wy = -1, active_wx = -1, fed_context = -1;
    const std::vector<float>* logits = nullptr;
    for (int gy = 0; gy < global_h; ++gy) {
        for (int gx = 0; gx < global_w; ++gx) {
            // place the window so the target cell sees the most generated
            // context, clamped at the borders
            const int wy = std::clamp(gy - (window_h - 1), 0, global_h - window_h);
            const int wx = std::clamp(gx - (window_w - 1), 0, global_w - window_w);
            const int prefix = (gy - wy) * window_w + (gx - wx);

            if (wy == active_wy && wx == active_wx && prefix == fed_context + 1) {
                // same window, next cell: feed the token sampled last round
                logits = &decoder.step(out.at(gy, gx - 1));
            } else {
                decoder.reset();
                layout::Viewport vp;
                vp.x0 = static_cast<float>(wx) / global_w;
                vp.y0 = static_cast<float>(wy) / global_h;
                vp.x1 = static_cast<float>(wx + window_w) / global_w;
                vp.y1 = static_cast<float>(wy + window_h) / global_h;
                const layout::ConditioningSequence cond =
                    layout::build_conditioning(objects, n_max, grid, vocab, vp);
                if (cond.length() != cfg.cond_len) {
                    throw std::invalid_argument(
                        "sliding_window_sample: model was not trained with viewport tokens");
                }
                for (int t : cond.tokens) logits = &decoder.step(t);
                for (int i = 0; i < prefix; ++i) {
                    logits = &decoder.step(out.at(wy + i / window_w, wx + i % window_w));
                }
            }
            active_wy = wy;
            active_wx = wx;
            fed_context = prefix;

            out.at(gy, gx) = pick_image_token(*logits, codebook_size, sampler, rng);
        }
    }
    for (int token : out.tokens) {
        if (token < 0) throw std::logic_error("sliding_window_sample: coverage gap");
    }
    return out;
}

std::optional<CropResult> random_quadratic_crop(const data::SceneRecord& record, Rng& rng,
                                                int min_size) {
    const int w = record.image.width, h = record.image.height;
    const int max_side = std::min(w, h);
    if (max_side < min_size) return std::nullopt;

    const int side = rng.uniform_int(min_size, max_side);
    const int x0 = rng.uniform_int(0, w - side);
    const int y0 = rng.uniform_int(0, h - side);

    CropResult result;
    result.record.id = record.id;
    result.record.image = data::crop(record.image, x0, y0, side, side);
    result.record.objects = record.objects; // stay in global coordinates
    result.viewport.x0 = static_cast<float>(x0) / w;
    result.viewport.y0 = static_cast<float>(y0) / h;
    result.viewport.x1 = static_cast<float>(x0 + side) / w;
    result.viewport.y1 = static_cast<float>(y0 + side) / h;
    return result;
}

} // namespace scenegen::ar
