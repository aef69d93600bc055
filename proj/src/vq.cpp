#include "scenegen/vq.hpp"

#include <cmath>
#include <stdexcept>

namespace scenegen::vq {

using num::Tensor;

void AutoencoderConfig::validate() const {
    if (input_size <= 0 || f_stages <= 0 || base_channels <= 0) {
        throw std::invalid_argument("vq config: sizes must be positive");
    }
    if (input_size % (1 << f_stages) != 0) {
        throw std::invalid_argument("vq config: input size not divisible by 2^f_stages");
    }
    if (codebook_size < 2) throw std::invalid_argument("vq config: codebook needs >= 2 entries");
    if (codebook_dim <= 0) throw std::invalid_argument("vq config: codebook dim must be positive");
}

std::vector<int> nearest_codebook_indices(const Tensor& latent_rows, const Tensor& entries) {
    if (entries.numel() == 0 || entries.dim(0) == 0) {
        throw std::invalid_argument("quantize: empty codebook");
    }
    const int dim = entries.dim(1);
    if (latent_rows.shape().back() != dim) {
        throw std::invalid_argument("quantize: latent dimension does not match codebook");
    }
    const int n_entries = entries.dim(0);
    const int64_t rows = latent_rows.numel() / dim;
    std::vector<int> tokens(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const float* x = latent_rows.data() + r * dim;
        float best = std::numeric_limits<float>::max();
        int best_idx = 0;
        for (int e = 0; e < n_entries; ++e) {
            const float* row = entries.data() + static_cast<int64_t>(e) * dim;
            float dist = 0.0f;
            for (int j = 0; j < dim; ++j) {
                const float d = x[j] - row[j];
                dist += d * d;
            }
            if (dist < best) { // strict: ties keep the lower index
                best = dist;
                best_idx = e;
            }
        }
        tokens[static_cast<size_t>(r)] = best_idx;
    }
    return tokens;
}

QuantizeResult quantize_latents(const Tensor& latent_rows, const Codebook& codebook) {
    QuantizeResult result;
    result.tokens = nearest_codebook_indices(latent_rows, codebook.entries);
    Tensor rows = num::embedding(codebook.entries, result.tokens);
    if (num::grad_enabled() && latent_rows.requires_grad()) {
        result.quantized = num::straight_through(rows.detach(), latent_rows);
    } else {
        result.quantized = rows.detach();
    }
    return result;
}

// ------------------------------------------------------------------ VqModel

namespace {

// He-style fan-in scaling; the conv stacks carry no normalization layers, so
// the GPT-2 0.02 constant would collapse the signal here.
float conv_init_std(int in_ch, int k) {
    return std::sqrt(2.0f / (static_cast<float>(in_ch) * k * k));
}

int channels_at(int base, int stage) { return base * (stage + 1); }

} // namespace

VqModel::Conv VqModel::make_conv(int out_ch, int in_ch, int k, Rng& rng,
                                 const std::string& name) {
    Conv conv;
    conv.w = Tensor::randn({out_ch, in_ch, k, k}, rng, conv_init_std(in_ch, k), true);
    conv.b = Tensor::zeros({out_ch}, true);
    named_.emplace_back(name + ".w", conv.w);
    named_.emplace_back(name + ".b", conv.b);
    return conv;
}

VqModel::VqModel(const AutoencoderConfig& config, Rng& init_rng) : config_(config) {
    config_.validate();
    codebook_.entries =
        Tensor::randn({config_.codebook_size, config_.codebook_dim}, init_rng, 0.02f, true);
    named_.emplace_back("codebook.entries", codebook_.entries);
    codebook_last_used_.assign(static_cast<size_t>(config_.codebook_size), 0.0f);

    const int stages = config_.f_stages;
    const int base = config_.base_channels;

    // encoder: stem, then per stage a strided conv + residual pair
    enc_.push_back(make_conv(base, 3, 3, init_rng, "enc.stem"));
    for (int s = 0; s < stages; ++s) {
        const int cin = channels_at(base, s);
        const int cout = channels_at(base, s + 1);
        enc_.push_back(make_conv(cout, cin, 3, init_rng, "enc.down" + std::to_string(s)));
        enc_.push_back(make_conv(cout, cout, 3, init_rng, "enc.res" + std::to_string(s) + ".a"));
        enc_.push_back(make_conv(cout, cout, 3, init_rng, "enc.res" + std::to_string(s) + ".b"));
    }
    enc_.push_back(make_conv(config_.codebook_dim, channels_at(base, stages), 3, init_rng,
                             "enc.out"));

    // decoder mirrors the encoder with nearest-neighbor upsampling
    dec_.push_back(make_conv(channels_at(base, stages), config_.codebook_dim, 3, init_rng,
                             "dec.in"));
    for (int s = stages - 1; s >= 0; --s) {
        const int cin = channels_at(base, s + 1);
        const int cout = channels_at(base, s);
        dec_.push_back(make_conv(cin, cin, 3, init_rng, "dec.res" + std::to_string(s) + ".a"));
        dec_.push_back(make_conv(cin, cin, 3, init_rng, "dec.res" + std::to_string(s) + ".b"));
        dec_.push_back(make_conv(cout, cin, 3, init_rng, "dec.up" + std::to_string(s)));
    }
    dec_.push_back(make_conv(3, base, 3, init_rng, "dec.out"));
}

Tensor VqModel::encode_rows(const Tensor& images) const {
    size_t i = 0;
    Tensor x = num::conv2d(images, enc_[i].w, enc_[i].b, 1, 1);
    ++i;
    for (int s = 0; s < config_.f_stages; ++s) {
        x = num::conv2d(num::gelu(x), enc_[i].w, enc_[i].b, 2, 1);
        ++i;
        Tensor h = num::conv2d(num::gelu(x), enc_[i].w, enc_[i].b, 1, 1);
        ++i;
        h = num::conv2d(num::gelu(h), enc_[i].w, enc_[i].b, 1, 1);
        ++i;
        x = num::add(x, h);
    }
    x = num::conv2d(num::gelu(x), enc_[i].w, enc_[i].b, 1, 1);
    return num::nchw_to_rows(x);
}

Tensor VqModel::decode_rows(const Tensor& rows, int batch, int h, int w) const {
    Tensor x = num::rows_to_nchw(rows, batch, h, w);
    size_t i = 0;
    x = num::conv2d(x, dec_[i].w, dec_[i].b, 1, 1);
    ++i;
    for (int s = config_.f_stages - 1; s >= 0; --s) {
        Tensor res = num::conv2d(num::gelu(x), dec_[i].w, dec_[i].b, 1, 1);
        ++i;
        res = num::conv2d(num::gelu(res), dec_[i].w, dec_[i].b, 1, 1);
        ++i;
        x = num::add(x, res);
        x = num::conv2d(num::gelu(num::upsample_nearest2(x)), dec_[i].w, dec_[i].b, 1, 1);
        ++i;
    }
    x = num::conv2d(num::gelu(x), dec_[i].w, dec_[i].b, 1, 1);
    return num::tanh_op(x);
}

void VqModel::reset_codebook_from(const num::Tensor& latent_rows) {
    const int dim = config_.codebook_dim;
    const int64_t rows = latent_rows.numel() / dim;
    if (rows < 1) throw std::invalid_argument("reset_codebook_from: no latent rows");
    float* entries = codebook_.entries.data();
    for (int e = 0; e < config_.codebook_size; ++e) {
        const int64_t src = (static_cast<int64_t>(e) * rows) / config_.codebook_size;
        for (int j = 0; j < dim; ++j) {
            entries[static_cast<int64_t>(e) * dim + j] = latent_rows.data()[src * dim + j];
        }
    }
}

TokenGrid VqModel::encode_to_tokens(const data::Image& image) const {
    if (image.width != config_.input_size || image.height != config_.input_size) {
        throw std::invalid_argument("encode_to_tokens: image size does not match config");
    }
    Tensor batch = data::images_to_tensor({image});
    Tensor rows = encode_rows(batch);
    TokenGrid grid;
    grid.h = config_.latent_size();
    grid.w = config_.latent_size();
    grid.tokens = nearest_codebook_indices(rows, codebook_.entries);
    return grid;
}

data::Image VqModel::decode_tokens(const TokenGrid& grid) const {
    for (int token : grid.tokens) {
        if (token < 0 || token >= config_.codebook_size) {
            throw std::invalid_argument("decode_tokens: token outside the codebook");
        }
    }
    if (grid.count() != static_cast<int>(grid.tokens.size())) {
        throw std::invalid_argument("decode_tokens: grid shape mismatch");
    }
    Tensor rows = num::embedding(codebook_.entries, grid.tokens).detach();
    Tensor image = decode_rows(rows, 1, grid.h, grid.w);
    return data::tensor_to_image(image, 0);
}

std::vector<TokenGrid> VqModel::encode_batch(const std::vector<data::Image>& images) const {
    std::vector<TokenGrid> grids;
    grids.reserve(images.size());
    for (const data::Image& img : images) grids.push_back(encode_to_tokens(img));
    return grids;
}

std::vector<std::pair<std::string, Tensor>> VqModel::named_parameters() { return named_; }

std::vector<Tensor> VqModel::parameters() {
    std::vector<Tensor> out;
    for (auto& [name, tensor] : named_) out.push_back(tensor);
    return out;
}

// ----------------------------------------------------------- discriminator

PatchDiscriminator::PatchDiscriminator(int base_channels, Rng& init_rng) {
    auto make = [&](int out_ch, int in_ch, int k, const std::string& name) {
        Conv conv;
        conv.w = Tensor::randn({out_ch, in_ch, k, k}, init_rng, conv_init_std(in_ch, k), true);
        conv.b = Tensor::zeros({out_ch}, true);
        named_.emplace_back(name + ".w", conv.w);
        named_.emplace_back(name + ".b", conv.b);
        layers_.push_back(conv);
        return conv;
    };
    make(base_channels, 3, 4, "disc.c0");
    make(base_channels * 2, base_channels, 4, "disc.c1");
    make(1, base_channels * 2, 4, "disc.out");
}

Tensor PatchDiscriminator::logits(const Tensor& images) const {
    Tensor x = num::leaky_relu(num::conv2d(images, layers_[0].w, layers_[0].b, 2, 1), 0.2f);
    x = num::leaky_relu(num::conv2d(x, layers_[1].w, layers_[1].b, 2, 1), 0.2f);
    return num::conv2d(x, layers_[2].w, layers_[2].b, 1, 1);
}

std::vector<std::pair<std::string, Tensor>> PatchDiscriminator::named_parameters() {
    return named_;
}

std::vector<Tensor> PatchDiscriminator::parameters() {
    std::vector<Tensor> out;
    for (auto& [name, tensor] : named_) out.push_back(tensor);
    return out;
}

// -------------------------------------------------------------- train step

VqLosses vq_train_step(const Tensor& images, VqModel& model, num::Adam& opt,
                       PatchDiscriminator* disc, num::Adam* disc_opt, int64_t step) {
    if (images.numel() == 0 || images.dim(0) == 0) {
        throw std::invalid_argument("vq_train_step: empty batch");
    }
    const AutoencoderConfig& cfg = model.config();
    const int batch = images.dim(0);
    const int latent = cfg.latent_size();
    const bool adversarial_on =
        cfg.adv_weight > 0.0f && disc != nullptr && step >= cfg.adv_warmup_steps;

    VqLosses losses;
    Tensor recon_values;

    if (step == 0) {
        model.reset_codebook_from(model.encode_rows(images));
    }

    opt.zero_grad();
    std::vector<int> batch_tokens;
    {
        num::Tape tape;
        num::TapeScope scope(tape);

        Tensor z = model.encode_rows(images);
        QuantizeResult q = quantize_latents(z, model.codebook());
        batch_tokens = q.tokens;
        Tensor gathered = num::embedding(model.codebook().entries, q.tokens);

        Tensor recon = model.decode_rows(q.quantized, batch, latent, latent);
        Tensor loss_rec = num::mse_loss(recon, images);
        Tensor loss_cb = num::mse_loss(gathered, z.detach());
        Tensor loss_commit = num::mse_loss(z, gathered.detach());
        Tensor total = num::add(loss_rec, num::add(loss_cb, num::scale(loss_commit, cfg.beta)));

        losses.reconstruction = loss_rec.item();
        losses.codebook = loss_cb.item();
        losses.commitment = loss_commit.item();

        if (adversarial_on) {
            Tensor fake_scores = disc->logits(recon);
            Tensor loss_adv = num::scale(num::mean_all(fake_scores), -1.0f);
            losses.adversarial = loss_adv.item();
            total = num::add(total, num::scale(loss_adv, cfg.adv_weight));
        }

        if (!std::isfinite(total.item())) {
            throw std::runtime_error("vq training diverged at step " + std::to_string(step));
        }
        tape.backward(total);
        recon_values = recon.detach();
    }
    opt.step();

    // dead-entry revival: reseed entries that were not selected for a whole
    // interval from the latents of this batch
    if (cfg.revive_interval > 0) {
        std::vector<float>& last_used = model.codebook_last_used();
        for (int token : batch_tokens) last_used[static_cast<size_t>(token)] = static_cast<float>(step);
        if (step > 0 && step % cfg.revive_interval == 0) {
            const Tensor z_now = model.encode_rows(images);
            const int dim = cfg.codebook_dim;
            const int64_t rows = z_now.numel() / dim;
            float* entries = model.codebook().entries.data();
            int64_t cursor = 0;
            for (int e = 0; e < cfg.codebook_size; ++e) {
                if (step - last_used[static_cast<size_t>(e)] < static_cast<float>(cfg.revive_interval)) continue;
                const int64_t src = cursor++ % rows;
                for (int j = 0; j < dim; ++j) {
                    entries[static_cast<int64_t>(e) * dim + j] = z_now.data()[src * dim + j];
                }
                last_used[static_cast<size_t>(e)] = static_cast<float>(step);
            }
        }
    }

    if (adversarial_on) {
        disc_opt->zero_grad();
        num::Tape tape;
        num::TapeScope scope(tape);
        Tensor real_scores = disc->logits(images);
        Tensor fake_scores = disc->logits(recon_values);
        Tensor loss_d = num::add(num::mean_all(num::relu(num::rsub_scalar(1.0f, real_scores))),
                                 num::mean_all(num::relu(num::add_scalar(fake_scores, 1.0f))));
        losses.discriminator = loss_d.item();
        if (!std::isfinite(loss_d.item())) {
            throw std::runtime_error("discriminator diverged at step " + std::to_string(step));
        }
        tape.backward(loss_d);
        disc_opt->step();
    }
    return losses;
}

} // namespace scenegen::vq
