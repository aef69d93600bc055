#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "scenegen/image.hpp"
#include "scenegen/ops.hpp"
#include "scenegen/optim.hpp"
#include "scenegen/rng.hpp"

namespace scenegen::vq {

// Raster-scan grid of codebook indices for one image.
struct TokenGrid {
    int h = 0;
    int w = 0;
    std::vector<int> tokens;

    int count() const { return h * w; }
    int& at(int y, int x) { return tokens[static_cast<size_t>(y) * w + x]; }
    int at(int y, int x) const { return tokens[static_cast<size_t>(y) * w + x]; }
};

struct AutoencoderConfig {
    int input_size = 64; // square inputs
    int f_stages = 3;
    int base_channels = 16;
    int codebook_size = 256;
    int codebook_dim = 32;
    float beta = 0.25f;
    float adv_weight = 0.0f; // 0 disables the discriminator
    int adv_warmup_steps = 1000;
    // Entries idle for this many steps are reseeded from live encoder
    // outputs during training (0 disables revival).
    int revive_interval = 50;

    int latent_size() const { return input_size >> f_stages; }
    void validate() const;
};

struct Codebook {
    num::Tensor entries; // [size, dim]

    int size() const { return entries.dim(0); }
    int dim() const { return entries.dim(1); }
};

// Exhaustive nearest neighbor over codebook rows (squared Euclidean),
// ties broken toward the lower index.
std::vector<int> nearest_codebook_indices(const num::Tensor& latent_rows,
                                          const num::Tensor& entries);

struct QuantizeResult {
    std::vector<int> tokens;
    // Values are the selected codebook rows. When the latents are on an
    // active tape the gradient passes straight through to them.
    num::Tensor quantized;
};

QuantizeResult quantize_latents(const num::Tensor& latent_rows, const Codebook& codebook);

// Stage-1 model: convolutional encoder/decoder around the codebook.
class VqModel {
public:
    VqModel(const AutoencoderConfig& config, Rng& init_rng);

    const AutoencoderConfig& config() const { return config_; }
    Codebook& codebook() { return codebook_; }
    const Codebook& codebook() const { return codebook_; }

    // [B, 3, H, W] -> latent rows [B*h*w, dim]
    num::Tensor encode_rows(const num::Tensor& images) const;
    // quantized rows [B*h*w, dim] -> [B, 3, 8*h', 8*w'] in [-1, 1]
    num::Tensor decode_rows(const num::Tensor& rows, int batch, int h, int w) const;

    // Replaces every codebook row with an encoder output drawn from
    // latent_rows (strided, deterministic). Called once at the start of
    // training so the whole codebook starts inside the data distribution
    // instead of collapsing onto the few entries nearest the origin.
    void reset_codebook_from(const num::Tensor& latent_rows);

    // training-side usage bookkeeping for dead-entry revival; part of the
    // checkpointed state so resumed runs replay identically
    std::vector<float>& codebook_last_used() { return codebook_last_used_; }

    TokenGrid encode_to_tokens(const data::Image& image) const;
    data::Image decode_tokens(const TokenGrid& grid) const; // works on any grid size
    std::vector<TokenGrid> encode_batch(const std::vector<data::Image>& images) const;

    std::vector<std::pair<std::string, num::Tensor>> named_parameters();
    std::vector<num::Tensor> parameters();

private:
    struct Conv {
        num::Tensor w, b;
    };
    Conv make_conv(int out_ch, int in_ch, int k, Rng& rng, const std::string& name);

    AutoencoderConfig config_;
    Codebook codebook_;
    std::vector<float> codebook_last_used_;
    std::vector<Conv> enc_;
    std::vector<Conv> dec_;
    std::vector<std::pair<std::string, num::Tensor>> named_;
};

// PatchGAN-style critic: one realism score per receptive-field patch.
class PatchDiscriminator {
public:
    PatchDiscriminator(int base_channels, Rng& init_rng);

    num::Tensor logits(const num::Tensor& images) const; // [B, 1, h', w']

    std::vector<std::pair<std::string, num::Tensor>> named_parameters();
    std::vector<num::Tensor> parameters();

private:
    struct Conv {
        num::Tensor w, b;
    };
    std::vector<Conv> layers_;
    std::vector<std::pair<std::string, num::Tensor>> named_;
};

struct VqLosses {
    float reconstruction = 0.0f;
    float codebook = 0.0f;
    float commitment = 0.0f;
    std::optional<float> adversarial;
    std::optional<float> discriminator;
};

// One optimizer step on encoder/decoder/codebook, plus an alternating
// discriminator step once the adversarial term is active. Throws
// std::runtime_error naming the step when the loss goes non-finite.
VqLosses vq_train_step(const num::Tensor& images, VqModel& model, num::Adam& opt,
                       PatchDiscriminator* disc, num::Adam* disc_opt, int64_t step);

} // namespace scenegen::vq
