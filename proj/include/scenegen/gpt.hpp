#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scenegen/layout.hpp"
#include "scenegen/ops.hpp"
#include "scenegen/rng.hpp"
#include "scenegen/scene.hpp"
#include "scenegen/vq.hpp"

namespace scenegen::ar {

struct TransformerConfig {
    int layers = 4;
    int heads = 4;
    int dim = 128;
    float dropout = 0.1f;
    int cond_len = 26;     // conditioning tokens per sequence
    int image_tokens = 64; // h * w of the latent grid
    int vocab_size = 1297;

    int context_len() const { return cond_len + image_tokens; }
    void validate() const;
};

// Decoder-only transformer over the shared layout/image vocabulary.
class GptModel {
public:
    GptModel(const TransformerConfig& config, Rng& init_rng);

    const TransformerConfig& config() const { return config_; }

    // tokens: batch | len flattened; returns hidden states [B*L, D]
    num::Tensor hidden_states(const std::vector<int>& tokens, int batch, int len, bool train,
                              Rng* dropout_rng) const;

    // logits for every position of one sequence: [len, vocab]
    num::Tensor forward_logits(const std::vector<int>& sequence) const;

    const num::Tensor& head_weights() const { return head_w_; }

    std::vector<std::pair<std::string, num::Tensor>> named_parameters();
    std::vector<num::Tensor> parameters();

private:
    friend class GptDecoder;

    struct Layer {
        num::Tensor ln1_g, ln1_b;
        num::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        num::Tensor ln2_g, ln2_b;
        num::Tensor fc_w, fc_b, proj_w, proj_b;
    };

    TransformerConfig config_;
    num::Tensor tok_emb_; // [vocab, dim]
    num::Tensor pos_emb_; // [context, dim]
    std::vector<Layer> layers_;
    num::Tensor lnf_g_, lnf_b_;
    num::Tensor head_w_; // [dim, vocab]
    std::vector<std::pair<std::string, num::Tensor>> named_;
};

struct SequenceExample {
    std::vector<int> cond;  // length == config.cond_len
    std::vector<int> image; // length == config.image_tokens, codebook ids
};

// Mean NLL over the image-token positions only; conditioning positions do
// not enter the loss.
num::Tensor ar_loss(const GptModel& model, std::span<const SequenceExample> batch, bool train,
                    Rng* dropout_rng);

// Incremental decoding with a key/value cache; inference only.
class GptDecoder {
public:
    explicit GptDecoder(const GptModel& model);

    void reset();
    int fed() const { return fed_; }
    // Feeds `token` at the next position and returns logits for what follows.
    const std::vector<float>& step(int token);

private:
    const GptModel& model_;
    std::vector<float> k_cache_, v_cache_; // [layers][context][dim]
    std::vector<float> x_, h_, q_, attn_, mlp_, logits_;
    int fed_ = 0;
};

struct SamplerConfig {
    float temperature = 1.0f;
    int top_k = 100;
    uint64_t seed = 0;
    bool greedy = false; // stands in for the T -> 0 limit

    void validate() const;
};

// Keeps the k largest logits (ties resolved toward lower ids), softmaxes the
// survivors; everything else gets probability 0.
std::vector<float> top_k_filter(const std::vector<float>& logits, int k);

// Draws h*w image tokens autoregressively given a conditioning prefix.
vq::TokenGrid sample_tokens(const GptModel& model, const layout::ConditioningSequence& cond,
                            const SamplerConfig& sampler, int grid_h, int grid_w,
                            int codebook_size);

// Raster-scan generation of a latent grid larger than the training window.
// The window slides to keep the freshest context; conditioning is rebuilt per
// window from the global layout plus that window's viewport tokens.
vq::TokenGrid sliding_window_sample(const GptModel& model,
                                    std::span<const layout::LayoutObject> objects,
                                    int global_h, int global_w, int window_h, int window_w,
                                    const layout::GridSpec& grid,
                                    const layout::VocabularyMap& vocab, int n_max,
                                    const SamplerConfig& sampler, int codebook_size);

struct CropResult {
    data::SceneRecord record;  // cropped pixels, layout still in global coords
    layout::Viewport viewport; // crop footprint on the global canvas
};

// Square crop of uniform random size in [min_size, min(W, H)] at uniform
// random position. nullopt signals the record is too small and is skipped.
std::optional<CropResult> random_quadratic_crop(const data::SceneRecord& record, Rng& rng,
                                                int min_size);

} // namespace scenegen::ar
