#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "scenegen/gpt.hpp"
#include "scenegen/layout.hpp"
#include "scenegen/scene.hpp"
#include "scenegen/vq.hpp"

namespace scenegen::cli {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key=value configuration with dotted section names. Every key has a
// default; parsing rejects unknown keys, and validate() checks the
// cross-module invariants before any compute happens.
struct RunConfig {
    uint64_t seed = 0;

    // data generation + filtering
    int data_count = 10000;
    int data_canvas = 64;
    int data_categories = 16;
    int data_min_objects = 3;
    int data_max_objects = 8;
    int data_min_size = 12;
    int data_max_size = 26;
    float data_max_occlusion = 0.15f;
    int filter_min_objects = 3;
    int filter_max_objects = 8;
    float filter_min_area = 0.02f;
    std::string data_augment = "flips"; // flips | flips+crops

    // stage 1
    int vq_input_size = 64;
    int vq_f_stages = 3;
    int vq_base_channels = 16;
    int vq_codebook_size = 256;
    int vq_codebook_dim = 32;
    float vq_beta = 0.25f;
    float vq_adv_weight = 0.0f;
    int vq_adv_warmup = 1000;
    int vq_revive_interval = 50;
    int vq_steps = 1600;
    int vq_batch = 8;
    float vq_lr = 1e-3f;
    int vq_lr_decay_step = 1000; // absolute step; 0 keeps the rate constant
    float vq_lr_decay_scale = 0.25f;

    // layout codec
    int layout_n_positions = 1024;
    int layout_n_max = 8;

    // stage 2
    int ar_layers = 4;
    int ar_heads = 4;
    int ar_dim = 128;
    float ar_dropout = 0.1f;
    int ar_steps = 6000;
    int ar_batch = 8;
    float ar_lr = 1e-3f;
    int ar_lr_decay_step = 4500; // absolute step; 0 keeps the rate constant
    float ar_lr_decay_scale = 0.25f;
    bool ar_viewport = true;
    int ar_crop_min_size = 32;     // 0 disables random quadratic crops
    float ar_crop_full_prob = 0.3f; // chance of training on the uncropped canvas

    // sampling defaults
    float sampler_temperature = 1.0f;
    int sampler_top_k = 100;

    // evaluation
    int eval_images = 2048;
    int eval_crop_size = 32;
    int eval_extractor_steps = 400;
    uint64_t eval_extractor_seed = 17;
    float eval_box_tolerance = 0.3f;

    static RunConfig load(const std::string& path); // defaults + overrides
    static RunConfig parse_text(const std::string& text);
    std::string serialize() const; // resolved snapshot, stable order
    void validate() const;         // throws ConfigError naming the invariant

    // derived pieces
    layout::GridSpec grid() const { return layout::GridSpec::make(layout_n_positions); }
    layout::VocabularyMap vocabulary() const {
        return layout::VocabularyMap::make(vq_codebook_size, data_categories, grid());
    }
    int latent_side() const { return vq_input_size >> vq_f_stages; }
    int cond_len() const { return 3 * layout_n_max + (ar_viewport ? 2 : 0); }

    vq::AutoencoderConfig vq_config() const;
    ar::TransformerConfig ar_config() const;
    data::SceneGenConfig scene_config() const;
    data::FilterRule filter_rule() const;
    ar::SamplerConfig sampler_config() const;
};

} // namespace scenegen::cli
