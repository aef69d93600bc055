#include "scenegen/config.hpp"

#include <charconv>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace scenegen::cli {

namespace {

std::string trim(const std::string& s) {
    const size_t begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const size_t end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::string format_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

struct Field {
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
T parse_number(const std::string& key, const std::string& value);

template <>
int parse_number<int>(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        const int v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + value + "'");
    }
}

template <>
uint64_t parse_number<uint64_t>(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        const uint64_t v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + value + "'");
    }
}

template <>
float parse_number<float>(const std::string& key, const std::string& value) {
    try {
        size_t used = 0;
        const float v = std::stof(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config: bad boolean for " + key + ": '" + value + "'");
}

// declaration order below is the snapshot order
const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = [] {
        std::vector<std::pair<std::string, Field>> f;
        auto add_u64 = [&](const std::string& key, uint64_t RunConfig::* member) {
            f.push_back({key,
                         {[member](const RunConfig& c) { return std::to_string(c.*member); },
                          [member, key](RunConfig& c, const std::string& v) {
                              c.*member = parse_number<uint64_t>(key, v);
                          }}});
        };
        auto add_int = [&](const std::string& key, int RunConfig::* member) {
            f.push_back({key,
                         {[member](const RunConfig& c) { return std::to_string(c.*member); },
                          [member, key](RunConfig& c, const std::string& v) {
                              c.*member = parse_number<int>(key, v);
                          }}});
        };
        auto add_float = [&](const std::string& key, float RunConfig::* member) {
            f.push_back({key,
                         {[member](const RunConfig& c) { return format_float(c.*member); },
                          [member, key](RunConfig& c, const std::string& v) {
                              c.*member = parse_number<float>(key, v);
                          }}});
        };
        auto add_bool = [&](const std::string& key, bool RunConfig::* member) {
            f.push_back({key,
                         {[member](const RunConfig& c) { return c.*member ? "true" : "false"; },
                          [member, key](RunConfig& c, const std::string& v) {
                              c.*member = parse_bool(key, v);
                          }}});
        };
        auto add_string = [&](const std::string& key, std::string RunConfig::* member) {
            f.push_back({key,
                         {[member](const RunConfig& c) { return c.*member; },
                          [member](RunConfig& c, const std::string& v) { c.*member = v; }}});
        };

        add_u64("seed", &RunConfig::seed);
        add_int("data.count", &RunConfig::data_count);
        add_int("data.canvas", &RunConfig::data_canvas);
        add_int("data.categories", &RunConfig::data_categories);
        add_int("data.min_objects", &RunConfig::data_min_objects);
        add_int("data.max_objects", &RunConfig::data_max_objects);
        add_int("data.min_size", &RunConfig::data_min_size);
        add_int("data.max_size", &RunConfig::data_max_size);
        add_float("data.max_occlusion", &RunConfig::data_max_occlusion);
        add_int("data.filter_min_objects", &RunConfig::filter_min_objects);
        add_int("data.filter_max_objects", &RunConfig::filter_max_objects);
        add_float("data.filter_min_area", &RunConfig::filter_min_area);
        add_string("data.augment", &RunConfig::data_augment);
        add_int("vq.input_size", &RunConfig::vq_input_size);
        add_int("vq.f_stages", &RunConfig::vq_f_stages);
        add_int("vq.base_channels", &RunConfig::vq_base_channels);
        add_int("vq.codebook_size", &RunConfig::vq_codebook_size);
        add_int("vq.codebook_dim", &RunConfig::vq_codebook_dim);
        add_float("vq.beta", &RunConfig::vq_beta);
        add_float("vq.adv_weight", &RunConfig::vq_adv_weight);
        add_int("vq.adv_warmup", &RunConfig::vq_adv_warmup);
        add_int("vq.revive_interval", &RunConfig::vq_revive_interval);
        add_int("vq.steps", &RunConfig::vq_steps);
        add_int("vq.batch", &RunConfig::vq_batch);
        add_float("vq.lr", &RunConfig::vq_lr);
        add_int("vq.lr_decay_step", &RunConfig::vq_lr_decay_step);
        add_float("vq.lr_decay_scale", &RunConfig::vq_lr_decay_scale);
        add_int("layout.n_positions", &RunConfig::layout_n_positions);
        add_int("layout.n_max", &RunConfig::layout_n_max);
        add_int("ar.layers", &RunConfig::ar_layers);
        add_int("ar.heads", &RunConfig::ar_heads);
        add_int("ar.dim", &RunConfig::ar_dim);
        add_float("ar.dropout", &RunConfig::ar_dropout);
        add_int("ar.steps", &RunConfig::ar_steps);
        add_int("ar.batch", &RunConfig::ar_batch);
        add_float("ar.lr", &RunConfig::ar_lr);
        add_int("ar.lr_decay_step", &RunConfig::ar_lr_decay_step);
        add_float("ar.lr_decay_scale", &RunConfig::ar_lr_decay_scale);
        add_bool("ar.viewport", &RunConfig::ar_viewport);
        add_int("ar.crop_min_size", &RunConfig::ar_crop_min_size);
        add_float("ar.crop_full_prob", &RunConfig::ar_crop_full_prob);
        add_float("sampler.temperature", &RunConfig::sampler_temperature);
        add_int("sampler.top_k", &RunConfig::sampler_top_k);
        add_int("eval.images", &RunConfig::eval_images);
        add_int("eval.crop_size", &RunConfig::eval_crop_size);
        add_int("eval.extractor_steps", &RunConfig::eval_extractor_steps);
        add_u64("eval.extractor_seed", &RunConfig::eval_extractor_seed);
        add_float("eval.box_tolerance", &RunConfig::eval_box_tolerance);
        return f;
    }();
    return table;
}

} // namespace

RunConfig RunConfig::parse_text(const std::string& text) {
    RunConfig config;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(line_no) + " is not key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        bool found = false;
        for (const auto& [name, field] : fields()) {
            if (name == key) {
                field.set(config, value);
                found = true;
                break;
            }
        }
        if (!found) throw ConfigError("config: unknown key '" + key + "'");
    }
    return config;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_text(buffer.str());
}

std::string RunConfig::serialize() const {
    std::string out;
    for (const auto& [name, field] : fields()) {
        out += name;
        out += " = ";
        out += field.get(*this);
        out += "\n";
    }
    return out;
}

void RunConfig::validate() const {
    auto fail = [](const std::string& invariant) { throw ConfigError("config: " + invariant); };

    if (vq_f_stages < 1 || vq_input_size % (1 << vq_f_stages) != 0) {
        fail("vq.input_size must be divisible by 2^vq.f_stages");
    }
    if (data_canvas != vq_input_size) fail("data.canvas must equal vq.input_size");
    if (data_categories < 1) fail("data.categories must be positive");
    if (vq_codebook_size < 2) fail("vq.codebook_size must be at least 2");
    if (vq_codebook_dim < 1) fail("vq.codebook_dim must be positive");
    if (layout_n_positions < 4) fail("layout.n_positions must be at least 4");
    if (layout_n_max < 1) fail("layout.n_max must be positive");
    if (layout_n_max < filter_max_objects) {
        fail("layout.n_max must cover data.filter_max_objects");
    }
    if (data_min_objects > data_max_objects) {
        fail("data.min_objects must not exceed data.max_objects");
    }
    if (filter_min_objects > filter_max_objects) {
        fail("data.filter_min_objects must not exceed data.filter_max_objects");
    }
    if (data_min_size < 1 || data_min_size > data_max_size || data_max_size > data_canvas) {
        fail("data object sizes must satisfy 1 <= min <= max <= canvas");
    }
    if (data_augment != "flips" && data_augment != "flips+crops") {
        fail("data.augment must be 'flips' or 'flips+crops'");
    }
    if (ar_dim % ar_heads != 0) fail("ar.heads must divide ar.dim");
    if (ar_dropout < 0.0f || ar_dropout >= 1.0f) fail("ar.dropout must be in [0, 1)");
    if (ar_crop_min_size != 0 &&
        (ar_crop_min_size < 8 || ar_crop_min_size > vq_input_size)) {
        fail("ar.crop_min_size must be 0 or in [8, vq.input_size]");
    }
    if (ar_crop_min_size > 0 && !ar_viewport) {
        fail("ar.viewport must be enabled when training on random crops");
    }
    if (ar_crop_full_prob < 0.0f || ar_crop_full_prob > 1.0f) {
        fail("ar.crop_full_prob must be in [0, 1]");
    }
    if (sampler_temperature <= 0.0f) fail("sampler.temperature must be positive");
    if (sampler_top_k < 1) fail("sampler.top_k must be at least 1");
    if (eval_images < 2) fail("eval.images must be at least 2");
    if (eval_crop_size < 8) fail("eval.crop_size must be at least 8");
    if (vq_batch < 1 || ar_batch < 1) fail("batch sizes must be positive");
    if (vq_steps < 1 || ar_steps < 1) fail("step counts must be positive");
    if (vq_lr <= 0.0f || ar_lr <= 0.0f) fail("learning rates must be positive");
    if (vq_lr_decay_scale <= 0.0f || ar_lr_decay_scale <= 0.0f) {
        fail("learning-rate decay scales must be positive");
    }

    // the combined sequence must match the transformer context exactly
    const int context = cond_len() + latent_side() * latent_side();
    if (context < cond_len() + 1) fail("transformer context must hold at least one image token");
    const int vocab = vocabulary().vocab_size();
    if (vocab != vq_codebook_size + data_categories + grid().usable_positions() + 1) {
        fail("vocabulary ranges must partition the token space");
    }
}

vq::AutoencoderConfig RunConfig::vq_config() const {
    vq::AutoencoderConfig cfg;
    cfg.input_size = vq_input_size;
    cfg.f_stages = vq_f_stages;
    cfg.base_channels = vq_base_channels;
    cfg.codebook_size = vq_codebook_size;
    cfg.codebook_dim = vq_codebook_dim;
    cfg.beta = vq_beta;
    cfg.adv_weight = vq_adv_weight;
    cfg.adv_warmup_steps = vq_adv_warmup;
    cfg.revive_interval = vq_revive_interval;
    return cfg;
}

ar::TransformerConfig RunConfig::ar_config() const {
    ar::TransformerConfig cfg;
    cfg.layers = ar_layers;
    cfg.heads = ar_heads;
    cfg.dim = ar_dim;
    cfg.dropout = ar_dropout;
    cfg.cond_len = cond_len();
    cfg.image_tokens = latent_side() * latent_side();
    cfg.vocab_size = vocabulary().vocab_size();
    return cfg;
}

data::SceneGenConfig RunConfig::scene_config() const {
    data::SceneGenConfig cfg;
    cfg.canvas = data_canvas;
    cfg.min_objects = data_min_objects;
    cfg.max_objects = data_max_objects;
    cfg.min_size = data_min_size;
    cfg.max_size = data_max_size;
    cfg.max_occlusion = data_max_occlusion;
    cfg.palette = data::Palette::standard(data_categories);
    return cfg;
}

data::FilterRule RunConfig::filter_rule() const {
    return {filter_min_objects, filter_max_objects, filter_min_area};
}

ar::SamplerConfig RunConfig::sampler_config() const {
    ar::SamplerConfig cfg;
    cfg.temperature = sampler_temperature;
    cfg.top_k = sampler_top_k;
    cfg.seed = seed;
    return cfg;
}

} // namespace scenegen::cli
