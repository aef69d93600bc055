#include "scenegen/commands.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "scenegen/checkpoint.hpp"
#include "scenegen/config.hpp"
#include "scenegen/gpt.hpp"
#include "scenegen/metrics.hpp"
#include "scenegen/scene.hpp"
#include "scenegen/vq.hpp"

namespace scenegen::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct MissingArtifactError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// fixed stream ids so every stage draws from its own deterministic stream
enum : uint64_t {
    kStreamData = 1,
    kStreamVqInit = 2,
    kStreamVqTrain = 3,
    kStreamDiscInit = 4,
    kStreamArInit = 5,
    kStreamArTrain = 6,
    kStreamSample = 7,
};

double wall_ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
        .count();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << text;
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) {
        throw MissingArtifactError("missing " + what + ": " + path);
    }
}

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::optional<uint64_t> seed;
};

RunConfig prepare(const CommonArgs& args) {
    RunConfig config = args.config_path.empty() ? RunConfig() : RunConfig::load(args.config_path);
    if (args.seed) config.seed = *args.seed;
    config.validate();
    fs::create_directories(args.out_dir);
    write_text(args.out_dir + "/config.resolved", config.serialize());
    return config;
}

std::string zero_pad(int64_t value, int width) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%0*lld", width, static_cast<long long>(value));
    return buf;
}

std::vector<size_t> split_indices(const std::vector<data::SceneDescriptor>& records,
                                  uint64_t seed, data::Split wanted) {
    std::vector<size_t> out;
    for (size_t i = 0; i < records.size(); ++i) {
        if (data::split_of(seed, static_cast<int64_t>(i)) == wanted) out.push_back(i);
    }
    return out;
}

// ------------------------------------------------------------------ gen-data

int cmd_gen_data(const CommonArgs& args) {
    const RunConfig config = prepare(args);
    const std::string data_dir = args.out_dir + "/data";
    fs::create_directories(data_dir + "/images");

    const data::SceneGenConfig scene_cfg = config.scene_config();
    const data::FilterRule rule = config.filter_rule();

    std::vector<data::SceneDescriptor> manifest;
    int skipped = 0;
    for (int i = 0; i < config.data_count; ++i) {
        Rng rng(hash_combine(hash_combine(config.seed, kStreamData), static_cast<uint64_t>(i)));
        data::SceneRecord record = generate_synthetic_scene(rng, scene_cfg);
        auto objects = data::apply_filter(record.objects, rule);
        if (!objects) {
            ++skipped;
            continue;
        }
        record.objects = std::move(*objects);
        record.id = "scene_" + zero_pad(i, 6);

        const std::string file = "images/" + record.id + ".png";
        data::write_png(data_dir + "/" + file, record.image);

        data::SceneDescriptor desc;
        desc.id = record.id;
        desc.image_path = file;
        desc.width = record.image.width;
        desc.height = record.image.height;
        desc.objects = record.objects;
        manifest.push_back(std::move(desc));
    }
    data::write_manifest(data_dir + "/manifest.jsonl", manifest);
    std::cout << "gen-data: wrote " << manifest.size() << " records ("
              << skipped << " filtered out) to " << data_dir << "\n";
    return 0;
}

// ------------------------------------------------------------- training aids

data::SceneRecord load_training_record(const data::SceneDescriptor& desc,
                                       const std::string& base_dir, const RunConfig& config,
                                       Rng& rng) {
    const data::SceneRecord record = data::load_record(desc, base_dir);
    const data::AugmentMode mode = config.data_augment == "flips+crops"
                                       ? data::AugmentMode::flips_and_crops
                                       : data::AugmentMode::flips;
    return data::augment(record, rng, mode);
}

struct StepLogger {
    std::ofstream file;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    explicit StepLogger(const std::string& path, bool append)
        : file(path, append ? std::ios::app : std::ios::trunc) {
        if (!file) throw std::runtime_error("cannot open " + path + " for writing");
    }

    void log(json line) {
        line["wall_ms"] = wall_ms_since(t0);
        file << line.dump() << "\n";
        file.flush();
    }
};

// ------------------------------------------------------------------ train-vq

int cmd_train_vq(const CommonArgs& args, std::string data_path, std::string resume_path) {
    const RunConfig config = prepare(args);
    if (data_path.empty()) data_path = args.out_dir + "/data/manifest.jsonl";
    require_file(data_path, "dataset manifest");

    const std::vector<data::SceneDescriptor> records = data::read_manifest(data_path);
    const std::string base_dir = data::directory_of(data_path);
    const std::vector<size_t> train = split_indices(records, config.seed, data::Split::train);
    if (train.empty()) throw std::runtime_error("train-vq: empty training split");

    Rng init_rng(hash_combine(config.seed, kStreamVqInit));
    vq::VqModel model(config.vq_config(), init_rng);
    num::Adam opt(model.parameters(), {.lr = config.vq_lr});

    const bool adversarial = config.vq_adv_weight > 0.0f;
    std::optional<vq::PatchDiscriminator> disc;
    std::optional<num::Adam> disc_opt;
    if (adversarial) {
        Rng disc_rng(hash_combine(config.seed, kStreamDiscInit));
        disc.emplace(config.vq_base_channels * 2, disc_rng);
        disc_opt.emplace(disc->parameters(), num::AdamConfig{.lr = config.vq_lr});
    }

    Rng train_rng(hash_combine(config.seed, kStreamVqTrain));
    int64_t start_step = 0;
    if (!resume_path.empty()) {
        require_file(resume_path, "checkpoint to resume from");
        const Checkpoint ckpt = load_checkpoint(resume_path);
        ckpt.restore_params(model.named_parameters());
        ckpt.restore_adam("adam.vq", opt, model.named_parameters());
        model.codebook_last_used() = ckpt.find("codebook.last_used").data;
        if (adversarial) {
            ckpt.restore_params(disc->named_parameters());
            ckpt.restore_adam("adam.disc", *disc_opt, disc->named_parameters());
        }
        train_rng.set_state({ckpt.rng_state[0], ckpt.rng_state[1], ckpt.rng_state[2],
                             ckpt.rng_state[3]});
        start_step = static_cast<int64_t>(ckpt.step);
    }

    StepLogger logger(args.out_dir + "/train_vq.log.jsonl", !resume_path.empty());
    for (int64_t step = start_step; step < config.vq_steps; ++step) {
        // schedule anchored on absolute steps so resumed runs replay exactly
        const bool decayed = config.vq_lr_decay_step > 0 && step >= config.vq_lr_decay_step;
        opt.set_lr(decayed ? config.vq_lr * config.vq_lr_decay_scale : config.vq_lr);
        std::vector<data::Image> batch;
        for (int b = 0; b < config.vq_batch; ++b) {
            const size_t pick = train[static_cast<size_t>(
                train_rng.uniform_int(0, static_cast<int>(train.size()) - 1))];
            batch.push_back(
                load_training_record(records[pick], base_dir, config, train_rng).image);
        }
        const vq::VqLosses losses =
            vq_train_step(data::images_to_tensor(batch), model, opt,
                          disc ? &*disc : nullptr, disc_opt ? &*disc_opt : nullptr, step);
        json line = {{"step", step},
                     {"recon", losses.reconstruction},
                     {"codebook", losses.codebook},
                     {"commit", losses.commitment}};
        if (losses.adversarial) line["adv"] = *losses.adversarial;
        if (losses.discriminator) line["disc"] = *losses.discriminator;
        logger.log(line);
        if (step % 100 == 0 || step + 1 == config.vq_steps) {
            std::cout << "train-vq step " << step << " recon " << losses.reconstruction << "\n";
        }
    }

    Checkpoint ckpt;
    ckpt.config_text = config.serialize();
    ckpt.step = static_cast<uint64_t>(config.vq_steps);
    const auto state = train_rng.state();
    ckpt.rng_state = {state[0], state[1], state[2], state[3]};
    ckpt.add_params(model.named_parameters());
    ckpt.add_adam("adam.vq", opt, model.named_parameters());
    ckpt.add_blob("codebook.last_used", {config.vq_codebook_size}, model.codebook_last_used());
    if (adversarial) {
        ckpt.add_params(disc->named_parameters());
        ckpt.add_adam("adam.disc", *disc_opt, disc->named_parameters());
    }
    save_checkpoint(args.out_dir + "/vq.ckpt", ckpt);
    std::cout << "train-vq: checkpoint written to " << args.out_dir << "/vq.ckpt\n";
    return 0;
}

// ------------------------------------------------------------------ train-ar

int cmd_train_ar(const CommonArgs& args, std::string data_path, std::string vq_path,
                 std::string resume_path) {
    const RunConfig config = prepare(args);
    if (data_path.empty()) data_path = args.out_dir + "/data/manifest.jsonl";
    if (vq_path.empty()) vq_path = args.out_dir + "/vq.ckpt";
    require_file(data_path, "dataset manifest");
    require_file(vq_path, "stage-1 checkpoint");

    const std::vector<data::SceneDescriptor> records = data::read_manifest(data_path);
    const std::string base_dir = data::directory_of(data_path);
    const std::vector<size_t> train = split_indices(records, config.seed, data::Split::train);
    if (train.empty()) throw std::runtime_error("train-ar: empty training split");

    Rng vq_rng(hash_combine(config.seed, kStreamVqInit));
    vq::VqModel vq_model(config.vq_config(), vq_rng);
    load_checkpoint(vq_path).restore_params(vq_model.named_parameters());

    Rng init_rng(hash_combine(config.seed, kStreamArInit));
    ar::GptModel model(config.ar_config(), init_rng);
    num::Adam opt(model.parameters(), {.lr = config.ar_lr});

    const layout::GridSpec grid = config.grid();
    const layout::VocabularyMap vocab = config.vocabulary();

    Rng train_rng(hash_combine(config.seed, kStreamArTrain));
    int64_t start_step = 0;
    if (!resume_path.empty()) {
        require_file(resume_path, "checkpoint to resume from");
        const Checkpoint ckpt = load_checkpoint(resume_path);
        ckpt.restore_params(model.named_parameters());
        ckpt.restore_adam("adam.ar", opt, model.named_parameters());
        train_rng.set_state({ckpt.rng_state[0], ckpt.rng_state[1], ckpt.rng_state[2],
                             ckpt.rng_state[3]});
        start_step = static_cast<int64_t>(ckpt.step);
    }

    StepLogger logger(args.out_dir + "/train_ar.log.jsonl", !resume_path.empty());
    for (int64_t step = start_step; step < config.ar_steps; ++step) {
        const bool decayed = config.ar_lr_decay_step > 0 && step >= config.ar_lr_decay_step;
        opt.set_lr(decayed ? config.ar_lr * config.ar_lr_decay_scale : config.ar_lr);
        std::vector<ar::SequenceExample> batch;
        for (int b = 0; b < config.ar_batch; ++b) {
            const size_t pick = train[static_cast<size_t>(
                train_rng.uniform_int(0, static_cast<int>(train.size()) - 1))];
            data::SceneRecord record =
                load_training_record(records[pick], base_dir, config, train_rng);

            std::optional<layout::Viewport> viewport;
            data::Image view = record.image;
            const bool crop_this = config.ar_crop_min_size > 0 &&
                                   train_rng.uniform() >= config.ar_crop_full_prob;
            if (crop_this) {
                auto cropped =
                    ar::random_quadratic_crop(record, train_rng, config.ar_crop_min_size);
                if (!cropped) continue; // skip-record signal
                viewport = cropped->viewport;
                view = cropped->record.image;
                if (view.width != config.vq_input_size) {
                    view = data::resize_bilinear(view, config.vq_input_size,
                                                 config.vq_input_size);
                }
            } else if (config.ar_viewport) {
                viewport = layout::Viewport::full();
            }

            const vq::TokenGrid tokens = vq_model.encode_to_tokens(view);
            const layout::ConditioningSequence cond = layout::build_conditioning(
                record.objects, config.layout_n_max, grid, vocab, viewport);
            batch.push_back({cond.tokens, tokens.tokens});
        }
        if (batch.empty()) continue;

        opt.zero_grad();
        float loss_value = 0.0f;
        {
            num::Tape tape;
            num::TapeScope scope(tape);
            num::Tensor loss = ar_loss(model, batch, true, &train_rng);
            loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                throw std::runtime_error("ar training diverged at step " + std::to_string(step));
            }
            tape.backward(loss);
        }
        opt.step();

        logger.log({{"step", step}, {"loss", loss_value}});
        if (step % 100 == 0 || step + 1 == config.ar_steps) {
            std::cout << "train-ar step " << step << " loss " << loss_value << "\n";
        }
    }

    Checkpoint ckpt;
    ckpt.config_text = config.serialize();
    ckpt.step = static_cast<uint64_t>(config.ar_steps);
    const auto state = train_rng.state();
    ckpt.rng_state = {state[0], state[1], state[2], state[3]};
    ckpt.add_params(model.named_parameters());
    ckpt.add_adam("adam.ar", opt, model.named_parameters());
    save_checkpoint(args.out_dir + "/ar.ckpt", ckpt);
    std::cout << "train-ar: checkpoint written to " << args.out_dir << "/ar.ckpt\n";
    return 0;
}

// -------------------------------------------------------------------- sample

int cmd_sample(const CommonArgs& args, std::string layout_source, std::string data_path,
               std::string vq_path, std::string ar_path, int count, std::string grid_arg,
               std::optional<float> temperature, std::optional<int> top_k) {
    RunConfig config = prepare(args);
    if (vq_path.empty()) vq_path = args.out_dir + "/vq.ckpt";
    if (ar_path.empty()) ar_path = args.out_dir + "/ar.ckpt";
    require_file(vq_path, "stage-1 checkpoint");
    require_file(ar_path, "stage-2 checkpoint");

    Rng vq_rng(hash_combine(config.seed, kStreamVqInit));
    vq::VqModel vq_model(config.vq_config(), vq_rng);
    load_checkpoint(vq_path).restore_params(vq_model.named_parameters());

    Rng ar_rng(hash_combine(config.seed, kStreamArInit));
    ar::GptModel model(config.ar_config(), ar_rng);
    load_checkpoint(ar_path).restore_params(model.named_parameters());

    // layouts from the held-out split or an explicit manifest
    std::vector<data::SceneDescriptor> layouts;
    if (layout_source == "test-split") {
        if (data_path.empty()) data_path = args.out_dir + "/data/manifest.jsonl";
        require_file(data_path, "dataset manifest");
        const std::vector<data::SceneDescriptor> records = data::read_manifest(data_path);
        for (size_t idx : split_indices(records, config.seed, data::Split::test)) {
            layouts.push_back(records[idx]);
        }
    } else {
        require_file(layout_source, "layout file");
        layouts = data::read_manifest(layout_source);
    }
    if (layouts.empty()) throw std::runtime_error("sample: no layouts available");

    int grid_h = config.latent_side(), grid_w = config.latent_side();
    if (!grid_arg.empty()) {
        const size_t x = grid_arg.find('x');
        if (x == std::string::npos) throw ConfigError("config: --grid expects <H>x<W>");
        grid_h = std::stoi(grid_arg.substr(0, x));
        grid_w = std::stoi(grid_arg.substr(x + 1));
        if (grid_h < config.latent_side() || grid_w < config.latent_side()) {
            throw ConfigError("config: --grid must be at least the training grid");
        }
    }
    const bool sliding = grid_h != config.latent_side() || grid_w != config.latent_side();
    if (sliding && !config.ar_viewport) {
        throw ConfigError("config: sliding-window sampling requires ar.viewport=true");
    }

    ar::SamplerConfig sampler = config.sampler_config();
    if (temperature) sampler.temperature = *temperature;
    if (top_k) sampler.top_k = *top_k;
    sampler.validate();

    const layout::GridSpec grid = config.grid();
    const layout::VocabularyMap vocab = config.vocabulary();
    const std::string sample_dir = args.out_dir + "/samples";
    fs::create_directories(sample_dir);

    std::vector<data::SceneDescriptor> produced;
    for (int i = 0; i < count; ++i) {
        const data::SceneDescriptor& src = layouts[static_cast<size_t>(i) % layouts.size()];
        sampler.seed = hash_combine(hash_combine(config.seed, kStreamSample),
                                    static_cast<uint64_t>(i));
        vq::TokenGrid tokens;
        if (sliding) {
            tokens = ar::sliding_window_sample(model, src.objects, grid_h, grid_w,
                                               config.latent_side(), config.latent_side(), grid,
                                               vocab, config.layout_n_max, sampler,
                                               config.vq_codebook_size);
        } else {
            const std::optional<layout::Viewport> viewport =
                config.ar_viewport ? std::optional(layout::Viewport::full()) : std::nullopt;
            const layout::ConditioningSequence cond = layout::build_conditioning(
                src.objects, config.layout_n_max, grid, vocab, viewport);
            tokens = ar::sample_tokens(model, cond, sampler, grid_h, grid_w,
                                       config.vq_codebook_size);
        }
        const data::Image image = vq_model.decode_tokens(tokens);

        data::SceneDescriptor desc;
        desc.id = "sample_" + zero_pad(i, 4);
        desc.image_path = desc.id + "_seed" + std::to_string(config.seed) + ".png";
        desc.width = image.width;
        desc.height = image.height;
        desc.objects = src.objects;
        data::write_png(sample_dir + "/" + desc.image_path, image);
        produced.push_back(std::move(desc));
    }
    data::write_manifest(sample_dir + "/manifest.jsonl", produced);
    std::cout << "sample: wrote " << produced.size() << " images to " << sample_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------- eval

int cmd_eval(const CommonArgs& args, std::string real_path, std::string fake_path,
             std::string real_split) {
    const RunConfig config = prepare(args);
    require_file(real_path, "real manifest");
    require_file(fake_path, "fake manifest");

    const std::vector<data::SceneDescriptor> real_all = data::read_manifest(real_path);
    std::vector<size_t> real_idx;
    if (real_split == "all") {
        for (size_t i = 0; i < real_all.size(); ++i) real_idx.push_back(i);
    } else {
        const data::Split wanted = real_split == "train"
                                       ? data::Split::train
                                       : (real_split == "val" ? data::Split::val
                                                              : data::Split::test);
        real_idx = split_indices(real_all, config.seed, wanted);
    }
    const std::vector<data::SceneDescriptor> fake_all = data::read_manifest(fake_path);

    const std::string real_dir = data::directory_of(real_path);
    const std::string fake_dir = data::directory_of(fake_path);

    std::vector<data::SceneRecord> real, fake;
    for (size_t i = 0; i < real_idx.size() && static_cast<int>(i) < config.eval_images; ++i) {
        real.push_back(data::load_record(real_all[real_idx[i]], real_dir));
    }
    for (size_t i = 0; i < fake_all.size() && static_cast<int>(i) < config.eval_images; ++i) {
        fake.push_back(data::load_record(fake_all[i], fake_dir));
    }
    if (real.size() < 2 || fake.size() < 2) {
        throw std::runtime_error("eval: need at least two records per side");
    }

    const data::Palette palette = data::Palette::standard(config.data_categories);
    float extractor_accuracy = 0.0f;
    const metrics::FeatureExtractor extractor = metrics::train_metric_extractor(
        palette, config.eval_extractor_seed, config.eval_extractor_steps, &extractor_accuracy);

    std::vector<data::Image> real_images, fake_images;
    for (const auto& r : real) real_images.push_back(r.image);
    for (const auto& f : fake) fake_images.push_back(f.image);

    json report;
    report["fid"] = metrics::fid(real_images, fake_images, extractor);
    report["scene_fid"] = metrics::scene_fid(real, fake, extractor, config.eval_crop_size);
    report["box_consistency"] =
        metrics::box_consistency(fake, palette, config.eval_box_tolerance);
    report["n_real"] = real.size();
    report["n_fake"] = fake.size();
    report["seed"] = config.seed;

    write_text(args.out_dir + "/metrics.json", report.dump(2) + "\n");
    std::cout << report.dump(2) << "\n";
    std::cout << "eval: extractor held-out accuracy " << extractor_accuracy << "\n";
    return 0;
}

} // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"two-stage layout-to-image synthesis at desk scale"};
    app.require_subcommand(1);

    CommonArgs common;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", common.config_path, "configuration file (key = value)");
        cmd->add_option("--out", common.out_dir, "output directory")->required();
        cmd->add_option("--seed", common.seed, "seed override");
    };

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic scene dataset");
    add_common(gen);

    std::string data_path, vq_path, ar_path, resume_path;
    auto* train_vq = app.add_subcommand("train-vq", "train the stage-1 autoencoder");
    add_common(train_vq);
    train_vq->add_option("--data", data_path, "dataset manifest");
    train_vq->add_option("--resume", resume_path, "checkpoint to resume from");

    auto* train_ar = app.add_subcommand("train-ar", "train the stage-2 transformer");
    add_common(train_ar);
    train_ar->add_option("--data", data_path, "dataset manifest");
    train_ar->add_option("--vq", vq_path, "stage-1 checkpoint");
    train_ar->add_option("--resume", resume_path, "checkpoint to resume from");

    std::string layout_source = "test-split", grid_arg;
    int sample_count = 16;
    std::optional<float> temperature;
    std::optional<int> top_k;
    auto* sample = app.add_subcommand("sample", "generate images from layouts");
    add_common(sample);
    sample->add_option("--layout", layout_source, "layout manifest or 'test-split'");
    sample->add_option("--data", data_path, "dataset manifest for test-split layouts");
    sample->add_option("--vq", vq_path, "stage-1 checkpoint");
    sample->add_option("--ar", ar_path, "stage-2 checkpoint");
    sample->add_option("--count", sample_count, "number of samples");
    sample->add_option("--grid", grid_arg, "latent grid <H>x<W>; larger than training slides");
    sample->add_option("--temperature", temperature, "sampling temperature");
    sample->add_option("--top-k", top_k, "top-k cutoff");

    std::string real_path, fake_path, real_split = "test";
    auto* eval = app.add_subcommand("eval", "compute FID, SceneFID and box consistency");
    add_common(eval);
    eval->add_option("--real", real_path, "manifest of real records")->required();
    eval->add_option("--fake", fake_path, "manifest of generated records")->required();
    eval->add_option("--split", real_split, "real-side split: test|val|train|all");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (gen->parsed()) return cmd_gen_data(common);
        if (train_vq->parsed()) return cmd_train_vq(common, data_path, resume_path);
        if (train_ar->parsed()) return cmd_train_ar(common, data_path, vq_path, resume_path);
        if (sample->parsed()) {
            return cmd_sample(common, layout_source, data_path, vq_path, ar_path, sample_count,
                              grid_arg, temperature, top_k);
        }
        if (eval->parsed()) return cmd_eval(common, real_path, fake_path, real_split);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const MissingArtifactError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

} // namespace scenegen::cli
