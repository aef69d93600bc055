#include "scenegen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "scenegen/ops.hpp"

namespace scenegen::metrics {

GaussianStats gaussian_stats(const std::vector<std::vector<float>>& features) {
    const int64_t n = static_cast<int64_t>(features.size());
    if (n < 2) throw std::invalid_argument("gaussian_stats: need at least two samples");
    const int d = static_cast<int>(features[0].size());

    GaussianStats stats;
    stats.dim = d;
    stats.count = n;
    stats.mean.assign(static_cast<size_t>(d), 0.0);
    stats.cov.assign(static_cast<size_t>(d) * d, 0.0);

    for (const std::vector<float>& f : features) {
        if (static_cast<int>(f.size()) != d) {
            throw std::invalid_argument("gaussian_stats: ragged feature rows");
        }
        for (int i = 0; i < d; ++i) stats.mean[static_cast<size_t>(i)] += f[static_cast<size_t>(i)];
    }
    for (double& m : stats.mean) m /= static_cast<double>(n);

    std::vector<double> centered(static_cast<size_t>(d));
    for (const std::vector<float>& f : features) {
        for (int i = 0; i < d; ++i) {
            centered[static_cast<size_t>(i)] = f[static_cast<size_t>(i)] - stats.mean[static_cast<size_t>(i)];
        }
        for (int i = 0; i < d; ++i) {
            for (int j = i; j < d; ++j) {
                stats.cov[static_cast<size_t>(i) * d + j] += centered[static_cast<size_t>(i)] * centered[static_cast<size_t>(j)];
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(n - 1);
    for (int i = 0; i < d; ++i) {
        for (int j = i; j < d; ++j) {
            const double v = stats.cov[static_cast<size_t>(i) * d + j] * inv;
            stats.cov[static_cast<size_t>(i) * d + j] = v;
            stats.cov[static_cast<size_t>(j) * d + i] = v;
        }
    }
    return stats;
}

namespace {

// Cyclic Jacobi eigensolver for a symmetric matrix; a is overwritten with a
// diagonal whose entries are the eigenvalues.
std::vector<double> symmetric_eigenvalues(std::vector<double> a, int d,
                                          std::vector<double>* vectors = nullptr) {
    std::vector<double> v;
    if (vectors) {
        v.assign(static_cast<size_t>(d) * d, 0.0);
        for (int i = 0; i < d; ++i) v[static_cast<size_t>(i) * d + i] = 1.0;
    }
    double fro = 0.0;
    for (double v : a) fro += v * v;
    const double off_floor = std::max(1e-300, fro * 1e-30);
    const double skip_floor = std::max(1e-300, std::sqrt(fro) * 1e-17);
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < d; ++i) {
            for (int j = i + 1; j < d; ++j) off += a[static_cast<size_t>(i) * d + j] * a[static_cast<size_t>(i) * d + j];
        }
        if (off < off_floor) break;
        for (int p = 0; p < d; ++p) {
            for (int q = p + 1; q < d; ++q) {
                const double apq = a[static_cast<size_t>(p) * d + q];
                if (std::abs(apq) < skip_floor) continue;
                const double app = a[static_cast<size_t>(p) * d + p];
                const double aqq = a[static_cast<size_t>(q) * d + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < d; ++i) {
                    const double aip = a[static_cast<size_t>(i) * d + p];
                    const double aiq = a[static_cast<size_t>(i) * d + q];
                    a[static_cast<size_t>(i) * d + p] = c * aip - s * aiq;
                    a[static_cast<size_t>(i) * d + q] = s * aip + c * aiq;
                }
                for (int i = 0; i < d; ++i) {
                    const double api = a[static_cast<size_t>(p) * d + i];
                    const double aqi = a[static_cast<size_t>(q) * d + i];
                    a[static_cast<size_t>(p) * d + i] = c * api - s * aqi;
                    a[static_cast<size_t>(q) * d + i] = s * api + c * aqi;
                }
                if (vectors) {
                    for (int i = 0; i < d; ++i) {
                        const double vip = v[static_cast<size_t>(i) * d + p];
                        const double viq = v[static_cast<size_t>(i) * d + q];
                        v[static_cast<size_t>(i) * d + p] = c * vip - s * viq;
                        v[static_cast<size_t>(i) * d + q] = s * vip + c * viq;
                    }
                }
            }
        }
    }
    std::vector<double> eig(static_cast<size_t>(d));
    for (int i = 0; i < d; ++i) eig[static_cast<size_t>(i)] = a[static_cast<size_t>(i) * d + i];
    if (vectors) *vectors = std::move(v);
    return eig;
}

std::vector<double> matmul_square(const std::vector<double>& a, const std::vector<double>& b,
                                  int d) {
    std::vector<double> c(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) {
        for (int k = 0; k < d; ++k) {
            const double aik = a[static_cast<size_t>(i) * d + k];
            if (aik == 0.0) continue;
            for (int j = 0; j < d; ++j) {
                c[static_cast<size_t>(i) * d + j] += aik * b[static_cast<size_t>(k) * d + j];
            }
        }
    }
    return c;
}

// V diag(f(eig)) V^T
std::vector<double> rebuild(const std::vector<double>& vectors, const std::vector<double>& eig,
                            int d) {
    std::vector<double> out(static_cast<size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k) {
                acc += vectors[static_cast<size_t>(i) * d + k] * eig[static_cast<size_t>(k)] *
                       vectors[static_cast<size_t>(j) * d + k];
            }
            out[static_cast<size_t>(i) * d + j] = acc;
        }
    }
    return out;
}

} // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
    if (a.dim != b.dim) throw std::invalid_argument("frechet_distance: dimension mismatch");
    const int d = a.dim;
    for (double v : a.mean) {
        if (!std::isfinite(v)) throw std::runtime_error("frechet_distance: non-finite stats");
    }
    for (double v : b.mean) {
        if (!std::isfinite(v)) throw std::runtime_error("frechet_distance: non-finite stats");
    }

    double mean_term = 0.0;
    for (int i = 0; i < d; ++i) {
        const double diff = a.mean[static_cast<size_t>(i)] - b.mean[static_cast<size_t>(i)];
        mean_term += diff * diff;
    }

    // Eigenvalues are clamped at zero with a threshold relative to the top of
    // the spectrum: sample covariances are rank-deficient, and sqrt() would
    // otherwise blow the eigensolver's noise floor up to ~1e-4.
    auto clamp_spectrum = [](std::vector<double>& eig) {
        double top = 0.0;
        for (double v : eig) top = std::max(top, v);
        const double floor = top * 1e-12;
        for (double& v : eig) v = v > floor ? v : 0.0;
    };

    auto matrix_sqrt = [&](const std::vector<double>& cov) {
        std::vector<double> vectors;
        std::vector<double> eig = symmetric_eigenvalues(cov, d, &vectors);
        clamp_spectrum(eig);
        for (double& v : eig) v = std::sqrt(v);
        return rebuild(vectors, eig, d);
    };
    const std::vector<double> sqrt_a = matrix_sqrt(a.cov);
    const std::vector<double> sqrt_b = matrix_sqrt(b.cov);

    double trace_a = 0.0, trace_b = 0.0;
    for (int i = 0; i < d; ++i) {
        trace_a += a.cov[static_cast<size_t>(i) * d + i];
        trace_b += b.cov[static_cast<size_t>(i) * d + i];
    }

    // Tr((Sa Sb)^{1/2}) is the nuclear norm of C = sqrt(Sa) sqrt(Sb). The
    // singular values come from the symmetric embedding [[0, C], [C^T, 0]],
    // whose spectrum is {+-sigma_i}; this avoids squaring the condition
    // number the way eigendecomposing C^T C (or sqrt(Sa) Sb sqrt(Sa)) would.
    const std::vector<double> c = matmul_square(sqrt_a, sqrt_b, d);
    std::vector<double> embedding(static_cast<size_t>(2 * d) * (2 * d), 0.0);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) {
            embedding[static_cast<size_t>(i) * 2 * d + (d + j)] = c[static_cast<size_t>(i) * d + j];
            embedding[static_cast<size_t>(d + j) * 2 * d + i] = c[static_cast<size_t>(i) * d + j];
        }
    }
    double trace_sqrt = 0.0;
    for (double lambda : symmetric_eigenvalues(std::move(embedding), 2 * d)) {
        trace_sqrt += 0.5 * std::abs(lambda);
    }

    const double value = mean_term + trace_a + trace_b - 2.0 * trace_sqrt;
    return std::max(0.0, value);
}

// ---------------------------------------------------------------- extractor

FeatureExtractor::FeatureExtractor(int n_categories, Rng& init_rng, int input_size)
    : input_size_(input_size), n_categories_(n_categories) {
    if (input_size < 8) throw std::invalid_argument("extractor: input size too small");
    auto make_conv = [&](int out_ch, int in_ch, const std::string& name) {
        Conv conv;
        const float std = std::sqrt(2.0f / (static_cast<float>(in_ch) * 9));
        conv.w = num::Tensor::randn({out_ch, in_ch, 3, 3}, init_rng, std, true);
        conv.b = num::Tensor::zeros({out_ch}, true);
        named_.emplace_back(name + ".w", conv.w);
        named_.emplace_back(name + ".b", conv.b);
        convs_.push_back(conv);
    };
    make_conv(16, 3, "ex.c0");
    make_conv(32, 16, "ex.c1");
    make_conv(feature_dim_, 32, "ex.c2");
    head_w_ = num::Tensor::randn({feature_dim_, n_categories_}, init_rng, 0.02f, true);
    head_b_ = num::Tensor::zeros({n_categories_}, true);
    named_.emplace_back("ex.head.w", head_w_);
    named_.emplace_back("ex.head.b", head_b_);
}

num::Tensor FeatureExtractor::forward_features(const num::Tensor& batch) const {
    num::Tensor x = batch;
    for (const Conv& conv : convs_) {
        x = num::gelu(num::conv2d(x, conv.w, conv.b, 2, 1));
    }
    return num::global_avg_pool(x); // [B, feature_dim]
}

float FeatureExtractor::train_step(const std::vector<data::Image>& crops,
                                   const std::vector<int>& labels, num::Adam& opt) {
    opt.zero_grad();
    num::Tape tape;
    num::TapeScope scope(tape);
    num::Tensor features = forward_features(data::images_to_tensor(crops));
    num::Tensor logits = num::add_bias(num::matmul(features, head_w_), head_b_);
    num::Tensor loss = num::softmax_cross_entropy(logits, labels);
    tape.backward(loss);
    const float value = loss.item();
    opt.step();
    return value;
}

std::vector<float> FeatureExtractor::features(const data::Image& crop) const {
    return features_batch({crop})[0];
}

std::vector<std::vector<float>> FeatureExtractor::features_batch(
    const std::vector<data::Image>& crops) const {
    std::vector<std::vector<float>> out;
    out.reserve(crops.size());
    constexpr size_t kBatch = 64;
    for (size_t begin = 0; begin < crops.size(); begin += kBatch) {
        const size_t end = std::min(crops.size(), begin + kBatch);
        std::vector<data::Image> chunk(crops.begin() + static_cast<int64_t>(begin),
                                       crops.begin() + static_cast<int64_t>(end));
        num::Tensor features = forward_features(data::images_to_tensor(chunk));
        for (size_t i = 0; i < chunk.size(); ++i) {
            const float* row = features.data() + static_cast<int64_t>(i) * feature_dim_;
            out.emplace_back(row, row + feature_dim_);
        }
    }
    return out;
}

int FeatureExtractor::predict(const data::Image& crop) const {
    num::Tensor features = forward_features(data::images_to_tensor({crop}));
    num::Tensor logits = num::add_bias(num::matmul(features, head_w_), head_b_);
    int best = 0;
    for (int i = 1; i < n_categories_; ++i) {
        if (logits.data()[i] > logits.data()[best]) best = i;
    }
    return best;
}

float FeatureExtractor::accuracy(const std::vector<data::Image>& crops,
                                 const std::vector<int>& labels) const {
    if (crops.empty()) throw std::invalid_argument("accuracy: empty evaluation set");
    int hits = 0;
    for (size_t i = 0; i < crops.size(); ++i) {
        if (predict(crops[i]) == labels[i]) ++hits;
    }
    return static_cast<float>(hits) / static_cast<float>(crops.size());
}

std::vector<std::pair<std::string, num::Tensor>> FeatureExtractor::named_parameters() {
    return named_;
}

std::vector<num::Tensor> FeatureExtractor::parameters() {
    std::vector<num::Tensor> out;
    for (auto& [name, tensor] : named_) out.push_back(tensor);
    return out;
}

namespace {

void make_single_object_crop(const data::Palette& palette, Rng& rng, int size,
                             data::Image* image, int* label) {
    data::SceneGenConfig cfg;
    cfg.canvas = size;
    cfg.min_objects = 1;
    cfg.max_objects = 1;
    cfg.min_size = size / 2;
    cfg.max_size = size - 4;
    cfg.palette = palette;
    const data::SceneRecord record = generate_synthetic_scene(rng, cfg);
    *image = record.image;
    *label = record.objects.empty() ? 0 : record.objects[0].category;
}

} // namespace

FeatureExtractor train_metric_extractor(const data::Palette& palette, uint64_t seed, int steps,
                                        float* held_out_accuracy) {
    Rng rng(seed);
    FeatureExtractor extractor(palette.size(), rng);
    num::Adam opt(extractor.parameters(), {.lr = 2e-3f});

    const int batch = 32;
    std::vector<data::Image> images(static_cast<size_t>(batch));
    std::vector<int> labels(static_cast<size_t>(batch));
    for (int step = 0; step < steps; ++step) {
        for (int i = 0; i < batch; ++i) {
            make_single_object_crop(palette, rng, extractor.input_size(), &images[static_cast<size_t>(i)],
                                    &labels[static_cast<size_t>(i)]);
        }
        extractor.train_step(images, labels, opt);
    }

    std::vector<data::Image> held(256);
    std::vector<int> held_labels(256);
    for (size_t i = 0; i < held.size(); ++i) {
        make_single_object_crop(palette, rng, extractor.input_size(), &held[i], &held_labels[i]);
    }
    const float acc = extractor.accuracy(held, held_labels);
    if (held_out_accuracy) *held_out_accuracy = acc;
    if (acc < 0.9f) {
        throw std::runtime_error("metric extractor below the 90% accuracy gate: " +
                                 std::to_string(acc));
    }
    return extractor;
}

// ------------------------------------------------------------------ metrics

namespace {

data::Image to_extractor_input(const data::Image& image, int size) {
    const data::Image square =
        image.width == image.height ? image : data::center_crop_square(image);
    if (square.width == size) return square;
    return data::resize_bilinear(square, size, size);
}

} // namespace

double fid(const std::vector<data::Image>& real, const std::vector<data::Image>& fake,
           const FeatureExtractor& extractor) {
    if (real.size() < 2 || fake.size() < 2) {
        throw std::invalid_argument("fid: need at least two images per side");
    }
    auto prepare = [&](const std::vector<data::Image>& images) {
        std::vector<data::Image> out;
        out.reserve(images.size());
        for (const data::Image& img : images) {
            out.push_back(to_extractor_input(img, extractor.input_size()));
        }
        return extractor.features_batch(out);
    };
    return frechet_distance(gaussian_stats(prepare(real)), gaussian_stats(prepare(fake)));
}

namespace {

std::vector<data::Image> object_crops(const std::vector<data::SceneRecord>& records,
                                      int crop_size) {
    std::vector<data::Image> crops;
    for (const data::SceneRecord& record : records) {
        const int w = record.image.width, h = record.image.height;
        for (const layout::LayoutObject& obj : record.objects) {
            const int x0 = static_cast<int>(std::lround(obj.x0 * w));
            const int y0 = static_cast<int>(std::lround(obj.y0 * h));
            const int x1 = static_cast<int>(std::lround(obj.x1 * w));
            const int y1 = static_cast<int>(std::lround(obj.y1 * h));
            if (x1 <= x0 || y1 <= y0) {
                throw std::invalid_argument("scene_fid: degenerate box in layout");
            }
            crops.push_back(
                data::resize_bilinear(data::crop(record.image, x0, y0, x1 - x0, y1 - y0),
                                      crop_size, crop_size));
        }
    }
    return crops;
}

} // namespace

double scene_fid(const std::vector<data::SceneRecord>& real,
                 const std::vector<data::SceneRecord>& fake, const FeatureExtractor& extractor,
                 int crop_size) {
    const std::vector<data::Image> real_crops = object_crops(real, crop_size);
    const std::vector<data::Image> fake_crops = object_crops(fake, crop_size);
    if (real_crops.size() < 2 || fake_crops.size() < 2) {
        throw std::invalid_argument("scene_fid: empty crop set");
    }
    return frechet_distance(gaussian_stats(extractor.features_batch(real_crops)),
                            gaussian_stats(extractor.features_batch(fake_crops)));
}

double box_consistency(const std::vector<data::SceneRecord>& samples,
                       const data::Palette& palette, float tolerance) {
    int64_t total = 0, satisfied = 0;
    for (const data::SceneRecord& record : samples) {
        const int w = record.image.width, h = record.image.height;
        for (const layout::LayoutObject& obj : record.objects) {
            if (obj.category < 0 || obj.category >= palette.size()) {
                throw std::invalid_argument("box_consistency: category outside palette");
            }
            const auto& color = palette.categories[static_cast<size_t>(obj.category)].color;
            const int x0 = std::clamp(static_cast<int>(std::lround(obj.x0 * w)), 0, w - 1);
            const int y0 = std::clamp(static_cast<int>(std::lround(obj.y0 * h)), 0, h - 1);
            const int x1 = std::clamp(static_cast<int>(std::lround(obj.x1 * w)), x0 + 1, w);
            const int y1 = std::clamp(static_cast<int>(std::lround(obj.y1 * h)), y0 + 1, h);
            int64_t inside = 0, matching = 0;
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    float diff = 0.0f;
                    for (int c = 0; c < 3; ++c) {
                        diff += std::abs(record.image.at(c, y, x) - color[static_cast<size_t>(c)]);
                    }
                    ++inside;
                    if (diff / 3.0f <= tolerance) ++matching;
                }
            }
            ++total;
            if (matching * 2 >= inside) ++satisfied;
        }
    }
    if (total == 0) throw std::invalid_argument("box_consistency: no boxes to evaluate");
    return static_cast<double>(satisfied) / static_cast<double>(total);
}

} // namespace scenegen::metrics
