#pragma once

#include <string>
#include <utility>
#include <vector>

#include "scenegen/image.hpp"
#include "scenegen/optim.hpp"
#include "scenegen/scene.hpp"

namespace scenegen::metrics {

struct GaussianStats {
    int dim = 0;
    int64_t count = 0;
    std::vector<double> mean; // [d]
    std::vector<double> cov;  // [d*d], symmetric, unbiased (n-1)
};

GaussianStats gaussian_stats(const std::vector<std::vector<float>>& features);

// d^2 = |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}), the matrix root via
// symmetric eigendecomposition with eigenvalues clamped at zero.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// Small convolutional classifier over synthetic crops; its penultimate
// activations are the feature space for FID-style metrics.
class FeatureExtractor {
public:
    FeatureExtractor(int n_categories, Rng& init_rng, int input_size = 32);

    int input_size() const { return input_size_; }
    int feature_dim() const { return feature_dim_; }
    int n_categories() const { return n_categories_; }

    float train_step(const std::vector<data::Image>& crops, const std::vector<int>& labels,
                     num::Adam& opt);
    std::vector<float> features(const data::Image& crop) const;
    std::vector<std::vector<float>> features_batch(const std::vector<data::Image>& crops) const;
    int predict(const data::Image& crop) const;
    float accuracy(const std::vector<data::Image>& crops, const std::vector<int>& labels) const;

    std::vector<std::pair<std::string, num::Tensor>> named_parameters();
    std::vector<num::Tensor> parameters();

private:
    num::Tensor forward_features(const num::Tensor& batch) const;

    int input_size_;
    int feature_dim_ = 64;
    int n_categories_;
    struct Conv {
        num::Tensor w, b;
    };
    std::vector<Conv> convs_;
    num::Tensor head_w_, head_b_;
    std::vector<std::pair<std::string, num::Tensor>> named_;
};

// Trains the metric backbone on generated single-object crops and verifies
// the accuracy gate (>= 0.9 held out) before handing it over.
FeatureExtractor train_metric_extractor(const data::Palette& palette, uint64_t seed, int steps,
                                        float* held_out_accuracy = nullptr);

// Whole-image FID at the extractor resolution; non-square inputs are
// center-cropped first.
double fid(const std::vector<data::Image>& real, const std::vector<data::Image>& fake,
           const FeatureExtractor& extractor);

// FID over per-object crops instead of whole images.
double scene_fid(const std::vector<data::SceneRecord>& real,
                 const std::vector<data::SceneRecord>& fake, const FeatureExtractor& extractor,
                 int crop_size = 32);

// Fraction of boxes whose interior matches the category's palette color
// (>= half the pixels within the tolerance).
double box_consistency(const std::vector<data::SceneRecord>& samples,
                       const data::Palette& palette, float tolerance = 0.3f);

} // namespace scenegen::metrics
