#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "scenegen/image.hpp"
#include "scenegen/layout.hpp"
#include "scenegen/rng.hpp"

namespace scenegen::data {

enum class Shape { rectangle, circle, triangle };

struct Palette {
    struct Category {
        Shape shape = Shape::rectangle;
        std::array<float, 3> color{}; // [-1, 1] range
        std::string name;
    };
    std::vector<Category> categories;

    int size() const { return static_cast<int>(categories.size()); }

    // Saturated hue wheel over dark backgrounds; shapes cycle through the
    // three primitives.
    static Palette standard(int n_categories);
};

struct SceneRecord {
    Image image;
    std::vector<layout::LayoutObject> objects;
    std::string id;
};

struct SceneGenConfig {
    int canvas = 64;
    int min_objects = 3;
    int max_objects = 8;
    int min_size = 12;
    int max_size = 26;
    // A new object may cover at most this fraction of any earlier object's
    // box, which keeps ground-truth layouts legible under occlusion.
    float max_occlusion = 0.15f;
    int placement_attempts = 64;
    Palette palette = Palette::standard(16);
};

SceneRecord generate_synthetic_scene(Rng& rng, const SceneGenConfig& config);

struct FilterRule {
    int min_objects = 0;
    int max_objects = 0;
    float min_area_fraction = 0.0f;
};

// nullopt: record fails the rule. Otherwise the objects that remain (all of
// them when min_area_fraction == 0).
std::optional<std::vector<layout::LayoutObject>> apply_filter(
    const std::vector<layout::LayoutObject>& objects, const FilterRule& rule);

std::vector<SceneRecord> filter_dataset(std::vector<SceneRecord> records, const FilterRule& rule);

enum class AugmentMode { flips, flips_and_crops };

SceneRecord flip_horizontal(const SceneRecord& record);
SceneRecord augment(const SceneRecord& record, Rng& rng, AugmentMode mode);

// ------------------------------------------------------------- descriptors

struct SceneDescriptor {
    std::string id;
    std::string image_path; // relative to the manifest/annotation file
    int width = 0;
    int height = 0;
    std::vector<layout::LayoutObject> objects;
};

struct AnnotationSet {
    std::vector<SceneDescriptor> records;
    std::vector<int64_t> category_id_map; // dense index -> original id
    int clamp_warnings = 0;
};

// COCO-style annotation JSON: images[], annotations[] (bbox [x,y,w,h] in
// pixels), categories[].
AnnotationSet load_annotations(const std::string& path);
void write_annotations(const std::string& path, const std::vector<SceneDescriptor>& records,
                       const std::vector<std::string>& category_names);

// newline-delimited JSON manifest, one record descriptor per line
void write_manifest(const std::string& path, const std::vector<SceneDescriptor>& records);
std::vector<SceneDescriptor> read_manifest(const std::string& path);

SceneRecord load_record(const SceneDescriptor& descriptor, const std::string& base_dir);
std::string directory_of(const std::string& path);

enum class Split { train, val, test };
Split split_of(uint64_t seed, int64_t index); // seeded 90/5/5

} // namespace scenegen::data
