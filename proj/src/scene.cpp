#include "scenegen/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace scenegen::data {

namespace {

std::array<float, 3> hsv_to_rgb(float h, float s, float v) {
    const float c = v * s;
    const float hp = h / 60.0f;
    const float x = c * (1.0f - std::abs(std::fmod(hp, 2.0f) - 1.0f));
    float r = 0, g = 0, b = 0;
    if (hp < 1) r = c, g = x;
    else if (hp < 2) r = x, g = c;
    else if (hp < 3) g = c, b = x;
    else if (hp < 4) g = x, b = c;
    else if (hp < 5) r = x, b = c;
    else r = c, b = x;
    const float m = v - c;
    return {r + m, g + m, b + m};
}

const char* shape_name(Shape s) {
    switch (s) {
        case Shape::rectangle: return "rectangle";
        case Shape::circle: return "circle";
        default: return "triangle";
    }
}

} // namespace

Palette Palette::standard(int n_categories) {
    if (n_categories < 1) throw std::invalid_argument("palette: need at least one category");
    Palette p;
    for (int i = 0; i < n_categories; ++i) {
        Category cat;
        cat.shape = static_cast<Shape>(i % 3);
        const float hue = 360.0f * static_cast<float>(i) / static_cast<float>(n_categories);
        const auto rgb = hsv_to_rgb(hue, 0.85f, 0.95f);
        for (int c = 0; c < 3; ++c) cat.color[c] = rgb[c] * 2.0f - 1.0f;
        cat.name = std::string(shape_name(cat.shape)) + "_" + std::to_string(i);
        p.categories.push_back(std::move(cat));
    }
    return p;
}

namespace {

struct PixelBox {
    int x = 0, y = 0, w = 0, h = 0;

    float coverage_of(const PixelBox& other) const {
        const int ix = std::max(0, std::min(x + w, other.x + other.w) - std::max(x, other.x));
        const int iy = std::max(0, std::min(y + h, other.y + other.h) - std::max(y, other.y));
        return static_cast<float>(ix) * iy / (static_cast<float>(other.w) * other.h);
    }
};

void draw_shape(Image& img, const PixelBox& box, Shape shape, const std::array<float, 3>& color) {
    const float cx = box.x + box.w * 0.5f;
    const float cy = box.y + box.h * 0.5f;
    for (int y = box.y; y < box.y + box.h; ++y) {
        for (int x = box.x; x < box.x + box.w; ++x) {
            const float px = x + 0.5f, py = y + 0.5f;
            bool inside = false;
            switch (shape) {
                case Shape::rectangle:
                    inside = true;
                    break;
                case Shape::circle: {
                    // half-pixel dilation keeps raster coverage above the
                    // analytic pi/4 of the bounding box
                    const float rx = box.w * 0.5f + 0.5f;
                    const float ry = box.h * 0.5f + 0.5f;
                    const float dx = (px - cx) / rx, dy = (py - cy) / ry;
                    inside = dx * dx + dy * dy <= 1.0f;
                    break;
                }
                case Shape::triangle: {
                    // apex at top-center, base on the bottom edge; slanted
                    // edges dilated so coverage stays clear of one half
                    const float t = (py - box.y) / static_cast<float>(box.h);
                    const float half_width = 0.5f * box.w * t + 0.75f;
                    inside = std::abs(px - cx) <= half_width;
                    break;
                }
            }
            if (inside) {
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = color[c];
            }
        }
    }
}

} // namespace

SceneRecord generate_synthetic_scene(Rng& rng, const SceneGenConfig& config) {
    if (config.min_size > config.canvas || config.max_size < config.min_size ||
        config.min_objects > config.max_objects || config.min_objects < 0) {
        throw std::invalid_argument("scene generator: unsatisfiable config");
    }
    const int canvas = config.canvas;
    SceneRecord record;
    record.image = Image(canvas, canvas);

    // two-tone vertical gradient between dark grays
    const float top = rng.uniform(-0.85f, -0.65f);
    const float bottom = rng.uniform(-0.6f, -0.4f);
    for (int y = 0; y < canvas; ++y) {
        const float shade = top + (bottom - top) * static_cast<float>(y) / (canvas - 1);
        for (int x = 0; x < canvas; ++x) {
            for (int c = 0; c < 3; ++c) record.image.at(c, y, x) = shade;
        }
    }

    const int target = rng.uniform_int(config.min_objects, config.max_objects);
    std::vector<PixelBox> placed;
    for (int i = 0; i < target; ++i) {
        for (int attempt = 0; attempt < config.placement_attempts; ++attempt) {
            const int category = rng.uniform_int(0, config.palette.size() - 1);
            const Shape shape = config.palette.categories[static_cast<size_t>(category)].shape;
            PixelBox box;
            box.w = rng.uniform_int(config.min_size, std::min(config.max_size, canvas));
            box.h = shape == Shape::circle ? box.w
                                           : rng.uniform_int(config.min_size,
                                                             std::min(config.max_size, canvas));
            box.x = rng.uniform_int(0, canvas - box.w);
            box.y = rng.uniform_int(0, canvas - box.h);

            bool ok = true;
            for (const PixelBox& earlier : placed) {
                if (box.coverage_of(earlier) > config.max_occlusion) {
                    ok = false;
                    break;
                }
            }
            if (!ok) continue;

            placed.push_back(box);
            draw_shape(record.image, box, shape,
                       config.palette.categories[static_cast<size_t>(category)].color);
            layout::LayoutObject obj;
            obj.category = category;
            obj.x0 = static_cast<float>(box.x) / canvas;
            obj.y0 = static_cast<float>(box.y) / canvas;
            obj.x1 = static_cast<float>(box.x + box.w) / canvas;
            obj.y1 = static_cast<float>(box.y + box.h) / canvas;
            record.objects.push_back(obj);
            break;
        }
    }
    return record;
}

std::optional<std::vector<layout::LayoutObject>> apply_filter(
    const std::vector<layout::LayoutObject>& objects, const FilterRule& rule) {
    std::vector<layout::LayoutObject> qualifying;
    for (const layout::LayoutObject& obj : objects) {
        if (obj.area() >= rule.min_area_fraction) qualifying.push_back(obj);
    }
    const int count = static_cast<int>(qualifying.size());
    if (count < rule.min_objects || count > rule.max_objects) return std::nullopt;
    if (rule.min_area_fraction > 0.0f) return qualifying;
    return objects;
}

std::vector<SceneRecord> filter_dataset(std::vector<SceneRecord> records, const FilterRule& rule) {
    std::vector<SceneRecord> kept;
    for (SceneRecord& record : records) {
        if (auto objects = apply_filter(record.objects, rule)) {
            record.objects = std::move(*objects);
            kept.push_back(std::move(record));
        }
    }
    return kept;
}

SceneRecord flip_horizontal(const SceneRecord& record) {
    SceneRecord out;
    out.id = record.id;
    out.image = Image(record.image.width, record.image.height);
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < record.image.height; ++y) {
            for (int x = 0; x < record.image.width; ++x) {
                out.image.at(c, y, x) = record.image.at(c, y, record.image.width - 1 - x);
            }
        }
    }
    for (layout::LayoutObject obj : record.objects) {
        const float x0 = 1.0f - obj.x1;
        const float x1 = 1.0f - obj.x0;
        obj.x0 = x0;
        obj.x1 = x1;
        out.objects.push_back(obj);
    }
    return out;
}

SceneRecord augment(const SceneRecord& record, Rng& rng, AugmentMode mode) {
    SceneRecord out = rng.uniform() < 0.5 ? flip_horizontal(record) : record;
    if (mode == AugmentMode::flips) return out;

    const int w = out.image.width, h = out.image.height;
    const int side = std::min(w, h);
    if (w == h) return out; // square crop of a square image is the identity

    const int max_offset = std::max(w, h) - side;
    const int offset = rng.uniform_int(0, max_offset);
    const int x0 = w > h ? offset : 0;
    const int y0 = h > w ? offset : 0;

    SceneRecord cropped;
    cropped.id = out.id;
    cropped.image = crop(out.image, x0, y0, side, side);
    for (const layout::LayoutObject& obj : out.objects) {
        layout::LayoutObject adj;
        adj.category = obj.category;
        adj.x0 = std::clamp((obj.x0 * w - x0) / side, 0.0f, 1.0f);
        adj.x1 = std::clamp((obj.x1 * w - x0) / side, 0.0f, 1.0f);
        adj.y0 = std::clamp((obj.y0 * h - y0) / side, 0.0f, 1.0f);
        adj.y1 = std::clamp((obj.y1 * h - y0) / side, 0.0f, 1.0f);
        if (adj.area() > 0.0f) cropped.objects.push_back(adj);
    }
    return cropped;
}

// --------------------------------------------------------------- descriptors

namespace {

using nlohmann::json;

layout::LayoutObject object_from_bbox(double x, double y, double w, double h, int category,
                                      int img_w, int img_h, int* clamp_warnings) {
    layout::LayoutObject obj;
    obj.category = category;
    float x0 = static_cast<float>(x / img_w);
    float y0 = static_cast<float>(y / img_h);
    float x1 = static_cast<float>((x + w) / img_w);
    float y1 = static_cast<float>((y + h) / img_h);
    if (x0 < 0.0f || y0 < 0.0f || x1 > 1.0f || y1 > 1.0f) {
        if (clamp_warnings) ++*clamp_warnings;
        x0 = std::clamp(x0, 0.0f, 1.0f);
        y0 = std::clamp(y0, 0.0f, 1.0f);
        x1 = std::clamp(x1, 0.0f, 1.0f);
        y1 = std::clamp(y1, 0.0f, 1.0f);
    }
    obj.x0 = x0;
    obj.y0 = y0;
    obj.x1 = std::max(x1, x0);
    obj.y1 = std::max(y1, y0);
    return obj;
}

json bbox_json(const layout::LayoutObject& obj, int img_w, int img_h) {
    return json::array({obj.x0 * img_w, obj.y0 * img_h, (obj.x1 - obj.x0) * img_w,
                        (obj.y1 - obj.y0) * img_h});
}

} // namespace

AnnotationSet load_annotations(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    json root;
    try {
        root = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("annotation parse error at byte " + std::to_string(e.byte) +
                                 " in " + path + ": " + e.what());
    }

    AnnotationSet set;
    // dense remap over sorted original category ids
    std::vector<int64_t> original_ids;
    for (const json& cat : root.value("categories", json::array())) {
        original_ids.push_back(cat.at("id").get<int64_t>());
    }
    std::sort(original_ids.begin(), original_ids.end());
    original_ids.erase(std::unique(original_ids.begin(), original_ids.end()), original_ids.end());
    set.category_id_map = original_ids;
    auto dense_of = [&](int64_t id) {
        const auto it = std::lower_bound(original_ids.begin(), original_ids.end(), id);
        if (it == original_ids.end() || *it != id) {
            throw std::runtime_error("annotation references unknown category " +
                                     std::to_string(id));
        }
        return static_cast<int>(it - original_ids.begin());
    };

    std::vector<int64_t> image_ids;
    std::vector<size_t> record_of_image;
    for (const json& img : root.value("images", json::array())) {
        SceneDescriptor desc;
        const int64_t id = img.at("id").get<int64_t>();
        desc.id = std::to_string(id);
        desc.image_path = img.value("file_name", "");
        desc.width = img.at("width").get<int>();
        desc.height = img.at("height").get<int>();
        image_ids.push_back(id);
        record_of_image.push_back(set.records.size());
        set.records.push_back(std::move(desc));
    }

    for (const json& ann : root.value("annotations", json::array())) {
        const int64_t image_id = ann.at("image_id").get<int64_t>();
        const auto it = std::find(image_ids.begin(), image_ids.end(), image_id);
        if (it == image_ids.end()) {
            throw std::runtime_error("annotation references unknown image " +
                                     std::to_string(image_id));
        }
        SceneDescriptor& desc = set.records[record_of_image[it - image_ids.begin()]];
        const json& bbox = ann.at("bbox");
        desc.objects.push_back(object_from_bbox(
            bbox.at(0).get<double>(), bbox.at(1).get<double>(), bbox.at(2).get<double>(),
            bbox.at(3).get<double>(), dense_of(ann.at("category_id").get<int64_t>()),
            desc.width, desc.height, &set.clamp_warnings));
    }
    return set;
}

void write_annotations(const std::string& path, const std::vector<SceneDescriptor>& records,
                       const std::vector<std::string>& category_names) {
    json root;
    root["images"] = json::array();
    root["annotations"] = json::array();
    root["categories"] = json::array();
    for (size_t i = 0; i < category_names.size(); ++i) {
        root["categories"].push_back({{"id", i}, {"name", category_names[i]}});
    }
    int64_t next_ann = 0;
    for (size_t i = 0; i < records.size(); ++i) {
        const SceneDescriptor& desc = records[i];
        root["images"].push_back({{"id", i},
                                  {"file_name", desc.image_path},
                                  {"width", desc.width},
                                  {"height", desc.height}});
        for (const layout::LayoutObject& obj : desc.objects) {
            root["annotations"].push_back({{"id", next_ann++},
                                           {"image_id", i},
                                           {"category_id", obj.category},
                                           {"bbox", bbox_json(obj, desc.width, desc.height)}});
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << root.dump();
}

void write_manifest(const std::string& path, const std::vector<SceneDescriptor>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    for (const SceneDescriptor& desc : records) {
        json line;
        line["id"] = desc.id;
        line["image"] = desc.image_path;
        line["width"] = desc.width;
        line["height"] = desc.height;
        line["objects"] = json::array();
        for (const layout::LayoutObject& obj : desc.objects) {
            line["objects"].push_back({{"category_id", obj.category},
                                       {"bbox", bbox_json(obj, desc.width, desc.height)}});
        }
        out << line.dump() << "\n";
    }
    if (!out) throw std::runtime_error("short write on " + path);
}

std::vector<SceneDescriptor> read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<SceneDescriptor> records;
    std::string line;
    int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json entry;
        try {
            entry = json::parse(line);
        } catch (const json::parse_error& e) {
            throw std::runtime_error("manifest parse error on line " + std::to_string(line_no) +
                                     ": " + e.what());
        }
        SceneDescriptor desc;
        desc.id = entry.at("id").get<std::string>();
        desc.image_path = entry.at("image").get<std::string>();
        desc.width = entry.at("width").get<int>();
        desc.height = entry.at("height").get<int>();
        for (const json& obj : entry.value("objects", json::array())) {
            const json& bbox = obj.at("bbox");
            desc.objects.push_back(object_from_bbox(
                bbox.at(0).get<double>(), bbox.at(1).get<double>(), bbox.at(2).get<double>(),
                bbox.at(3).get<double>(), obj.at("category_id").get<int>(), desc.width,
                desc.height, nullptr));
        }
        records.push_back(std::move(desc));
    }
    return records;
}

std::string directory_of(const std::string& path) {
    const size_t slash = path.find_last_of('/');
    return slash == std::string::npos ? std::string(".") : path.substr(0, slash);
}

SceneRecord load_record(const SceneDescriptor& descriptor, const std::string& base_dir) {
    SceneRecord record;
    record.id = descriptor.id;
    const std::string full = descriptor.image_path.starts_with('/')
                                 ? descriptor.image_path
                                 : base_dir + "/" + descriptor.image_path;
    record.image = read_image(full);
    record.objects = descriptor.objects;
    return record;
}

Split split_of(uint64_t seed, int64_t index) {
    const uint64_t h = hash_combine(seed, static_cast<uint64_t>(index)) % 20;
    if (h < 18) return Split::train;
    return h == 18 ? Split::val : Split::test;
}

} // namespace scenegen::data
