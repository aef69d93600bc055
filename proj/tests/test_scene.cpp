#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "scenegen/scene.hpp"

using namespace scenegen;
using namespace scenegen::data;

namespace {

SceneGenConfig small_config() {
    SceneGenConfig cfg;
    cfg.canvas = 64;
    cfg.palette = Palette::standard(16);
    return cfg;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

} // namespace

TEST_CASE("zero-object config yields a background-only record") {
    SceneGenConfig cfg = small_config();
    cfg.min_objects = 0;
    cfg.max_objects = 0;
    Rng rng(1);
    const SceneRecord record = generate_synthetic_scene(rng, cfg);
    CHECK(record.objects.empty());
    CHECK(record.image.width == 64);
    // background stays dark
    for (float v : record.image.rgb) CHECK(v < 0.0f);
}

TEST_CASE("a rectangle's recorded box matches the drawn extent exactly") {
    SceneGenConfig cfg = small_config();
    cfg.min_objects = 1;
    cfg.max_objects = 1;
    // category 0 of the standard palette is a rectangle
    cfg.palette.categories.resize(1);
    Rng rng(3);
    const SceneRecord record = generate_synthetic_scene(rng, cfg);
    REQUIRE(record.objects.size() == 1);
    const layout::LayoutObject& obj = record.objects[0];
    const auto& color = cfg.palette.categories[0].color;

    const int x0 = static_cast<int>(std::lround(obj.x0 * 64));
    const int x1 = static_cast<int>(std::lround(obj.x1 * 64));
    const int y0 = static_cast<int>(std::lround(obj.y0 * 64));
    const int y1 = static_cast<int>(std::lround(obj.y1 * 64));
    for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
            const bool inside = x >= x0 && x < x1 && y >= y0 && y < y1;
            const bool colored = record.image.at(0, y, x) == color[0] &&
                                 record.image.at(1, y, x) == color[1] &&
                                 record.image.at(2, y, x) == color[2];
            CHECK(inside == colored);
        }
    }
}

TEST_CASE("generation is reproducible and boxes stay inside the unit square") {
    const SceneGenConfig cfg = small_config();
    Rng r1(42), r2(42);
    const SceneRecord a = generate_synthetic_scene(r1, cfg);
    const SceneRecord b = generate_synthetic_scene(r2, cfg);
    CHECK(a.image.rgb == b.image.rgb);
    REQUIRE(a.objects.size() == b.objects.size());
    for (const auto& obj : a.objects) {
        CHECK(obj.x0 >= 0.0f);
        CHECK(obj.y0 >= 0.0f);
        CHECK(obj.x1 <= 1.0f);
        CHECK(obj.y1 <= 1.0f);
        CHECK(obj.x0 < obj.x1);
        CHECK(obj.y0 < obj.y1);
    }
}

TEST_CASE("mean color inside boxes differs from the background") {
    // the background is an exactly gray gradient, so the channel spread of a
    // box's mean color is zero without an object and large with one
    const SceneGenConfig cfg = small_config();
    Rng rng(7);
    int boxes = 0, distinct = 0;
    for (int i = 0; i < 1000; ++i) {
        const SceneRecord record = generate_synthetic_scene(rng, cfg);
        for (const auto& obj : record.objects) {
            const int x0 = static_cast<int>(obj.x0 * 64), x1 = static_cast<int>(obj.x1 * 64);
            const int y0 = static_cast<int>(obj.y0 * 64), y1 = static_cast<int>(obj.y1 * 64);
            double mean[3] = {0.0, 0.0, 0.0};
            int n = 0;
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    for (int c = 0; c < 3; ++c) mean[c] += record.image.at(c, y, x);
                    ++n;
                }
            }
            const double spread = std::max({mean[0], mean[1], mean[2]}) / n -
                                  std::min({mean[0], mean[1], mean[2]}) / n;
            ++boxes;
            if (spread > 0.3) ++distinct;
        }
    }
    CHECK(boxes > 2000);
    CHECK(static_cast<double>(distinct) / boxes >= 0.99);
}

TEST_CASE("filter rules") {
    auto obj = [](float area_side) {
        layout::LayoutObject o;
        o.category = 0;
        o.x1 = area_side;
        o.y1 = area_side;
        return o;
    };
    SUBCASE("two large objects fail the 3..8 rule") {
        const std::vector<layout::LayoutObject> objects = {obj(0.5f), obj(0.4f)};
        CHECK_FALSE(apply_filter(objects, {3, 8, 0.02f}).has_value());
    }
    SUBCASE("2..30 with no area floor keeps everything") {
        const std::vector<layout::LayoutObject> objects = {obj(0.5f), obj(0.05f)};
        const auto kept = apply_filter(objects, {2, 30, 0.0f});
        REQUIRE(kept.has_value());
        CHECK(kept->size() == 2);
    }
    SUBCASE("qualifying objects are counted, small ones dropped") {
        // 0.1^2 = 1% < 2%; three big ones qualify
        const std::vector<layout::LayoutObject> objects = {obj(0.3f), obj(0.3f), obj(0.3f),
                                                           obj(0.1f)};
        const auto kept = apply_filter(objects, {3, 8, 0.02f});
        REQUIRE(kept.has_value());
        CHECK(kept->size() == 3);
    }
    SUBCASE("brute-force recount matches the filter on random records") {
        Rng rng(11);
        const FilterRule rule{3, 8, 0.02f};
        const SceneGenConfig cfg = small_config();
        int checked = 0;
        for (int i = 0; i < 500; ++i) {
            const SceneRecord record = generate_synthetic_scene(rng, cfg);
            int qualifying = 0;
            for (const auto& o : record.objects) {
                if (o.area() >= rule.min_area_fraction) ++qualifying;
            }
            const bool expect = qualifying >= rule.min_objects && qualifying <= rule.max_objects;
            const auto got = apply_filter(record.objects, rule);
            CHECK(got.has_value() == expect);
            if (got) CHECK(static_cast<int>(got->size()) == qualifying);
            ++checked;
        }
        CHECK(checked == 500);
    }
    SUBCASE("filtering is idempotent") {
        Rng rng(13);
        const FilterRule rule{3, 8, 0.02f};
        std::vector<SceneRecord> records;
        for (int i = 0; i < 50; ++i) records.push_back(generate_synthetic_scene(rng, small_config()));
        const std::vector<SceneRecord> once = filter_dataset(records, rule);
        const std::vector<SceneRecord> twice = filter_dataset(once, rule);
        REQUIRE(once.size() == twice.size());
        for (size_t i = 0; i < once.size(); ++i) {
            CHECK(once[i].objects.size() == twice[i].objects.size());
        }
    }
}

TEST_CASE("double flip is the identity") {
    Rng rng(17);
    const SceneRecord record = generate_synthetic_scene(rng, small_config());
    const SceneRecord back = flip_horizontal(flip_horizontal(record));
    CHECK(back.image.rgb == record.image.rgb);
    REQUIRE(back.objects.size() == record.objects.size());
    for (size_t i = 0; i < record.objects.size(); ++i) {
        CHECK(back.objects[i].x0 == doctest::Approx(record.objects[i].x0));
        CHECK(back.objects[i].x1 == doctest::Approx(record.objects[i].x1));
    }
}

TEST_CASE("crop mode on a square input is the identity transform") {
    Rng gen_rng(19);
    const SceneRecord record = generate_synthetic_scene(gen_rng, small_config());
    Rng aug_rng(2); // first uniform() >= 0.5 with this seed? force both paths
    for (int trial = 0; trial < 4; ++trial) {
        const SceneRecord out = augment(record, aug_rng, AugmentMode::flips_and_crops);
        CHECK(out.image.width == record.image.width);
        CHECK(out.image.height == record.image.height);
        CHECK(out.objects.size() == record.objects.size());
    }
}

TEST_CASE("augmentation keeps the marker box on the marker pixels") {
    // single solid rectangle; after any augmentation chain its box must cover
    // at least 95% of its colored pixels
    SceneGenConfig cfg = small_config();
    cfg.min_objects = 1;
    cfg.max_objects = 1;
    cfg.palette.categories.resize(1); // rectangle category only
    const auto& color = cfg.palette.categories[0].color;

    Rng rng(23);
    for (int trial = 0; trial < 40; ++trial) {
        SceneRecord record = generate_synthetic_scene(rng, cfg);
        for (int hop = 0; hop < 3; ++hop) {
            record = augment(record, rng, AugmentMode::flips_and_crops);
        }
        REQUIRE(record.objects.size() == 1);
        const auto& obj = record.objects[0];
        const int w = record.image.width, h = record.image.height;
        int colored = 0, covered = 0;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const bool is_marker = record.image.at(0, y, x) == color[0] &&
                                       record.image.at(1, y, x) == color[1] &&
                                       record.image.at(2, y, x) == color[2];
                if (!is_marker) continue;
                ++colored;
                const float fx = (x + 0.5f) / w, fy = (y + 0.5f) / h;
                if (fx >= obj.x0 && fx <= obj.x1 && fy >= obj.y0 && fy <= obj.y1) ++covered;
            }
        }
        REQUIRE(colored > 0);
        CHECK(static_cast<double>(covered) / colored >= 0.95);
    }
}

TEST_CASE("annotation writer/reader roundtrip is lossless up to float precision") {
    Rng rng(31);
    std::vector<SceneDescriptor> records;
    for (int i = 0; i < 100; ++i) {
        SceneDescriptor desc;
        desc.id = std::to_string(i);
        desc.image_path = "img_" + std::to_string(i) + ".png";
        desc.width = 64 + rng.uniform_int(0, 64);
        desc.height = 64 + rng.uniform_int(0, 64);
        const int n = rng.uniform_int(0, 6);
        for (int j = 0; j < n; ++j) {
            layout::LayoutObject obj;
            obj.category = rng.uniform_int(0, 15);
            obj.x0 = rng.uniform(0.0f, 0.8f);
            obj.y0 = rng.uniform(0.0f, 0.8f);
            obj.x1 = obj.x0 + rng.uniform(0.05f, 1.0f - obj.x0);
            obj.y1 = obj.y0 + rng.uniform(0.05f, 1.0f - obj.y0);
            desc.objects.push_back(obj);
        }
        records.push_back(std::move(desc));
    }
    std::vector<std::string> names;
    for (int i = 0; i < 16; ++i) names.push_back("cat_" + std::to_string(i));

    const std::string path = temp_path("scenegen_ann.json");
    write_annotations(path, records, names);
    const AnnotationSet loaded = load_annotations(path);
    std::remove(path.c_str());

    CHECK(loaded.clamp_warnings == 0);
    CHECK(loaded.category_id_map.size() == 16);
    REQUIRE(loaded.records.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        REQUIRE(loaded.records[i].objects.size() == records[i].objects.size());
        for (size_t j = 0; j < records[i].objects.size(); ++j) {
            const auto& a = records[i].objects[j];
            const auto& b = loaded.records[i].objects[j];
            CHECK(b.category == a.category);
            CHECK(b.x0 == doctest::Approx(a.x0).epsilon(1e-5));
            CHECK(b.y0 == doctest::Approx(a.y0).epsilon(1e-5));
            CHECK(b.x1 == doctest::Approx(a.x1).epsilon(1e-5));
            CHECK(b.y1 == doctest::Approx(a.y1).epsilon(1e-5));
        }
    }
}

TEST_CASE("annotation edge cases") {
    SUBCASE("empty annotation list gives an empty dataset") {
        const std::string path = temp_path("scenegen_empty.json");
        std::ofstream(path) << R"({"images": [], "annotations": [], "categories": []})";
        CHECK(load_annotations(path).records.empty());
        std::remove(path.c_str());
    }
    SUBCASE("full-frame bbox maps to unit corners") {
        const std::string path = temp_path("scenegen_full.json");
        std::ofstream(path) << R"({"images": [{"id": 9, "file_name": "x.png", "width": 80,
            "height": 60}], "annotations": [{"id": 0, "image_id": 9, "category_id": 4,
            "bbox": [0, 0, 80, 60]}], "categories": [{"id": 4, "name": "thing"}]})";
        const AnnotationSet set = load_annotations(path);
        std::remove(path.c_str());
        REQUIRE(set.records.size() == 1);
        REQUIRE(set.records[0].objects.size() == 1);
        const auto& obj = set.records[0].objects[0];
        CHECK(obj.x0 == 0.0f);
        CHECK(obj.y0 == 0.0f);
        CHECK(obj.x1 == 1.0f);
        CHECK(obj.y1 == 1.0f);
        CHECK(obj.category == 0); // dense remap of original id 4
    }
    SUBCASE("malformed JSON reports a byte offset") {
        const std::string path = temp_path("scenegen_bad.json");
        std::ofstream(path) << R"({"images": [,])";
        try {
            load_annotations(path);
            FAIL("expected a parse error");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("byte") != std::string::npos);
        }
        std::remove(path.c_str());
    }
    SUBCASE("out-of-frame bbox is clamped and counted") {
        const std::string path = temp_path("scenegen_clamp.json");
        std::ofstream(path) << R"({"images": [{"id": 1, "file_name": "x.png", "width": 50,
            "height": 50}], "annotations": [{"id": 0, "image_id": 1, "category_id": 0,
            "bbox": [-5, 10, 70, 20]}], "categories": [{"id": 0, "name": "c"}]})";
        const AnnotationSet set = load_annotations(path);
        std::remove(path.c_str());
        CHECK(set.clamp_warnings == 1);
        const auto& obj = set.records[0].objects[0];
        CHECK(obj.x0 == 0.0f);
        CHECK(obj.x1 == 1.0f);
    }
}

TEST_CASE("manifest roundtrip") {
    Rng rng(37);
    std::vector<SceneDescriptor> records;
    for (int i = 0; i < 20; ++i) {
        SceneDescriptor d;
        d.id = "rec_" + std::to_string(i);
        d.image_path = "images/rec_" + std::to_string(i) + ".png";
        d.width = 64;
        d.height = 64;
        layout::LayoutObject obj;
        obj.category = i % 16;
        obj.x0 = 0.25f;
        obj.y0 = 0.125f;
        obj.x1 = 0.75f;
        obj.y1 = 0.5f;
        d.objects.push_back(obj);
        records.push_back(d);
    }
    const std::string path = temp_path("scenegen_manifest.jsonl");
    write_manifest(path, records);
    const std::vector<SceneDescriptor> loaded = read_manifest(path);
    std::remove(path.c_str());
    REQUIRE(loaded.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(loaded[i].id == records[i].id);
        CHECK(loaded[i].image_path == records[i].image_path);
        CHECK(loaded[i].objects[0].category == records[i].objects[0].category);
        CHECK(loaded[i].objects[0].x0 == doctest::Approx(0.25f));
    }
}

TEST_CASE("train/val/test split is seeded and roughly 90/5/5") {
    int train = 0, val = 0, test = 0;
    for (int64_t i = 0; i < 10000; ++i) {
        switch (split_of(123, i)) {
            case Split::train: ++train; break;
            case Split::val: ++val; break;
            case Split::test: ++test; break;
        }
    }
    CHECK(train > 8700);
    CHECK(val > 350);
    CHECK(test > 350);
    // deterministic in (seed, index)
    CHECK(split_of(123, 77) == split_of(123, 77));
}
