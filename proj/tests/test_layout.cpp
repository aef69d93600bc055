#include <doctest.h>

#include <cmath>

#include "scenegen/layout.hpp"
#include "scenegen/rng.hpp"

using namespace scenegen;
using namespace scenegen::layout;

namespace {

GridSpec grid32() { return GridSpec::make(1024); }

VocabularyMap vocab32() { return VocabularyMap::make(256, 16, grid32()); }

LayoutObject make_object(int category, float x0, float y0, float x1, float y1) {
    LayoutObject o;
    o.category = category;
    o.x0 = x0;
    o.y0 = y0;
    o.x1 = x1;
    o.y1 = y1;
    return o;
}

} // namespace

TEST_CASE("grid spec from n_positions") {
    const GridSpec g = grid32();
    CHECK(g.n_col == 32);
    CHECK(g.n_row == 32);
    CHECK(g.usable_positions() == 1024);

    const GridSpec odd = GridSpec::make(1000);
    CHECK(odd.n_col == 31);                     // floor(sqrt(1000))
    CHECK(odd.n_row == 32);                     // floor(1000 / 31)
    CHECK(odd.usable_positions() <= odd.n_positions);
}

TEST_CASE("vocabulary ranges partition the id space") {
    const VocabularyMap v = vocab32();
    CHECK(v.vocab_size() == 256 + 16 + 1024 + 1);
    CHECK(v.is_image(0));
    CHECK(v.is_image(255));
    CHECK(v.is_category(256));
    CHECK(v.is_category(271));
    CHECK(v.is_position(272));
    CHECK(v.is_position(272 + 1023));
    CHECK(v.null_token() == 272 + 1024);
    for (int t = 0; t < v.vocab_size(); ++t) {
        const int memberships = static_cast<int>(v.is_image(t)) +
                                static_cast<int>(v.is_category(t)) +
                                static_cast<int>(v.is_position(t)) +
                                static_cast<int>(t == v.null_token());
        CHECK(memberships == 1);
    }
}

TEST_CASE("position corners") {
    const GridSpec g = grid32();
    CHECK(encode_position(0.0f, 0.0f, g) == 0);
    CHECK(encode_position(1.0f, 1.0f, g) == 1023);
    CHECK(encode_position(1.0f, 0.0f, g) == 31);
    CHECK_THROWS_AS(encode_position(-0.01f, 0.5f, g), std::invalid_argument);
    CHECK_THROWS_AS(encode_position(0.5f, 1.01f, g), std::invalid_argument);
}

TEST_CASE("decode_position applies the modulus arithmetic") {
    const GridSpec g = grid32();
    const auto [x, y] = decode_position(35, g); // column 3, row 1
    CHECK(x == doctest::Approx(3.0f / 31.0f));
    CHECK(y == doctest::Approx(1.0f / 31.0f));
    const auto [x0, y0] = decode_position(0, g);
    CHECK(x0 == 0.0f);
    CHECK(y0 == 0.0f);
    CHECK_THROWS_AS(decode_position(1024, g), std::invalid_argument);
    CHECK_THROWS_AS(decode_position(-1, g), std::invalid_argument);
}

TEST_CASE("exhaustive roundtrip over every grid intersection") {
    const GridSpec g = grid32();
    for (int p = 0; p < g.usable_positions(); ++p) {
        const auto [x, y] = decode_position(p, g);
        CHECK(encode_position(x, y, g) == p);
    }
}

TEST_CASE("quantization displaces points by at most half a cell") {
    const GridSpec g = grid32();
    Rng rng(21);
    const float bound_x = 0.5f / (g.n_col - 1) + 1e-6f;
    const float bound_y = 0.5f / (g.n_row - 1) + 1e-6f;
    for (int trial = 0; trial < 2000; ++trial) {
        const float x = static_cast<float>(rng.uniform());
        const float y = static_cast<float>(rng.uniform());
        const auto [dx, dy] = decode_position(encode_position(x, y, g), g);
        CHECK(std::abs(dx - x) <= bound_x);
        CHECK(std::abs(dy - y) <= bound_y);
    }
}

TEST_CASE("tokenize_layout pads with null triples") {
    const GridSpec g = grid32();
    const VocabularyMap v = vocab32();

    SUBCASE("empty layout is all padding") {
        const ConditioningSequence seq = tokenize_layout({}, 8, g, v);
        CHECK(seq.tokens.size() == 24);
        for (int t : seq.tokens) CHECK(t == v.null_token());
    }
    SUBCASE("full-image object hits the grid extremes") {
        const LayoutObject obj = make_object(5, 0.0f, 0.0f, 1.0f, 1.0f);
        const ConditioningSequence seq = tokenize_layout({&obj, 1}, 8, g, v);
        CHECK(seq.tokens[0] == v.category_offset() + 5);
        CHECK(seq.tokens[1] == v.position_offset() + 0);
        CHECK(seq.tokens[2] == v.position_offset() + 1023);
        for (size_t i = 3; i < seq.tokens.size(); ++i) CHECK(seq.tokens[i] == v.null_token());
    }
    SUBCASE("capacity and category violations") {
        std::vector<LayoutObject> too_many(9, make_object(0, 0.1f, 0.1f, 0.2f, 0.2f));
        CHECK_THROWS_AS(tokenize_layout(too_many, 8, g, v), std::length_error);
        const LayoutObject bad = make_object(16, 0.1f, 0.1f, 0.2f, 0.2f);
        CHECK_THROWS_AS(tokenize_layout({&bad, 1}, 8, g, v), std::invalid_argument);
    }
    SUBCASE("order preservation: object i occupies slots [3i, 3i+3)") {
        std::vector<LayoutObject> objects = {make_object(1, 0.0f, 0.0f, 0.5f, 0.5f),
                                             make_object(7, 0.25f, 0.25f, 1.0f, 1.0f)};
        const ConditioningSequence seq = tokenize_layout(objects, 4, g, v);
        CHECK(seq.tokens[0] == v.category_offset() + 1);
        CHECK(seq.tokens[3] == v.category_offset() + 7);
        // padding suffix: after the first null triple everything stays null
        bool seen_null = false;
        for (size_t i = 0; i < seq.tokens.size(); i += 3) {
            const bool is_null = seq.tokens[i] == v.null_token();
            if (seen_null) CHECK(is_null);
            seen_null = seen_null || is_null;
        }
    }
}

TEST_CASE("detokenize recovers categories exactly and corners within half a cell") {
    const GridSpec g = grid32();
    const VocabularyMap v = vocab32();
    Rng rng(5);
    const float bound = 0.5f / 31.0f + 1e-6f;
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<LayoutObject> objects;
        const int n = rng.uniform_int(0, 8);
        for (int i = 0; i < n; ++i) {
            const float x0 = static_cast<float>(rng.uniform());
            const float y0 = static_cast<float>(rng.uniform());
            const float x1 = x0 + (1.0f - x0) * static_cast<float>(rng.uniform());
            const float y1 = y0 + (1.0f - y0) * static_cast<float>(rng.uniform());
            objects.push_back(make_object(rng.uniform_int(0, 15), x0, y0, x1, y1));
        }
        const ConditioningSequence seq = tokenize_layout(objects, 8, g, v);
        const std::vector<LayoutObject> decoded = detokenize_layout(seq.layout_tokens(), g, v);
        REQUIRE(decoded.size() == objects.size());
        for (size_t i = 0; i < objects.size(); ++i) {
            CHECK(decoded[i].category == objects[i].category);
            CHECK(std::abs(decoded[i].x0 - objects[i].x0) <= bound);
            CHECK(std::abs(decoded[i].y0 - objects[i].y0) <= bound);
            CHECK(std::abs(decoded[i].x1 - objects[i].x1) <= bound);
            CHECK(std::abs(decoded[i].y1 - objects[i].y1) <= bound);
        }
    }
}

TEST_CASE("all-null sequence decodes to an empty layout") {
    const GridSpec g = grid32();
    const VocabularyMap v = vocab32();
    const std::vector<int> nulls(24, v.null_token());
    CHECK(detokenize_layout(nulls, g, v).empty());
}

TEST_CASE("slot typing violations are rejected with the slot index") {
    const GridSpec g = grid32();
    const VocabularyMap v = vocab32();
    Rng rng(99);
    int rejected = 0;
    for (int trial = 0; trial < 500; ++trial) {
        // random garbage over the whole vocabulary
        std::vector<int> tokens(6);
        for (int& t : tokens) t = rng.uniform_int(0, v.vocab_size() - 1);
        try {
            detokenize_layout(tokens, g, v);
        } catch (const std::invalid_argument& e) {
            ++rejected;
            CHECK(std::string(e.what()).find("slot") != std::string::npos);
        }
    }
    CHECK(rejected > 0);

    // a category token in a position slot names the exact offender
    std::vector<int> bad = {v.category_offset(), v.category_offset(), v.position_offset()};
    try {
        detokenize_layout(bad, g, v);
        FAIL("expected a parse error");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("slot 1") != std::string::npos);
    }
}

TEST_CASE("viewport tokens") {
    const GridSpec g = grid32();
    const VocabularyMap v = vocab32();

    const auto [tl, br] = viewport_tokens(Viewport::full(), g, v);
    CHECK(tl == v.position_offset() + 0);
    CHECK(br == v.position_offset() + 1023);

    Viewport degenerate{0.2f, 0.3f, 0.2f, 0.8f};
    CHECK_THROWS_AS(viewport_tokens(degenerate, g, v), std::invalid_argument);

    // sliding one cell right changes only the viewport suffix
    const LayoutObject obj = make_object(3, 0.1f, 0.1f, 0.6f, 0.7f);
    Viewport a{0.0f, 0.0f, 16.0f / 31.0f, 16.0f / 31.0f};
    Viewport b{1.0f / 31.0f, 0.0f, 17.0f / 31.0f, 16.0f / 31.0f};
    const ConditioningSequence sa = build_conditioning({&obj, 1}, 8, g, v, a);
    const ConditioningSequence sb = build_conditioning({&obj, 1}, 8, g, v, b);
    REQUIRE(sa.tokens.size() == 26);
    REQUIRE(sb.tokens.size() == 26);
    for (size_t i = 0; i < 24; ++i) CHECK(sa.tokens[i] == sb.tokens[i]);
    CHECK(sa.tokens[24] != sb.tokens[24]);
    CHECK(sa.tokens[25] != sb.tokens[25]);
}
