#include "scenegen/layout.hpp"

#include <stdexcept>

namespace scenegen::layout {

int encode_position(float x, float y, const GridSpec& grid) {
    if (x < 0.0f || x > 1.0f || y < 0.0f || y > 1.0f) {
        throw std::invalid_argument("encode_position: point outside the unit square");
    }
    const int col = static_cast<int>(std::lround(static_cast<double>(x) * (grid.n_col - 1)));
    const int row = static_cast<int>(std::lround(static_cast<double>(y) * (grid.n_row - 1)));
    return row * grid.n_col + col;
}

std::pair<float, float> decode_position(int p, const GridSpec& grid) {
    if (p < 0 || p >= grid.usable_positions()) {
        throw std::invalid_argument("decode_position: token outside the grid");
    }
    const int col = p % grid.n_col;
    const int row = p / grid.n_col;
    const float x = grid.n_col > 1 ? static_cast<float>(col) / (grid.n_col - 1) : 0.0f;
    const float y = grid.n_row > 1 ? static_cast<float>(row) / (grid.n_row - 1) : 0.0f;
    return {x, y};
}

ConditioningSequence tokenize_layout(std::span<const LayoutObject> objects, int n_max,
                                     const GridSpec& grid, const VocabularyMap& vocab) {
    if (static_cast<int>(objects.size()) > n_max) {
        throw std::length_error("tokenize_layout: more objects than n_max slots");
    }
    ConditioningSequence seq;
    seq.n_max = n_max;
    seq.tokens.reserve(static_cast<size_t>(3 * n_max));
    for (const LayoutObject& obj : objects) {
        if (obj.category < 0 || obj.category >= vocab.n_categories) {
            throw std::invalid_argument("tokenize_layout: category outside vocabulary");
        }
        seq.tokens.push_back(vocab.category_offset() + obj.category);
        seq.tokens.push_back(vocab.position_offset() + encode_position(obj.x0, obj.y0, grid));
        seq.tokens.push_back(vocab.position_offset() + encode_position(obj.x1, obj.y1, grid));
    }
    const int padding = n_max - static_cast<int>(objects.size());
    for (int i = 0; i < 3 * padding; ++i) seq.tokens.push_back(vocab.null_token());
    return seq;
}

std::vector<LayoutObject> detokenize_layout(std::span<const int> layout_tokens,
                                            const GridSpec& grid, const VocabularyMap& vocab) {
    if (layout_tokens.size() % 3 != 0) {
        throw std::invalid_argument("detokenize_layout: token count is not a multiple of 3");
    }
    std::vector<LayoutObject> objects;
    for (size_t i = 0; i < layout_tokens.size(); i += 3) {
        const int cat_token = layout_tokens[i];
        const int tl_token = layout_tokens[i + 1];
        const int br_token = layout_tokens[i + 2];
        const bool all_null = cat_token == vocab.null_token() &&
                              tl_token == vocab.null_token() && br_token == vocab.null_token();
        if (all_null) continue;
        if (!vocab.is_category(cat_token)) {
            throw std::invalid_argument("detokenize_layout: expected category token at slot " +
                                        std::to_string(i));
        }
        if (!vocab.is_position(tl_token)) {
            throw std::invalid_argument("detokenize_layout: expected position token at slot " +
                                        std::to_string(i + 1));
        }
        if (!vocab.is_position(br_token)) {
            throw std::invalid_argument("detokenize_layout: expected position token at slot " +
                                        std::to_string(i + 2));
        }
        LayoutObject obj;
        obj.category = cat_token - vocab.category_offset();
        const auto tl = decode_position(tl_token - vocab.position_offset(), grid);
        const auto br = decode_position(br_token - vocab.position_offset(), grid);
        obj.x0 = tl.first;
        obj.y0 = tl.second;
        obj.x1 = br.first;
        obj.y1 = br.second;
        objects.push_back(obj);
    }
    return objects;
}

std::pair<int, int> viewport_tokens(const Viewport& viewport, const GridSpec& grid,
                                    const VocabularyMap& vocab) {
    if (viewport.x1 <= viewport.x0 || viewport.y1 <= viewport.y0) {
        throw std::invalid_argument("viewport_tokens: degenerate viewport");
    }
    const int tl = encode_position(viewport.x0, viewport.y0, grid);
    const int br = encode_position(viewport.x1, viewport.y1, grid);
    return {vocab.position_offset() + tl, vocab.position_offset() + br};
}

ConditioningSequence build_conditioning(std::span<const LayoutObject> objects, int n_max,
                                        const GridSpec& grid, const VocabularyMap& vocab,
                                        const std::optional<Viewport>& viewport) {
    ConditioningSequence seq = tokenize_layout(objects, n_max, grid, vocab);
    if (viewport.has_value()) {
        const auto [tl, br] = viewport_tokens(*viewport, grid, vocab);
        seq.tokens.push_back(tl);
        seq.tokens.push_back(br);
        seq.has_viewport = true;
    }
    return seq;
}

} // namespace scenegen::layout
