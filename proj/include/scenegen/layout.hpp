#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <span>
#include <string>
#include <vector>

namespace scenegen::layout {

// One annotated object: category plus normalized corner coordinates.
struct LayoutObject {
    int category = 0;
    float x0 = 0.0f, y0 = 0.0f; // top-left
    float x1 = 0.0f, y1 = 0.0f; // bottom-right

    float area() const { return (x1 - x0) * (y1 - y0); }
};

// Virtual grid of position tokens laid over the unit square. Only the
// n_col * n_row grid intersections are ever emitted; trailing indices up to
// n_positions stay unused so decoding is total.
struct GridSpec {
    int n_positions = 0;
    int n_col = 0;
    int n_row = 0;

    static GridSpec make(int n_positions) {
        if (n_positions < 1) throw std::invalid_argument("grid: n_positions must be positive");
        GridSpec g;
        g.n_positions = n_positions;
        g.n_col = static_cast<int>(std::floor(std::sqrt(static_cast<double>(n_positions))));
        g.n_row = n_positions / g.n_col;
        return g;
    }

    int usable_positions() const { return n_col * n_row; }
};

// Disjoint id ranges inside the one shared transformer vocabulary.
struct VocabularyMap {
    int codebook_size = 0; // image tokens occupy [0, codebook_size)
    int n_categories = 0;
    int n_grid = 0;        // usable position tokens

    int image_offset() const { return 0; }
    int category_offset() const { return codebook_size; }
    int position_offset() const { return codebook_size + n_categories; }
    int null_token() const { return codebook_size + n_categories + n_grid; }
    int vocab_size() const { return codebook_size + n_categories + n_grid + 1; }

    bool is_image(int token) const { return token >= 0 && token < codebook_size; }
    bool is_category(int token) const {
        return token >= category_offset() && token < position_offset();
    }
    bool is_position(int token) const {
        return token >= position_offset() && token < null_token();
    }

    static VocabularyMap make(int codebook_size, int n_categories, const GridSpec& grid) {
        VocabularyMap v;
        v.codebook_size = codebook_size;
        v.n_categories = n_categories;
        v.n_grid = grid.usable_positions();
        return v;
    }
};

struct Viewport {
    float x0 = 0.0f, y0 = 0.0f;
    float x1 = 1.0f, y1 = 1.0f;

    static Viewport full() { return {}; }
};

// Fixed-length conditioning: n_max (category, tl, br) triples padded with
// null tokens, optionally followed by two viewport position tokens.
struct ConditioningSequence {
    std::vector<int> tokens;
    int n_max = 0;
    bool has_viewport = false;

    int length() const { return static_cast<int>(tokens.size()); }
    std::span<const int> layout_tokens() const {
        return std::span<const int>(tokens.data(), static_cast<size_t>(3 * n_max));
    }
};

// Raw grid index in [0, n_col*n_row), before the vocabulary offset.
int encode_position(float x, float y, const GridSpec& grid);
std::pair<float, float> decode_position(int p, const GridSpec& grid);

ConditioningSequence tokenize_layout(std::span<const LayoutObject> objects, int n_max,
                                     const GridSpec& grid, const VocabularyMap& vocab);

std::vector<LayoutObject> detokenize_layout(std::span<const int> layout_tokens,
                                            const GridSpec& grid, const VocabularyMap& vocab);

std::pair<int, int> viewport_tokens(const Viewport& viewport, const GridSpec& grid,
                                    const VocabularyMap& vocab);

// tokenize_layout plus the optional viewport suffix.
ConditioningSequence build_conditioning(std::span<const LayoutObject> objects, int n_max,
                                        const GridSpec& grid, const VocabularyMap& vocab,
                                        const std::optional<Viewport>& viewport);

} // namespace scenegen::layout
