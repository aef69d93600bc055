#pragma once

#include <string>
#include <vector>

#include "scenegen/tensor.hpp"

namespace scenegen::data {

// Planar RGB float image, values in [-1, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<float> rgb; // [3 * height * width], channel-major

    Image() = default;
    Image(int w, int h, float fill = -1.0f)
        : width(w), height(h), rgb(static_cast<size_t>(3) * w * h, fill) {}

    float& at(int c, int y, int x) {
        return rgb[(static_cast<size_t>(c) * height + y) * width + x];
    }
    float at(int c, int y, int x) const {
        return rgb[(static_cast<size_t>(c) * height + y) * width + x];
    }
    bool empty() const { return rgb.empty(); }
};

Image resize_bilinear(const Image& src, int out_w, int out_h);
Image crop(const Image& src, int x0, int y0, int w, int h); // clamped reads
Image center_crop_square(const Image& src);

// Batched conversion to/from the numerics layout [B, 3, H, W].
num::Tensor images_to_tensor(const std::vector<Image>& images);
Image tensor_to_image(const num::Tensor& batch, int index);

// 8-bit RGB PNG. The writer emits uncompressed deflate blocks so files are
// deterministic; the reader handles baseline gray/RGB/RGBA, stored and
// Huffman-coded streams. Failures throw std::runtime_error.
void write_png(const std::string& path, const Image& image);
Image read_png(const std::string& path);

// PPM (P6), kept as the dependency-free roundtrip format.
void write_ppm(const std::string& path, const Image& image);
Image read_ppm(const std::string& path);

Image read_image(const std::string& path); // dispatch on magic bytes

} // namespace scenegen::data
