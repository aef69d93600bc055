#include "scenegen/image.hpp"

#include "scenegen/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "scenegen/crc32.hpp"

namespace scenegen::data {

namespace {

uint8_t float_to_byte(float v) {
    const float u = (std::clamp(v, -1.0f, 1.0f) + 1.0f) * 0.5f * 255.0f;
    return static_cast<uint8_t>(std::lround(u));
}

float byte_to_float(uint8_t b) {
    return static_cast<float>(b) / 255.0f * 2.0f - 1.0f;
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw std::runtime_error("short read on " + path);
    return bytes;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write on " + path);
}

} // namespace

Image resize_bilinear(const Image& src, int out_w, int out_h) {
    if (src.empty() || out_w <= 0 || out_h <= 0) {
        throw std::invalid_argument("resize_bilinear: empty input or output");
    }
    Image dst(out_w, out_h);
    const float sx = static_cast<float>(src.width) / out_w;
    const float sy = static_cast<float>(src.height) / out_h;
    for (int y = 0; y < out_h; ++y) {
        const float fy = (y + 0.5f) * sy - 0.5f;
        const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, src.height - 1);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const float wy = std::clamp(fy - y0, 0.0f, 1.0f);
        for (int x = 0; x < out_w; ++x) {
            const float fx = (x + 0.5f) * sx - 0.5f;
            const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, src.width - 1);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const float wx = std::clamp(fx - x0, 0.0f, 1.0f);
            for (int c = 0; c < 3; ++c) {
                const float top = src.at(c, y0, x0) * (1 - wx) + src.at(c, y0, x1) * wx;
                const float bottom = src.at(c, y1, x0) * (1 - wx) + src.at(c, y1, x1) * wx;
                dst.at(c, y, x) = top * (1 - wy) + bottom * wy;
            }
        }
    }
    return dst;
}

Image crop(const Image& src, int x0, int y0, int w, int h) {
    if (w <= 0 || h <= 0) throw std::invalid_argument("crop: empty window");
    Image dst(w, h);
    for (int y = 0; y < h; ++y) {
        const int sy = std::clamp(y0 + y, 0, src.height - 1);
        for (int x = 0; x < w; ++x) {
            const int sx = std::clamp(x0 + x, 0, src.width - 1);
            for (int c = 0; c < 3; ++c) dst.at(c, y, x) = src.at(c, sy, sx);
        }
    }
    return dst;
}

Image center_crop_square(const Image& src) {
    const int side = std::min(src.width, src.height);
    return crop(src, (src.width - side) / 2, (src.height - side) / 2, side, side);
}

num::Tensor images_to_tensor(const std::vector<Image>& images) {
    if (images.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
    const int w = images[0].width, h = images[0].height;
    num::Tensor out = num::Tensor::zeros({static_cast<int>(images.size()), 3, h, w});
    float* dst = out.data();
    for (const Image& img : images) {
        if (img.width != w || img.height != h) {
            throw std::invalid_argument("images_to_tensor: mixed sizes in batch");
        }
        std::memcpy(dst, img.rgb.data(), img.rgb.size() * sizeof(float));
        dst += img.rgb.size();
    }
    return out;
}

Image tensor_to_image(const num::Tensor& batch, int index) {
    num::require_no_grad("tensor_to_image", batch);
    if (batch.ndim() != 4 || batch.dim(1) != 3) {
        throw std::invalid_argument("tensor_to_image: expects [B, 3, H, W]");
    }
    const int h = batch.dim(2), w = batch.dim(3);
    Image img(w, h);
    const float* src = batch.data() + static_cast<int64_t>(index) * 3 * h * w;
    std::copy(src, src + static_cast<int64_t>(3) * h * w, img.rgb.begin());
    return img;
}

// ---------------------------------------------------------------- PNG write

namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
    put_u32_be(out, static_cast<uint32_t>(data.size()));
    std::vector<uint8_t> body(type, type + 4);
    body.insert(body.end(), data.begin(), data.end());
    out.insert(out.end(), body.begin(), body.end());
    put_u32_be(out, crc32(body.data(), body.size()));
}

uint32_t adler32(const uint8_t* data, size_t length) {
    uint32_t a = 1, b = 0;
    for (size_t i = 0; i < length; ++i) {
        a = (a + data[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

// zlib stream of stored (uncompressed) deflate blocks
std::vector<uint8_t> zlib_stored(const std::vector<uint8_t>& raw) {
    std::vector<uint8_t> out;
    out.push_back(0x78);
    out.push_back(0x01);
    size_t offset = 0;
    do {
        const size_t block = std::min<size_t>(65535, raw.size() - offset);
        const bool final = offset + block == raw.size();
        out.push_back(final ? 1 : 0);
        out.push_back(static_cast<uint8_t>(block & 0xff));
        out.push_back(static_cast<uint8_t>(block >> 8));
        out.push_back(static_cast<uint8_t>(~block & 0xff));
        out.push_back(static_cast<uint8_t>((~block >> 8) & 0xff));
        out.insert(out.end(), raw.begin() + offset, raw.begin() + offset + block);
        offset += block;
    } while (offset < raw.size());
    put_u32_be(out, adler32(raw.data(), raw.size()));
    return out;
}

} // namespace

void write_png(const std::string& path, const Image& image) {
    if (image.empty()) throw std::invalid_argument("write_png: empty image");
    std::vector<uint8_t> file = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

    std::vector<uint8_t> ihdr;
    put_u32_be(ihdr, static_cast<uint32_t>(image.width));
    put_u32_be(ihdr, static_cast<uint32_t>(image.height));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter method
    ihdr.push_back(0);  // no interlace
    put_chunk(file, "IHDR", ihdr);

    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(image.height) * (1 + 3 * image.width));
    for (int y = 0; y < image.height; ++y) {
        raw.push_back(0); // filter: none
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < 3; ++c) raw.push_back(float_to_byte(image.at(c, y, x)));
        }
    }
    put_chunk(file, "IDAT", zlib_stored(raw));
    put_chunk(file, "IEND", {});
    write_file(path, file);
}

// ----------------------------------------------------------------- PNG read

namespace {

class BitReader {
public:
    BitReader(const uint8_t* data, size_t size) : data_(data), size_(size) {}

    uint32_t bits(int count) {
        uint32_t value = 0;
        for (int i = 0; i < count; ++i) value |= bit() << i;
        return value;
    }

    uint32_t bit() {
        if (pos_ >= size_) throw std::runtime_error("png: deflate stream truncated");
        const uint32_t b = (data_[pos_] >> nbit_) & 1u;
        if (++nbit_ == 8) {
            nbit_ = 0;
            ++pos_;
        }
        return b;
    }

    void align_byte() {
        if (nbit_ != 0) {
            nbit_ = 0;
            ++pos_;
        }
    }

    const uint8_t* raw(size_t count) {
        if (pos_ + count > size_) throw std::runtime_error("png: stored block truncated");
        const uint8_t* p = data_ + pos_;
        pos_ += count;
        return p;
    }

private:
    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
    int nbit_ = 0;
};

// Canonical Huffman decoder per RFC 1951 (code walk, MSB-first codes).
struct Huffman {
    std::array<uint16_t, 16> count{};     // codes per length
    std::array<uint16_t, 16> first_code{};
    std::array<uint16_t, 16> sym_base{};
    std::vector<uint16_t> symbols;        // length-major, then symbol order

    explicit Huffman(const std::vector<uint8_t>& lengths) {
        for (uint8_t l : lengths) {
            if (l > 15) throw std::runtime_error("png: invalid code length");
            if (l > 0) count[l]++;
        }
        uint32_t code = 0;
        uint16_t base = 0;
        for (int l = 1; l <= 15; ++l) {
            code = (code + count[l - 1]) << 1;
            first_code[l] = static_cast<uint16_t>(code);
            sym_base[l] = base;
            base = static_cast<uint16_t>(base + count[l]);
        }
        symbols.resize(base);
        std::array<uint16_t, 16> next{};
        for (size_t s = 0; s < lengths.size(); ++s) {
            const uint8_t l = lengths[s];
            if (l > 0) symbols[sym_base[l] + next[l]++] = static_cast<uint16_t>(s);
        }
    }

    uint16_t decode(BitReader& br) const {
        uint32_t code = 0;
        for (int l = 1; l <= 15; ++l) {
            code = (code << 1) | br.bit();
            if (count[l] != 0 && code < static_cast<uint32_t>(first_code[l]) + count[l]) {
                return symbols[sym_base[l] + (code - first_code[l])];
            }
        }
        throw std::runtime_error("png: bad huffman code");
    }
};

std::vector<uint8_t> inflate(const std::vector<uint8_t>& zstream) {
    if (zstream.size() < 6) throw std::runtime_error("png: zlib stream too short");
    if ((zstream[0] & 0x0f) != 8) throw std::runtime_error("png: unsupported zlib method");
    BitReader br(zstream.data() + 2, zstream.size() - 6); // skip header, leave adler

    static const uint16_t len_base[] = {3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 15, 17, 19, 23, 27,
                                        31, 35, 43, 51, 59, 67, 83, 99, 115, 131, 163, 195,
                                        227, 258};
    static const uint8_t len_extra[] = {0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2,
                                        2, 3, 3, 3, 3, 4, 4, 4, 4, 5, 5, 5, 5, 0};
    static const uint16_t dist_base[] = {1, 2, 3, 4, 5, 7, 9, 13, 17, 25, 33, 49, 65, 97,
                                         129, 193, 257, 385, 513, 769, 1025, 1537, 2049,
                                         3073, 4097, 6145, 8193, 12289, 16385, 24577};
    static const uint8_t dist_extra[] = {0, 0, 0, 0, 1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6,
                                         6, 7, 7, 8, 8, 9, 9, 10, 10, 11, 11, 12, 12, 13, 13};

    std::vector<uint8_t> out;
    bool final_block = false;
    while (!final_block) {
        final_block = br.bit() != 0;
        const uint32_t type = br.bits(2);
        if (type == 0) {
            br.align_byte();
            const uint8_t* hdr = br.raw(4);
            const uint32_t len = hdr[0] | (hdr[1] << 8);
            const uint32_t nlen = hdr[2] | (hdr[3] << 8);
            if ((len ^ 0xffffu) != nlen) throw std::runtime_error("png: stored length mismatch");
            const uint8_t* data = br.raw(len);
            out.insert(out.end(), data, data + len);
            continue;
        }
        if (type == 3) throw std::runtime_error("png: invalid block type");

        std::vector<uint8_t> lit_lengths, dist_lengths;
        if (type == 1) {
            lit_lengths.resize(288);
            for (int i = 0; i < 144; ++i) lit_lengths[i] = 8;
            for (int i = 144; i < 256; ++i) lit_lengths[i] = 9;
            for (int i = 256; i < 280; ++i) lit_lengths[i] = 7;
            for (int i = 280; i < 288; ++i) lit_lengths[i] = 8;
            dist_lengths.assign(30, 5);
        } else {
            const uint32_t hlit = br.bits(5) + 257;
            const uint32_t hdist = br.bits(5) + 1;
            const uint32_t hclen = br.bits(4) + 4;
            static const int order[19] = {16, 17, 18, 0, 8, 7, 9, 6, 10, 5,
                                          11, 4, 12, 3, 13, 2, 14, 1, 15};
            std::vector<uint8_t> cl_lengths(19, 0);
            for (uint32_t i = 0; i < hclen; ++i) {
                cl_lengths[static_cast<size_t>(order[i])] = static_cast<uint8_t>(br.bits(3));
            }
            const Huffman cl_tree(cl_lengths);
            std::vector<uint8_t> all;
            all.reserve(hlit + hdist);
            while (all.size() < hlit + hdist) {
                const uint16_t sym = cl_tree.decode(br);
                if (sym < 16) {
                    all.push_back(static_cast<uint8_t>(sym));
                } else if (sym == 16) {
                    if (all.empty()) throw std::runtime_error("png: repeat with no prior length");
                    const uint32_t repeat = 3 + br.bits(2);
                    all.insert(all.end(), repeat, all.back());
                } else if (sym == 17) {
                    all.insert(all.end(), 3 + br.bits(3), 0);
                } else {
                    all.insert(all.end(), 11 + br.bits(7), 0);
                }
            }
            lit_lengths.assign(all.begin(), all.begin() + hlit);
            dist_lengths.assign(all.begin() + hlit, all.end());
        }

        const Huffman lit_tree(lit_lengths);
        const Huffman dist_tree(dist_lengths);
        while (true) {
            const uint16_t sym = lit_tree.decode(br);
            if (sym < 256) {
                out.push_back(static_cast<uint8_t>(sym));
            } else if (sym == 256) {
                break;
            } else {
                if (sym > 285) throw std::runtime_error("png: bad length symbol");
                const uint32_t length = len_base[sym - 257] + br.bits(len_extra[sym - 257]);
                const uint16_t dsym = dist_tree.decode(br);
                if (dsym > 29) throw std::runtime_error("png: bad distance symbol");
                const uint32_t dist = dist_base[dsym] + br.bits(dist_extra[dsym]);
                if (dist > out.size()) throw std::runtime_error("png: distance past start");
                for (uint32_t i = 0; i < length; ++i) {
                    out.push_back(out[out.size() - dist]);
                }
            }
        }
    }
    return out;
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

} // namespace

Image read_png(const std::string& path) {
    const std::vector<uint8_t> file = read_file(path);
    static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (file.size() < 8 || std::memcmp(file.data(), sig, 8) != 0) {
        throw std::runtime_error("png: bad signature in " + path);
    }

    int width = 0, height = 0, bit_depth = 0, color_type = 0;
    std::vector<uint8_t> idat;
    size_t pos = 8;
    while (pos + 8 <= file.size()) {
        const uint32_t length = (file[pos] << 24) | (file[pos + 1] << 16) |
                                (file[pos + 2] << 8) | file[pos + 3];
        if (pos + 12 + length > file.size()) throw std::runtime_error("png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(file.data() + pos + 4);
        const uint8_t* data = file.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            width = (data[0] << 24) | (data[1] << 16) | (data[2] << 8) | data[3];
            height = (data[4] << 24) | (data[5] << 16) | (data[6] << 8) | data[7];
            bit_depth = data[8];
            color_type = data[9];
            if (bit_depth != 8) throw std::runtime_error("png: only 8-bit supported");
            if (color_type != 0 && color_type != 2 && color_type != 6) {
                throw std::runtime_error("png: unsupported color type");
            }
            if (data[12] != 0) throw std::runtime_error("png: interlacing unsupported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + length);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + length;
    }
    if (width <= 0 || height <= 0 || idat.empty()) {
        throw std::runtime_error("png: missing image data in " + path);
    }

    const int channels = color_type == 0 ? 1 : (color_type == 2 ? 3 : 4);
    const std::vector<uint8_t> raw = inflate(idat);
    const size_t stride = static_cast<size_t>(width) * channels;
    if (raw.size() < (stride + 1) * height) throw std::runtime_error("png: pixel data short");

    std::vector<uint8_t> pixels(stride * height);
    for (int y = 0; y < height; ++y) {
        const uint8_t filter = raw[(stride + 1) * y];
        const uint8_t* src = raw.data() + (stride + 1) * y + 1;
        uint8_t* dst = pixels.data() + stride * y;
        const uint8_t* prev = y > 0 ? pixels.data() + stride * (y - 1) : nullptr;
        for (size_t i = 0; i < stride; ++i) {
            const int left = i >= static_cast<size_t>(channels) ? dst[i - channels] : 0;
            const int up = prev ? prev[i] : 0;
            const int ul = (prev && i >= static_cast<size_t>(channels)) ? prev[i - channels] : 0;
            int value = src[i];
            switch (filter) {
                case 0: break;
                case 1: value += left; break;
                case 2: value += up; break;
                case 3: value += (left + up) / 2; break;
                case 4: value += paeth(left, up, ul); break;
                default: throw std::runtime_error("png: unknown filter type");
            }
            dst[i] = static_cast<uint8_t>(value & 0xff);
        }
    }

    Image img(width, height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const uint8_t* px = pixels.data() + stride * y + static_cast<size_t>(x) * channels;
            for (int c = 0; c < 3; ++c) {
                img.at(c, y, x) = byte_to_float(channels == 1 ? px[0] : px[c]);
            }
        }
    }
    return img;
}

// ----------------------------------------------------------------------- PPM

void write_ppm(const std::string& path, const Image& image) {
    if (image.empty()) throw std::invalid_argument("write_ppm: empty image");
    std::vector<uint8_t> out;
    const std::string header =
        "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    out.insert(out.end(), header.begin(), header.end());
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < 3; ++c) out.push_back(float_to_byte(image.at(c, y, x)));
        }
    }
    write_file(path, out);
}

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string magic;
    int width = 0, height = 0, maxval = 0;
    in >> magic >> width >> height >> maxval;
    if (magic != "P6" || width <= 0 || height <= 0 || maxval != 255) {
        throw std::runtime_error("ppm: unsupported header in " + path);
    }
    in.get(); // single whitespace after header
    std::vector<uint8_t> bytes(static_cast<size_t>(3) * width * height);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!in) throw std::runtime_error("ppm: pixel data short in " + path);
    Image img(width, height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int c = 0; c < 3; ++c) {
                img.at(c, y, x) = byte_to_float(bytes[(static_cast<size_t>(y) * width + x) * 3 + c]);
            }
        }
    }
    return img;
}

Image read_image(const std::string& path) {
    const std::vector<uint8_t> head = [&] {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open " + path);
        std::vector<uint8_t> h(2, 0);
        in.read(reinterpret_cast<char*>(h.data()), 2);
        return h;
    }();
    if (head[0] == 'P' && head[1] == '6') return read_ppm(path);
    return read_png(path);
}

} // namespace scenegen::data
