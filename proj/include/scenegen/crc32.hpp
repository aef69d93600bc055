#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace scenegen {

namespace detail {
inline std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> table{};
    for (uint32_t n = 0; n < 256; ++n) {
        uint32_t c = n;
        for (int k = 0; k < 8; ++k) {
            c = (c & 1) ? 0xedb88320u ^ (c >> 1) : (c >> 1);
        }
        table[n] = c;
    }
    return table;
}
} // namespace detail

inline uint32_t crc32(const void* data, size_t length, uint32_t crc = 0) {
    static const std::array<uint32_t, 256> table = detail::make_crc_table();
    const auto* bytes = static_cast<const uint8_t*>(data);
    uint32_t c = crc ^ 0xffffffffu;
    for (size_t i = 0; i < length; ++i) {
        c = table[(c ^ bytes[i]) & 0xffu] ^ (c >> 8);
    }
    return c ^ 0xffffffffu;
}

} // namespace scenegen
