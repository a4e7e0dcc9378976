#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>

namespace deepckpt {

// CRC-32C (Castagnoli, reflected polynomial 0x82F63B78), slice-by-8.
// crc32c of the empty sequence is 0.
namespace detail {

inline const std::array<std::array<uint32_t, 256>, 8>& crc32c_tables() {
    static const auto tables = [] {
        std::array<std::array<uint32_t, 256>, 8> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t crc = i;
            for (int j = 0; j < 8; ++j)
                crc = (crc >> 1) ^ ((crc & 1u) ? 0x82F63B78u : 0u);
            t[0][i] = crc;
        }
        for (uint32_t i = 0; i < 256; ++i)
            for (int k = 1; k < 8; ++k)
                t[k][i] = (t[k - 1][i] >> 8) ^ t[0][t[k - 1][i] & 0xFFu];
        return t;
    }();
    return tables;
}

}  // namespace detail

inline uint32_t crc32c_update(uint32_t crc, const void* data, size_t len) {
    const auto& t = detail::crc32c_tables();
    const auto* p = static_cast<const uint8_t*>(data);
    crc = ~crc;
    while (len >= 8) {
        uint32_t lo = crc ^ (uint32_t(p[0]) | uint32_t(p[1]) << 8 |
                             uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24);
        crc = t[7][lo & 0xFF] ^ t[6][(lo >> 8) & 0xFF] ^ t[5][(lo >> 16) & 0xFF] ^
              t[4][lo >> 24] ^ t[3][p[4]] ^ t[2][p[5]] ^ t[1][p[6]] ^ t[0][p[7]];
        p += 8;
        len -= 8;
    }
    while (len--)
        crc = (crc >> 8) ^ t[0][(crc ^ *p++) & 0xFF];
    return ~crc;
}

inline uint32_t crc32c(std::span<const uint8_t> data) {
    return crc32c_update(0, data.data(), data.size());
}

inline uint32_t crc32c(const void* data, size_t len) {
    return crc32c_update(0, data, len);
}

}  // namespace deepckpt
