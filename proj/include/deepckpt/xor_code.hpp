#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deepckpt/errors.hpp"

namespace deepckpt {

// acc ^= src[offset .. offset+acc.size()), reading src as if zero-extended.
inline void xor_range_into(std::span<uint8_t> acc, std::span<const uint8_t> src,
                           uint64_t offset) {
    if (offset >= src.size()) return;
    uint64_t n = std::min<uint64_t>(acc.size(), src.size() - offset);
    const uint8_t* s = src.data() + offset;
    uint8_t* a = acc.data();
    uint64_t i = 0;
    for (; i + 8 <= n; i += 8) {
        uint64_t av, sv;
        __builtin_memcpy(&av, a + i, 8);
        __builtin_memcpy(&sv, s + i, 8);
        av ^= sv;
        __builtin_memcpy(a + i, &av, 8);
    }
    for (; i < n; ++i) a[i] ^= s[i];
}

// Byte-wise XOR fold of the given blocks, zero-padded to the longest one.
inline std::vector<uint8_t> xor_encode(std::span<const std::span<const uint8_t>> blocks) {
    if (blocks.empty()) throw EmptyInput("xor_encode needs at least one block");
    uint64_t max_len = 0;
    for (const auto& b : blocks) max_len = std::max<uint64_t>(max_len, b.size());
    std::vector<uint8_t> parity(max_len, 0);
    for (const auto& b : blocks) xor_range_into(parity, b, 0);
    return parity;
}

inline std::vector<uint8_t> xor_encode(const std::vector<std::vector<uint8_t>>& blocks) {
    std::vector<std::span<const uint8_t>> views(blocks.begin(), blocks.end());
    return xor_encode(std::span<const std::span<const uint8_t>>(views));
}

// ---------------------------------------------------------------------------
// Striped single-parity group code
// ---------------------------------------------------------------------------
//
// A group of k >= 2 members, each holding a payload zero-padded to
// block_len = max payload size. Every padded block is divided into k-1
// chunks of chunk_len = ceil(block_len / (k-1)). Parity is organized in k
// stripes; stripe s is held by member s and covers one chunk of every other
// member:
//
//   parity[s] = XOR over j != s of chunk(j, chunk_index(s, j))
//   chunk_index(s, j) = s < j ? s : s - 1   (bijective over the stripes s != j)
//
// Losing a single member loses its k-1 data chunks and the one parity stripe
// it held; every lost data chunk is covered by a stripe held on a survivor,
// and the lost stripe can be recomputed from survivor chunks. Two losses in
// one group are not recoverable.
struct StripedGroupLayout {
    uint32_t k = 0;
    uint64_t block_len = 0;
    uint64_t chunk_len = 0;

    static StripedGroupLayout plan(uint32_t k, std::span<const uint64_t> payload_sizes) {
        if (k < 2) throw GroupError("striped parity needs a group of at least 2");
        if (payload_sizes.size() != k) throw GroupError("payload size count != group size");
        StripedGroupLayout l;
        l.k = k;
        for (uint64_t s : payload_sizes) l.block_len = std::max(l.block_len, s);
        l.chunk_len = (l.block_len + (k - 1) - 1) / (k - 1);
        return l;
    }

    static uint32_t chunk_index(uint32_t stripe, uint32_t member) {
        return stripe < member ? stripe : stripe - 1;
    }

    uint64_t chunk_offset(uint32_t stripe, uint32_t member) const {
        return uint64_t(chunk_index(stripe, member)) * chunk_len;
    }
};

// Parity stripes for a group; blocks are the members' payloads (unpadded,
// treated as zero-extended). Returns k chunks of chunk_len bytes; entry s is
// what member s stores.
inline std::vector<std::vector<uint8_t>> build_stripe_parity(
    const StripedGroupLayout& l, std::span<const std::span<const uint8_t>> blocks) {
    if (blocks.size() != l.k) throw GroupError("block count != group size");
    std::vector<std::vector<uint8_t>> parity(l.k);
    for (uint32_t s = 0; s < l.k; ++s) {
        parity[s].assign(l.chunk_len, 0);
        for (uint32_t j = 0; j < l.k; ++j) {
            if (j == s) continue;
            xor_range_into(parity[s], blocks[j], l.chunk_offset(s, j));
        }
    }
    return parity;
}

// Rebuilds the victim's padded block from the k-1 surviving payloads and the
// k-1 parity stripes they hold. `blocks[victim]` is ignored; `parity[victim]`
// is ignored (it was lost with the victim).
inline std::vector<uint8_t> reconstruct_striped_member(
    const StripedGroupLayout& l, uint32_t victim,
    std::span<const std::span<const uint8_t>> blocks,
    std::span<const std::span<const uint8_t>> parity) {
    if (victim >= l.k) throw GroupError("victim index out of range");
    if (blocks.size() != l.k || parity.size() != l.k)
        throw GroupError("need k block and parity slots");
    std::vector<uint8_t> out(uint64_t(l.k - 1) * l.chunk_len, 0);
    for (uint32_t s = 0; s < l.k; ++s) {
        if (s == victim) continue;
        if (parity[s].size() != l.chunk_len)
            throw GroupError("stripe " + std::to_string(s) + " has wrong length");
        uint64_t dst_off = l.chunk_offset(s, victim);
        std::span<uint8_t> dst(out.data() + dst_off, l.chunk_len);
        xor_range_into(dst, parity[s], 0);
        for (uint32_t j = 0; j < l.k; ++j) {
            if (j == s || j == victim) continue;
            xor_range_into(dst, blocks[j], l.chunk_offset(s, j));
        }
    }
    out.resize(l.block_len);
    return out;
}

}  // namespace deepckpt
