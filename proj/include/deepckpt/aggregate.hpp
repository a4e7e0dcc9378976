#pragma once

#include <atomic>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "deepckpt/crc32c.hpp"
#include "deepckpt/errors.hpp"

namespace deepckpt {

// Aggregation container: N ranks write their local byte streams into one
// shared block-aligned file.
//
// On-disk layout (little-endian, fixed field order):
//   [0..4)    magic "AGG1"
//   [4..6)    version u16 (= 1)
//   [6..8)    flags u16
//   [8..12)   n_ranks u32
//   [12..16)  block_align u32 (power of two >= 512)
//   [16..24)  table_offset u64 (block_align-aligned)
//   [24..28)  header crc32c over bytes [0..24) plus the chunk table
//   table at table_offset: n_ranks entries of 32 bytes each
//     rank u32, reserved u32 (zero), offset u64, length u64, crc32c u32, pad u32 (zero)
//   chunk data regions, each block_align-aligned and disjoint per rank.

constexpr uint32_t kContainerVersion = 1;
constexpr uint32_t kHeaderBytes = 28;
constexpr uint32_t kChunkEntryBytes = 32;
constexpr uint32_t kDefaultBlockAlign = 4096;
inline const char kContainerMagic[4] = {'A', 'G', 'G', '1'};

struct ContainerHeader {
    uint16_t version = kContainerVersion;
    uint16_t flags = 0;
    uint32_t n_ranks = 0;
    uint32_t block_align = kDefaultBlockAlign;
    uint64_t table_offset = 0;
};

struct ChunkEntry {
    uint32_t rank = 0;
    uint32_t reserved = 0;
    uint64_t offset = 0;
    uint64_t length = 0;
    uint32_t crc32c = 0;
    uint32_t pad = 0;
};

namespace detail {

inline void put_u16(uint8_t* p, uint16_t v) {
    p[0] = uint8_t(v);
    p[1] = uint8_t(v >> 8);
}
inline void put_u32(uint8_t* p, uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = uint8_t(v >> (8 * i));
}
inline void put_u64(uint8_t* p, uint64_t v) {
    for (int i = 0; i < 8; ++i) p[i] = uint8_t(v >> (8 * i));
}
inline uint16_t get_u16(const uint8_t* p) { return uint16_t(p[0]) | uint16_t(p[1]) << 8; }
inline uint32_t get_u32(const uint8_t* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(p[i]) << (8 * i);
    return v;
}
inline uint64_t get_u64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p[i]) << (8 * i);
    return v;
}

inline bool is_pow2(uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

inline uint64_t align_up(uint64_t v, uint64_t a) { return (v + a - 1) / a * a; }

inline void encode_entry(uint8_t* p, const ChunkEntry& e) {
    put_u32(p + 0, e.rank);
    put_u32(p + 4, e.reserved);
    put_u64(p + 8, e.offset);
    put_u64(p + 16, e.length);
    put_u32(p + 24, e.crc32c);
    put_u32(p + 28, e.pad);
}

inline ChunkEntry decode_entry(const uint8_t* p) {
    ChunkEntry e;
    e.rank = get_u32(p + 0);
    e.reserved = get_u32(p + 4);
    e.offset = get_u64(p + 8);
    e.length = get_u64(p + 16);
    e.crc32c = get_u32(p + 24);
    e.pad = get_u32(p + 28);
    return e;
}

}  // namespace detail

// File size of a container holding the given per-rank reservations.
inline uint64_t container_total_size(std::span<const uint64_t> sizes,
                                     uint32_t block_align = kDefaultBlockAlign) {
    uint64_t total = block_align;  // header block
    total += detail::align_up(uint64_t(kChunkEntryBytes) * sizes.size(), block_align);
    for (uint64_t s : sizes) total += detail::align_up(s, block_align);
    return total;
}

// WriterSet over a preallocated buffer. Chunk reservations are fixed at
// creation; ranks write at most once, into disjoint aligned regions, so
// writers for distinct ranks may run fully in parallel.
class ContainerWriter {
public:
    ContainerWriter(uint32_t n_ranks, std::span<const uint64_t> sizes,
                    uint32_t block_align = kDefaultBlockAlign) {
        if (n_ranks == 0) throw EmptyInput("container needs at least one rank");
        if (sizes.size() != n_ranks)
            throw IoError("expected " + std::to_string(n_ranks) + " sizes, got " +
                          std::to_string(sizes.size()));
        if (!detail::is_pow2(block_align) || block_align < 512)
            throw AlignError("block_align must be a power of two >= 512, got " +
                             std::to_string(block_align));
        header_.n_ranks = n_ranks;
        header_.block_align = block_align;
        header_.table_offset = block_align;

        uint64_t data_off = header_.table_offset +
                            detail::align_up(uint64_t(kChunkEntryBytes) * n_ranks, block_align);
        entries_.resize(n_ranks);
        reserved_.assign(sizes.begin(), sizes.end());
        for (uint32_t r = 0; r < n_ranks; ++r) {
            entries_[r].rank = r;
            entries_[r].offset = data_off;
            data_off += detail::align_up(sizes[r], block_align);
        }
        buffer_.assign(data_off, 0);
        written_ = std::make_unique<std::atomic<bool>[]>(n_ranks);
        for (uint32_t r = 0; r < n_ranks; ++r) written_[r].store(false);
        encode_header_and_table();
    }

    uint32_t n_ranks() const { return header_.n_ranks; }
    uint64_t total_size() const { return buffer_.size(); }
    uint64_t reserved(uint32_t rank) const { return reserved_.at(rank); }
    uint64_t chunk_offset(uint32_t rank) const { return entries_.at(rank).offset; }

    // Thread-safe for distinct ranks: each write touches only the rank's data
    // region and its own 32-byte table slot.
    ChunkEntry write_chunk(uint32_t rank, std::span<const uint8_t> data) {
        if (rank >= header_.n_ranks) throw UnknownRank(std::to_string(rank));
        if (data.size() > reserved_[rank])
            throw OverflowError("rank " + std::to_string(rank) + ": " +
                                std::to_string(data.size()) + " bytes exceeds reservation of " +
                                std::to_string(reserved_[rank]));
        if (written_[rank].exchange(true))
            throw DoubleWrite("rank " + std::to_string(rank) + " already written");
        if (finished_) throw IoError("writer already finished");

        ChunkEntry& e = entries_[rank];
        if (!data.empty())
            std::memcpy(buffer_.data() + e.offset, data.data(), data.size());
        e.length = data.size();
        e.crc32c = crc32c(data);
        detail::encode_entry(buffer_.data() + header_.table_offset +
                                 uint64_t(kChunkEntryBytes) * rank,
                             e);
        return e;
    }

    // Finalizes the header checksum. No writes are allowed afterwards.
    const std::vector<uint8_t>& finish() {
        if (!finished_) {
            finished_ = true;
            seal_header_crc();
        }
        return buffer_;
    }

    std::vector<uint8_t> take() {
        finish();
        return std::move(buffer_);
    }

    void save(const std::string& path) {
        finish();
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot create " + path);
        f.write(reinterpret_cast<const char*>(buffer_.data()),
                static_cast<std::streamsize>(buffer_.size()));
        if (!f) throw IoError("short write to " + path);
    }

private:
    void encode_header_and_table() {
        uint8_t* p = buffer_.data();
        std::memcpy(p, kContainerMagic, 4);
        detail::put_u16(p + 4, header_.version);
        detail::put_u16(p + 6, header_.flags);
        detail::put_u32(p + 8, header_.n_ranks);
        detail::put_u32(p + 12, header_.block_align);
        detail::put_u64(p + 16, header_.table_offset);
        for (uint32_t r = 0; r < header_.n_ranks; ++r)
            detail::encode_entry(p + header_.table_offset + uint64_t(kChunkEntryBytes) * r,
                                 entries_[r]);
    }

    void seal_header_crc() {
        uint32_t crc = crc32c_update(0, buffer_.data(), 24);
        crc = crc32c_update(crc, buffer_.data() + header_.table_offset,
                            uint64_t(kChunkEntryBytes) * header_.n_ranks);
        detail::put_u32(buffer_.data() + 24, crc);
    }

    ContainerHeader header_;
    std::vector<ChunkEntry> entries_;
    std::vector<uint64_t> reserved_;
    std::vector<uint8_t> buffer_;
    std::unique_ptr<std::atomic<bool>[]> written_;
    bool finished_ = false;
};

inline ContainerWriter create_container(uint32_t n_ranks, std::span<const uint64_t> sizes,
                                        uint32_t block_align = kDefaultBlockAlign) {
    return ContainerWriter(n_ranks, sizes, block_align);
}

enum class ChunkState { VALID, CORRUPT };

struct ChunkReport {
    ChunkEntry entry;
    ChunkState state = ChunkState::VALID;
};

struct ContainerReport {
    uint32_t n_ranks = 0;
    uint64_t total_bytes = 0;  // sum of stored chunk lengths
    uint64_t file_size = 0;
    std::vector<ChunkReport> chunks;

    bool all_valid() const {
        for (const auto& c : chunks)
            if (c.state != ChunkState::VALID) return false;
        return true;
    }
};

// Read-only view over container bytes. Opening validates the header and the
// header+table checksum; per-chunk payload checksums are verified on access.
class ContainerReader {
public:
    static ContainerReader from_bytes(std::vector<uint8_t> bytes) {
        return ContainerReader(std::move(bytes));
    }

    static ContainerReader open(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open " + path);
        std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
        return ContainerReader(std::move(bytes));
    }

    const ContainerHeader& header() const { return header_; }
    const std::vector<ChunkEntry>& entries() const { return entries_; }

    bool chunk_intact(uint32_t rank) const {
        const ChunkEntry& e = entries_.at(rank);
        if (e.offset > bytes_.size() || e.length > bytes_.size() - e.offset) return false;
        return crc32c(bytes_.data() + e.offset, e.length) == e.crc32c;
    }

    std::vector<uint8_t> read_chunk(uint32_t rank) const {
        if (rank >= header_.n_ranks) throw UnknownRank(std::to_string(rank));
        const ChunkEntry& e = entries_[rank];
        if (e.offset > bytes_.size() || e.length > bytes_.size() - e.offset)
            throw CorruptChunk(rank, e.offset, "chunk extends past end of file");
        std::vector<uint8_t> out(bytes_.begin() + e.offset, bytes_.begin() + e.offset + e.length);
        if (crc32c(out) != e.crc32c)
            throw CorruptChunk(rank, e.offset, "payload checksum mismatch");
        return out;
    }

    ContainerReport inspect() const {
        ContainerReport rep;
        rep.n_ranks = header_.n_ranks;
        rep.file_size = bytes_.size();
        for (uint32_t r = 0; r < header_.n_ranks; ++r) {
            ChunkReport c;
            c.entry = entries_[r];
            c.state = chunk_intact(r) ? ChunkState::VALID : ChunkState::CORRUPT;
            rep.total_bytes += entries_[r].length;
            rep.chunks.push_back(c);
        }
        return rep;
    }

private:
    explicit ContainerReader(std::vector<uint8_t> bytes) : bytes_(std::move(bytes)) {
        if (bytes_.size() < kHeaderBytes) throw NotAContainer("file shorter than header");
        const uint8_t* p = bytes_.data();
        if (std::memcmp(p, kContainerMagic, 4) != 0) throw NotAContainer("bad magic");
        header_.version = detail::get_u16(p + 4);
        header_.flags = detail::get_u16(p + 6);
        header_.n_ranks = detail::get_u32(p + 8);
        header_.block_align = detail::get_u32(p + 12);
        header_.table_offset = detail::get_u64(p + 16);
        uint32_t stored_crc = detail::get_u32(p + 24);

        if (header_.version != kContainerVersion)
            throw NotAContainer("unsupported version " + std::to_string(header_.version));
        if (!detail::is_pow2(header_.block_align) || header_.block_align < 512)
            throw NotAContainer("invalid block alignment");
        if (header_.table_offset % header_.block_align != 0)
            throw NotAContainer("misaligned chunk table");
        if (header_.n_ranks == 0) throw NotAContainer("container has no ranks");
        uint64_t table_bytes = uint64_t(kChunkEntryBytes) * header_.n_ranks;
        if (header_.table_offset > bytes_.size() ||
            table_bytes > bytes_.size() - header_.table_offset)
            throw NotAContainer("chunk table extends past end of file");

        uint32_t crc = crc32c_update(0, p, 24);
        crc = crc32c_update(crc, p + header_.table_offset, table_bytes);
        if (crc != stored_crc) throw NotAContainer("header checksum mismatch");

        for (uint32_t r = 0; r < header_.n_ranks; ++r) {
            ChunkEntry e =
                detail::decode_entry(p + header_.table_offset + uint64_t(kChunkEntryBytes) * r);
            if (e.rank != r) throw NotAContainer("chunk table out of order");
            if (e.offset % header_.block_align != 0)
                throw NotAContainer("misaligned chunk offset");
            entries_.push_back(e);
        }
    }

    std::vector<uint8_t> bytes_;
    ContainerHeader header_;
    std::vector<ChunkEntry> entries_;
};

inline std::vector<uint8_t> read_chunk(const std::string& path, uint32_t rank) {
    return ContainerReader::open(path).read_chunk(rank);
}

inline ContainerReport inspect(const std::string& path) {
    return ContainerReader::open(path).inspect();
}

}  // namespace deepckpt
