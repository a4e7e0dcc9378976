#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <random>
#include <thread>

#include "deepckpt/aggregate.hpp"
#include "deepckpt/cluster.hpp"
#include "deepckpt/config.hpp"

using namespace deepckpt;

namespace {

std::vector<uint8_t> random_bytes(size_t n, uint64_t seed) {
    std::vector<uint8_t> out(n);
    std::mt19937_64 rng(seed);
    for (auto& b : out) b = static_cast<uint8_t>(rng());
    return out;
}

struct TempFile {
    std::string path;
    TempFile() {
        path = (std::filesystem::temp_directory_path() /
                ("agg_test_" + std::to_string(std::random_device{}()) + ".agg"))
                   .string();
    }
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("single-rank container places data on an aligned block") {
    uint64_t size = 100;
    ContainerWriter w(1, std::span<const uint64_t>(&size, 1), 4096);
    CHECK(w.chunk_offset(0) % 4096 == 0);
    CHECK(w.chunk_offset(0) == 8192);  // header block + table block
    CHECK(w.total_size() == 3 * 4096);

    auto payload = random_bytes(100, 1);
    ChunkEntry e = w.write_chunk(0, payload);
    CHECK(e.length == 100);
    CHECK(e.offset == 8192);

    auto reader = ContainerReader::from_bytes(w.take());
    CHECK(reader.read_chunk(0) == payload);
    CHECK(reader.inspect().all_valid());
}

TEST_CASE("48 ranks of 1 MiB land in one file with disjoint aligned ranges") {
    std::vector<uint64_t> sizes(48, 1 << 20);
    ContainerWriter w(48, sizes);
    for (uint32_t r = 0; r < 48; ++r) w.write_chunk(r, random_bytes(1 << 20, r));
    auto reader = ContainerReader::from_bytes(w.take());
    auto report = reader.inspect();
    CHECK(report.n_ranks == 48);
    CHECK(report.total_bytes == 48ull << 20);
    CHECK(report.all_valid());
    for (uint32_t r = 0; r < 48; ++r) {
        const ChunkEntry& e = report.chunks[r].entry;
        CHECK(e.offset % 4096 == 0);
        if (r > 0) {
            const ChunkEntry& prev = report.chunks[r - 1].entry;
            CHECK(prev.offset + prev.length <= e.offset);
        }
    }
}

TEST_CASE("zero ranks and bad alignment are rejected") {
    CHECK_THROWS_AS(ContainerWriter(0, {}), EmptyInput);
    uint64_t size = 10;
    CHECK_THROWS_AS(ContainerWriter(1, std::span<const uint64_t>(&size, 1), 1000), AlignError);
    CHECK_THROWS_AS(ContainerWriter(1, std::span<const uint64_t>(&size, 1), 256), AlignError);
}

TEST_CASE("short writes record actual length; overflow and double writes fail") {
    std::vector<uint64_t> sizes = {4096, 4096};
    ContainerWriter w(2, sizes);
    ChunkEntry e = w.write_chunk(0, random_bytes(10, 3));
    CHECK(e.length == 10);
    CHECK_THROWS_AS(w.write_chunk(1, random_bytes(5000, 4)), OverflowError);
    // an oversized attempt does not consume the rank's single write
    CHECK(w.write_chunk(1, random_bytes(4096, 4)).length == 4096);
    CHECK_THROWS_AS(w.write_chunk(0, random_bytes(1, 5)), DoubleWrite);
}

TEST_CASE("parallel writers produce a byte-identical file to sequential writers") {
    const uint32_t n = 8;
    std::vector<uint64_t> sizes;
    std::vector<std::vector<uint8_t>> payloads;
    for (uint32_t r = 0; r < n; ++r) {
        payloads.push_back(random_bytes(1000 + r * 333, 50 + r));
        sizes.push_back(payloads.back().size());
    }

    ContainerWriter seq(n, sizes);
    for (uint32_t r = 0; r < n; ++r) seq.write_chunk(r, payloads[r]);
    std::vector<uint8_t> sequential = seq.take();

    ContainerWriter par(n, sizes);
    std::vector<std::thread> threads;
    for (uint32_t r = 0; r < n; ++r)
        threads.emplace_back([&par, &payloads, r] { par.write_chunk(r, payloads[r]); });
    for (auto& t : threads) t.join();
    std::vector<uint8_t> parallel = par.take();

    CHECK(parallel == sequential);
    auto reader = ContainerReader::from_bytes(std::move(parallel));
    CHECK(reader.inspect().all_valid());
}

TEST_CASE("a flipped payload byte is reported as a corrupt chunk") {
    uint64_t size = 5000;
    ContainerWriter w(1, std::span<const uint64_t>(&size, 1));
    w.write_chunk(0, random_bytes(5000, 9));
    std::vector<uint8_t> bytes = w.take();
    bytes[8192 + 1234] ^= 0x01;

    auto reader = ContainerReader::from_bytes(std::move(bytes));
    try {
        reader.read_chunk(0);
        FAIL("expected CorruptChunk");
    } catch (const CorruptChunk& e) {
        CHECK(e.rank() == 0);
        CHECK(e.offset() == 8192);
    }
    CHECK_FALSE(reader.inspect().all_valid());
}

TEST_CASE("reading an absent rank is UnknownRank") {
    uint64_t size = 64;
    ContainerWriter w(1, std::span<const uint64_t>(&size, 1));
    w.write_chunk(0, random_bytes(64, 11));
    auto reader = ContainerReader::from_bytes(w.take());
    CHECK_THROWS_AS(reader.read_chunk(5), UnknownRank);
}

TEST_CASE("an unwritten reserved rank reads back empty") {
    std::vector<uint64_t> sizes = {128, 128};
    ContainerWriter w(2, sizes);
    w.write_chunk(0, random_bytes(128, 12));
    auto reader = ContainerReader::from_bytes(w.take());
    CHECK(reader.read_chunk(1).empty());
}

TEST_CASE("file round trip through the path-based interface") {
    TempFile tmp;
    std::vector<uint64_t> sizes = {777, 33};
    ContainerWriter w(2, sizes);
    auto p0 = random_bytes(777, 21);
    auto p1 = random_bytes(33, 22);
    w.write_chunk(0, p0);
    w.write_chunk(1, p1);
    w.save(tmp.path);

    CHECK(read_chunk(tmp.path, 0) == p0);
    CHECK(read_chunk(tmp.path, 1) == p1);
    ContainerReport rep = inspect(tmp.path);
    CHECK(rep.all_valid());
    CHECK(rep.total_bytes == 810);
}

TEST_CASE("empty and non-container files are NotAContainer") {
    CHECK_THROWS_AS(ContainerReader::from_bytes({}), NotAContainer);
    CHECK_THROWS_AS(ContainerReader::from_bytes(std::vector<uint8_t>(3, 'A')), NotAContainer);
    std::vector<uint8_t> junk = random_bytes(10000, 33);
    junk[0] = 'X';
    CHECK_THROWS_AS(ContainerReader::from_bytes(std::move(junk)), NotAContainer);
}

TEST_CASE("truncation and byte-flip fuzzing never crashes and flags damage") {
    std::mt19937 rng(4242);
    for (int iter = 0; iter < 60; ++iter) {
        uint32_t n = 1 + rng() % 5;
        std::vector<uint64_t> sizes;
        std::vector<std::vector<uint8_t>> payloads;
        for (uint32_t r = 0; r < n; ++r) {
            payloads.push_back(random_bytes(1 + rng() % 3000, 1000 + iter * 10 + r));
            sizes.push_back(payloads.back().size());
        }
        ContainerWriter w(n, sizes);
        for (uint32_t r = 0; r < n; ++r) w.write_chunk(r, payloads[r]);
        std::vector<uint8_t> bytes = w.take();

        uint64_t last_data_end = 0;
        {
            auto reader = ContainerReader::from_bytes(bytes);
            for (const auto& e : reader.entries())
                last_data_end = std::max(last_data_end, e.offset + e.length);
        }

        // truncation below the stored-data end must be flagged, never crash
        uint64_t cut = rng() % last_data_end;
        std::vector<uint8_t> truncated(bytes.begin(), bytes.begin() + cut);
        try {
            auto reader = ContainerReader::from_bytes(std::move(truncated));
            CHECK_FALSE(reader.inspect().all_valid());
        } catch (const NotAContainer&) {
            // acceptable: header or table was cut
        }

        // a flip inside stored bytes (header, table, or chunk data) is flagged
        std::vector<uint8_t> flipped = bytes;
        uint64_t pos;
        if (rng() % 2) {
            pos = rng() % kHeaderBytes;  // header field
        } else {
            ChunkEntry e = ContainerReader::from_bytes(bytes).entries()[rng() % n];
            if (e.length == 0) continue;
            pos = e.offset + rng() % e.length;  // stored payload byte
        }
        flipped[pos] ^= uint8_t(1 + rng() % 255);
        try {
            auto reader = ContainerReader::from_bytes(std::move(flipped));
            CHECK_FALSE(reader.inspect().all_valid());
        } catch (const NotAContainer&) {
        }
    }
}

TEST_CASE("aggregation beats per-rank files on the global system once metadata costs") {
    // mechanism: R independent files pay R metadata creates, one container pays one
    ClusterState c = build_cluster(default_cluster_spec());
    const double fc = c.spec().global_fs_file_create_cost;
    const uint64_t per_rank = 10 << 20;

    double prev_benefit = 0.0;
    for (uint32_t ranks : {2u, 8u, 32u, 48u}) {
        std::vector<uint64_t> sizes(ranks, per_rank);
        uint64_t data = uint64_t(ranks) * per_rank;
        Route to_global{Endpoint::node_tier(0, TierKind::RAM), Endpoint::global_fs()};

        double independent = ranks * fc + transfer_time(c, data, to_global);
        double aggregated =
            fc + transfer_time(c, container_total_size(sizes), to_global);

        CHECK(aggregated < independent);
        double benefit = independent - aggregated;
        CHECK(benefit > prev_benefit);
        prev_benefit = benefit;
    }
}
