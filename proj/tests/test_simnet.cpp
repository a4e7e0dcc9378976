#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "deepckpt/config.hpp"
#include "deepckpt/simnet.hpp"

using namespace deepckpt;

namespace {

SimEngine make_engine() { return SimEngine(build_cluster(default_cluster_spec())); }

std::vector<uint8_t> random_bytes(size_t n, uint64_t seed) {
    std::vector<uint8_t> out(n);
    std::mt19937_64 rng(seed);
    size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        uint64_t v = rng();
        __builtin_memcpy(out.data() + i, &v, 8);
    }
    for (; i < n; ++i) out[i] = static_cast<uint8_t>(rng());
    return out;
}

}  // namespace

TEST_CASE("events run in time order with insertion-order tie break") {
    SimEngine eng = make_engine();
    eng.schedule_at(2.0, EventKind::WRITE_DONE, 1, 10, "late");
    eng.schedule_at(1.0, EventKind::WRITE_DONE, 2, 20, "early-a");
    eng.schedule_at(1.0, EventKind::WRITE_DONE, 3, 30, "early-b");
    eng.run_until(10.0);

    const auto& log = eng.event_log();
    REQUIRE(log.size() == 3);
    CHECK(log[0].detail == "early-a");
    CHECK(log[1].detail == "early-b");
    CHECK(log[2].detail == "late");
    CHECK(log[0].seq < log[1].seq);
    CHECK(eng.now() == 10.0);
}

TEST_CASE("run_until on an empty queue leaves an empty log") {
    SimEngine eng = make_engine();
    eng.run_until(5.0);
    CHECK(eng.event_log().empty());
    CHECK(eng.now() == 5.0);
}

TEST_CASE("double-run determinism of a scheduled workload") {
    auto run = [] {
        SimEngine eng = make_engine();
        std::mt19937 rng(123);
        for (int i = 0; i < 50; ++i) {
            double t = (rng() % 1000) / 100.0;
            eng.schedule_at(t, EventKind::TRANSFER_DONE, rng() % 24, rng() % 4096,
                            "op" + std::to_string(i));
        }
        eng.run_all();
        return eng.export_log_csv();
    };
    CHECK(run() == run());
}

TEST_CASE("nam_put of exactly one buffer is a single slot cycle") {
    SimEngine eng = make_engine();
    NamDevice& dev = eng.nam(0);
    dev.register_client(3);
    std::vector<uint8_t> data(dev.spec().buffer_size, 0xAB);

    Notification n = eng.nam_put(0, 3, 0, data);
    CHECK(n.op == Notification::Op::PUT_COMPLETE);
    CHECK(n.bytes == data.size());
    CHECK(dev.total_slot_cycles() == 1);
    CHECK(dev.pending_notifications() == 1);
    CHECK(dev.pop_notification().op == Notification::Op::PUT_COMPLETE);
}

TEST_CASE("nam_put of zero bytes completes immediately and leaves memory untouched") {
    SimEngine eng = make_engine();
    eng.nam(0).register_client(0);
    double before = eng.now();
    Notification n = eng.nam_put(0, 0, 128, {});
    CHECK(n.bytes == 0);
    CHECK(eng.nam(0).total_slot_cycles() == 0);
    CHECK(eng.nam(0).read_region(0, 256) == std::vector<uint8_t>(256, 0));
    CHECK(eng.now() == Catch::Approx(before + 1.5e-6 + 1e-7).margin(1e-12));
}

TEST_CASE("put/get round trip and zero-initialized reads") {
    SimEngine eng = make_engine();
    eng.nam(1).register_client(5);
    auto pattern = random_bytes(100000, 99);

    eng.nam_put(1, 5, 4096, pattern);
    auto [back, note] = eng.nam_get(1, 5, 4096, pattern.size());
    CHECK(back == pattern);
    CHECK(note.op == Notification::Op::GET_COMPLETE);

    auto [zeros, note2] = eng.nam_get(1, 5, 50'000'000, 64);
    CHECK(zeros == std::vector<uint8_t>(64, 0));
}

TEST_CASE("capacity boundary: a full-capacity put succeeds, one byte past fails") {
    ClusterSpec spec = default_cluster_spec();
    ClusterState cluster = build_cluster(spec);
    SimEngine eng(cluster);
    const uint64_t cap = eng.nam(0).spec().capacity;  // 2 GB
    eng.nam(0).register_client(0);

    std::vector<uint8_t> block(cap);
    for (size_t i = 0; i < block.size(); i += 4096) block[i] = static_cast<uint8_t>(i >> 12);
    Notification n = eng.nam_put(0, 0, 0, block);
    CHECK(n.bytes == cap);
    CHECK(eng.nam(0).total_slot_cycles() == (cap + (1 << 20) - 1) / (1 << 20));

    CHECK_THROWS_AS(eng.nam_put(0, 0, cap, std::vector<uint8_t>(1)), CapacityError);
    CHECK_THROWS_AS(eng.nam_put(0, 0, cap - 10, std::vector<uint8_t>(11)), CapacityError);
}

TEST_CASE("unregistered clients are rejected") {
    SimEngine eng = make_engine();
    CHECK_THROWS_AS(eng.nam_put(0, 9, 0, std::vector<uint8_t>(8)), NotRegistered);
    CHECK_THROWS_AS(eng.nam_get(0, 9, 0, 8), NotRegistered);
}

TEST_CASE("interleaved puts from two clients read back their own patterns") {
    // oracle: sequential replay of the same operation schedule
    auto run = [](bool interleave) {
        SimEngine eng = make_engine();
        eng.nam(0).register_client(1);
        eng.nam(0).register_client(2);
        auto a = random_bytes(3 << 20, 1);
        auto b = random_bytes(3 << 20, 2);
        if (interleave) {
            // chunked, alternating clients, disjoint ranges
            for (size_t off = 0; off < a.size(); off += 1 << 20) {
                eng.nam_put(0, 1, off,
                            std::span<const uint8_t>(a.data() + off, 1 << 20));
                eng.nam_put(0, 2, (8 << 20) + off,
                            std::span<const uint8_t>(b.data() + off, 1 << 20));
            }
        } else {
            eng.nam_put(0, 1, 0, a);
            eng.nam_put(0, 2, 8 << 20, b);
        }
        auto ra = eng.nam_get(0, 1, 0, a.size()).first;
        auto rb = eng.nam_get(0, 2, 8 << 20, b.size()).first;
        return std::make_pair(ra, rb);
    };
    auto [ia, ib] = run(true);
    auto [sa, sb] = run(false);
    CHECK(ia == sa);
    CHECK(ib == sb);
    CHECK(ia == random_bytes(3 << 20, 1));
    CHECK(ib == random_bytes(3 << 20, 2));
}

TEST_CASE("ring liveness: puts far larger than the ring recycle slots") {
    SimEngine eng = make_engine();
    NamDevice& dev = eng.nam(0);
    dev.register_client(0);
    const uint64_t len = 50 * dev.spec().buffer_size + 123;
    eng.nam_put(0, 0, 0, std::vector<uint8_t>(len, 1));
    CHECK(dev.total_slot_cycles() == 51);  // ceil(len / buffer_size)
    CHECK(dev.busy_slots() == 0);
    CHECK(dev.max_busy_slots() <= dev.spec().ring_buffers);
}

TEST_CASE("notification conservation: one per completed operation") {
    SimEngine eng = make_engine();
    NamDevice& dev = eng.nam(0);
    dev.register_client(0);
    dev.register_client(1);
    size_t ops = 0;
    for (int i = 0; i < 10; ++i) {
        eng.nam_put(0, i % 2, i * 4096, std::vector<uint8_t>(100, uint8_t(i)));
        ++ops;
        if (i % 3 == 0) {
            eng.nam_get(0, 1, 0, 50);
            ++ops;
        }
    }
    CHECK(dev.pending_notifications() == ops);
    size_t drained = 0;
    while (dev.has_notification()) {
        dev.pop_notification();
        ++drained;
    }
    CHECK(drained == ops);
}

TEST_CASE("xor offload: identity, self-inverse, and the host-fold oracle") {
    SimEngine eng = make_engine();

    SECTION("group of one: parity equals the block") {
        auto block = std::make_shared<std::vector<uint8_t>>(random_bytes(4096, 5));
        eng.nam_register_source(0, 0, block, block->size());
        auto res = eng.nam_xor_offload(0, {0}, block->size(), 0);
        eng.run_until(res->complete_time);
        CHECK(res->completed);
        CHECK(eng.nam(0).read_region(0, block->size()) == *block);
    }

    SECTION("two identical blocks cancel to zero") {
        auto block = std::make_shared<std::vector<uint8_t>>(random_bytes(4096, 6));
        eng.nam_register_source(0, 0, block, block->size());
        eng.nam_register_source(0, 1, block, block->size());
        auto res = eng.nam_xor_offload(0, {0, 1}, block->size(), 0);
        eng.run_until(res->complete_time);
        CHECK(eng.nam(0).read_region(0, block->size()) ==
              std::vector<uint8_t>(block->size(), 0));
    }

    SECTION("eight random 1 KiB blocks match the host-side fold") {
        std::vector<uint8_t> expect(1024, 0);
        std::vector<uint32_t> group;
        for (uint32_t n = 0; n < 8; ++n) {
            auto block = std::make_shared<std::vector<uint8_t>>(random_bytes(1024, 100 + n));
            for (size_t i = 0; i < 1024; ++i) expect[i] ^= (*block)[i];
            eng.nam_register_source(0, n, block, 1024);
            group.push_back(n);
        }
        auto res = eng.nam_xor_offload(0, group, 1024, 2048);
        eng.run_until(res->complete_time);
        CHECK(res->completed);
        CHECK(eng.nam(0).read_region(2048, 1024) == expect);
        CHECK(eng.nam(0).pending_notifications() == 1);
        CHECK(eng.nam(0).pop_notification().op == Notification::Op::OFFLOAD_COMPLETE);
    }

    SECTION("mismatched registration lengths are a group error") {
        eng.nam_register_source(0, 0, nullptr, 1000);
        eng.nam_register_source(0, 1, nullptr, 999);
        CHECK_THROWS_AS(eng.nam_xor_offload(0, {0, 1}, 1000, 0), GroupError);
        CHECK_THROWS_AS(eng.nam_xor_offload(0, {0, 2}, 1000, 0), GroupError);
    }

    SECTION("parity region must fit the device") {
        eng.nam_register_source(0, 0, nullptr, 3e9);
        eng.nam_register_source(0, 1, nullptr, 3e9);
        CHECK_THROWS_AS(eng.nam_xor_offload(0, {0, 1}, 3e9, 0), CapacityError);
    }
}

TEST_CASE("large puts achieve at least 95% of the link bandwidth") {
    SimEngine eng = make_engine();
    eng.nam(0).register_client(0);
    const uint64_t len = 1ull << 30;
    double t0 = eng.now();
    eng.nam_put(0, 0, 0, std::vector<uint8_t>(len, 7));
    double elapsed = eng.now() - t0;
    double achieved = static_cast<double>(len) / elapsed;
    CHECK(achieved >= 0.95 * eng.cluster().network().link_bw);
}

TEST_CASE("event log CSV has the documented columns") {
    SimEngine eng = make_engine();
    eng.schedule_at(0.5, EventKind::NOTIFY, 4, 99, "hello");
    eng.run_all();
    std::string csv = eng.export_log_csv();
    CHECK(csv.rfind("time_s,seq,kind,node,bytes,detail\n", 0) == 0);
    CHECK(csv.find("0.500000000,0,NOTIFY,4,99,hello\n") != std::string::npos);
}

TEST_CASE("allocation accounting never exceeds device capacity") {
    SimEngine eng = make_engine();
    NamDevice& dev = eng.nam(0);
    uint64_t a = dev.alloc(1e9);
    uint64_t b = dev.alloc(0.9e9);
    CHECK(a != b);
    CHECK_THROWS_AS(dev.alloc(0.2e9), CapacityError);
    dev.free_region(a);
    CHECK_NOTHROW(dev.alloc(0.2e9));
}
