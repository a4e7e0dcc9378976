#pragma once

#include <cstdint>
#include <cstdio>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deepckpt/cluster.hpp"
#include "deepckpt/crc32c.hpp"
#include "deepckpt/errors.hpp"

namespace deepckpt {

// ---------------------------------------------------------------------------
// Events
// ---------------------------------------------------------------------------

enum class EventKind { TRANSFER_DONE, WRITE_DONE, NOTIFY, FAILURE, OFFLOAD_DONE };

inline const char* event_kind_name(EventKind k) {
    switch (k) {
        case EventKind::TRANSFER_DONE: return "TRANSFER_DONE";
        case EventKind::WRITE_DONE: return "WRITE_DONE";
        case EventKind::NOTIFY: return "NOTIFY";
        case EventKind::FAILURE: return "FAILURE";
        case EventKind::OFFLOAD_DONE: return "OFFLOAD_DONE";
    }
    return "?";
}

struct EventRecord {
    double time_s = 0.0;
    uint64_t seq = 0;
    EventKind kind = EventKind::TRANSFER_DONE;
    int64_t node = -1;  // -1 when not tied to one node
    uint64_t bytes = 0;
    std::string detail;
};

// ---------------------------------------------------------------------------
// Simulated storage
// ---------------------------------------------------------------------------

// A payload stored on a simulated tier. Large scenario payloads carry sizes
// only; fidelity tests materialize the bytes so checksums and reconstruction
// are meaningful.
struct StoredObject {
    uint64_t bytes = 0;
    uint32_t crc = 0;
    std::shared_ptr<std::vector<uint8_t>> data;  // null when size-only

    bool materialized() const { return data != nullptr; }

    static StoredObject from_bytes(std::shared_ptr<std::vector<uint8_t>> d) {
        StoredObject o;
        o.bytes = d->size();
        o.crc = crc32c(*d);
        o.data = std::move(d);
        return o;
    }
    static StoredObject sized(uint64_t bytes, uint32_t crc) {
        StoredObject o;
        o.bytes = bytes;
        o.crc = crc;
        return o;
    }
};

class TierStore {
public:
    TierStore() = default;
    explicit TierStore(uint64_t capacity) : capacity_(capacity) {}

    void put(const std::string& key, StoredObject obj) {
        auto it = objects_.find(key);
        uint64_t freed = it == objects_.end() ? 0 : it->second.bytes;
        if (used_ - freed + obj.bytes > capacity_)
            throw TierFull("object '" + key + "' (" + std::to_string(obj.bytes) +
                           " bytes) does not fit, " + std::to_string(capacity_ - used_ + freed) +
                           " free");
        used_ = used_ - freed + obj.bytes;
        objects_[key] = std::move(obj);
    }

    const StoredObject* get(const std::string& key) const {
        auto it = objects_.find(key);
        return it == objects_.end() ? nullptr : &it->second;
    }

    bool erase(const std::string& key) {
        auto it = objects_.find(key);
        if (it == objects_.end()) return false;
        used_ -= it->second.bytes;
        objects_.erase(it);
        return true;
    }

    // Removes every object whose key starts with `prefix`.
    void erase_prefix(const std::string& prefix) {
        for (auto it = objects_.lower_bound(prefix); it != objects_.end();) {
            if (it->first.compare(0, prefix.size(), prefix) != 0) break;
            used_ -= it->second.bytes;
            it = objects_.erase(it);
        }
    }

    void clear() {
        objects_.clear();
        used_ = 0;
    }

    uint64_t used() const { return used_; }
    uint64_t capacity() const { return capacity_; }
    const std::map<std::string, StoredObject>& objects() const { return objects_; }

private:
    uint64_t capacity_ = 0;
    uint64_t used_ = 0;
    std::map<std::string, StoredObject> objects_;
};

// ---------------------------------------------------------------------------
// NAM device
// ---------------------------------------------------------------------------

struct Notification {
    enum class Op { PUT_COMPLETE, GET_COMPLETE, OFFLOAD_COMPLETE };
    Op op = Op::PUT_COMPLETE;
    uint32_t slot = 0;  // last ring slot used by the operation
    uint32_t client = 0;
    uint64_t bytes = 0;
};

inline const char* notification_name(Notification::Op op) {
    switch (op) {
        case Notification::Op::PUT_COMPLETE: return "PUT_COMPLETE";
        case Notification::Op::GET_COMPLETE: return "GET_COMPLETE";
        case Notification::Op::OFFLOAD_COMPLETE: return "OFFLOAD_COMPLETE";
    }
    return "?";
}

// Byte-addressable device memory fronted by a ring of staging slots. Slots
// cycle FREE -> CLAIMED -> FULL -> FREE; at most `ring_buffers` slots are
// non-FREE at any instant. Memory reads of never-written regions return
// zeros (the device memory is zero-initialized).
class NamDevice {
public:
    enum class SlotState { FREE, CLAIMED, FULL };

    NamDevice() = default;
    explicit NamDevice(const NamSpec& spec)
        : spec_(spec), slots_(spec.ring_buffers, SlotState::FREE) {}

    const NamSpec& spec() const { return spec_; }

    void register_client(uint32_t node) { clients_.insert(node); }
    bool client_registered(uint32_t node) const { return clients_.count(node) != 0; }

    void check_region(uint64_t offset, uint64_t len) const {
        if (offset > spec_.capacity || len > spec_.capacity - offset)
            throw CapacityError("region [" + std::to_string(offset) + ", +" +
                                std::to_string(len) + ") exceeds capacity " +
                                std::to_string(spec_.capacity));
    }

    void write_region(uint64_t offset, std::span<const uint8_t> data) {
        check_region(offset, data.size());
        if (data.empty()) return;
        if (memory_.size() < offset + data.size()) memory_.resize(offset + data.size());
        std::copy(data.begin(), data.end(), memory_.begin() + offset);
    }

    std::vector<uint8_t> read_region(uint64_t offset, uint64_t len) const {
        check_region(offset, len);
        std::vector<uint8_t> out(len, 0);
        if (offset < memory_.size()) {
            uint64_t have = std::min<uint64_t>(len, memory_.size() - offset);
            std::copy(memory_.begin() + offset, memory_.begin() + offset + have, out.begin());
        }
        return out;
    }

    // Runs the staging state machine for a payload of `len` bytes and returns
    // the number of slot cycles (= ceil(len / buffer_size)).
    uint64_t stage_through_ring(uint64_t len) {
        uint64_t cycles = 0;
        uint64_t remaining = len;
        while (remaining > 0) {
            uint32_t slot = claim_free_slot();
            transition(slot, SlotState::FREE, SlotState::CLAIMED);
            transition(slot, SlotState::CLAIMED, SlotState::FULL);
            transition(slot, SlotState::FULL, SlotState::FREE);
            ++cycles;
            remaining -= std::min<uint64_t>(remaining, spec_.buffer_size);
        }
        slot_cycles_ += cycles;
        return cycles;
    }

    uint64_t total_slot_cycles() const { return slot_cycles_; }
    uint32_t busy_slots() const { return busy_slots_; }
    uint32_t max_busy_slots() const { return max_busy_slots_; }

    void push_notification(Notification n) { notify_queue_.push_back(n); }
    bool has_notification() const { return !notify_queue_.empty(); }
    Notification pop_notification() {
        if (notify_queue_.empty()) throw Error("notification queue empty");
        Notification n = notify_queue_.front();
        notify_queue_.pop_front();
        return n;
    }
    size_t pending_notifications() const { return notify_queue_.size(); }

    // Region allocator used by parity placement; the sum of live allocations
    // never exceeds the device capacity.
    uint64_t alloc(uint64_t len) {
        uint64_t live = 0;
        for (const auto& [off, sz] : allocations_) live += sz;
        if (live + len > spec_.capacity)
            throw CapacityError("allocation of " + std::to_string(len) + " bytes over capacity (" +
                                std::to_string(spec_.capacity - live) + " free)");
        uint64_t offset = 0;
        for (const auto& [off, sz] : allocations_) {
            if (off - offset >= len) break;
            offset = off + sz;
        }
        if (offset + len > spec_.capacity)
            throw CapacityError("fragmented: no contiguous region of " + std::to_string(len));
        allocations_[offset] = len;
        return offset;
    }

    void free_region(uint64_t offset) { allocations_.erase(offset); }
    const std::map<uint64_t, uint64_t>& allocations() const { return allocations_; }

    struct Source {
        std::shared_ptr<std::vector<uint8_t>> data;  // null when size-only
        uint64_t len = 0;
        uint64_t ram_epoch = 0;  // RAM generation of the client at registration
    };

    void register_source(uint32_t client, Source src) { sources_[client] = std::move(src); }
    const Source* source(uint32_t client) const {
        auto it = sources_.find(client);
        return it == sources_.end() ? nullptr : &it->second;
    }
    void drop_source(uint32_t client) { sources_.erase(client); }

private:
    uint32_t claim_free_slot() {
        for (uint32_t i = 0; i < slots_.size(); ++i) {
            uint32_t s = (next_slot_ + i) % slots_.size();
            if (slots_[s] == SlotState::FREE) {
                next_slot_ = (s + 1) % static_cast<uint32_t>(slots_.size());
                return s;
            }
        }
        throw Error("ring stalled: no FREE slot");  // unreachable: cycles complete eagerly
    }

    void transition(uint32_t slot, SlotState from, SlotState to) {
        if (slots_[slot] != from)
            throw Error("illegal slot transition on slot " + std::to_string(slot));
        slots_[slot] = to;
        if (from == SlotState::FREE) {
            ++busy_slots_;
            max_busy_slots_ = std::max(max_busy_slots_, busy_slots_);
        }
        if (to == SlotState::FREE) --busy_slots_;
        if (busy_slots_ > slots_.size()) throw Error("more busy slots than ring buffers");
    }

    NamSpec spec_;
    std::vector<uint8_t> memory_;  // grown on demand; logically zero-initialized
    std::vector<SlotState> slots_;
    uint32_t next_slot_ = 0;
    uint32_t busy_slots_ = 0;
    uint32_t max_busy_slots_ = 0;
    uint64_t slot_cycles_ = 0;
    std::deque<Notification> notify_queue_;
    std::set<uint32_t> clients_;
    std::map<uint64_t, uint64_t> allocations_;
    std::map<uint32_t, Source> sources_;
};

// ---------------------------------------------------------------------------
// The event engine
// ---------------------------------------------------------------------------

// Single-threaded deterministic discrete-event engine. Events are processed
// in non-decreasing time order; ties break on the monotonically assigned
// sequence number (insertion order). The engine also owns the mutable runtime
// state of the machine: node liveness, per-node tier stores, the global
// store, and the NAM devices.
class SimEngine {
public:
    struct ByteCounters {
        uint64_t local = 0;   // written to node-local persistent tiers
        uint64_t remote = 0;  // moved between nodes over the fabric
        uint64_t global = 0;  // written to the global file system
        uint64_t nam = 0;     // moved into a NAM device
    };

    explicit SimEngine(ClusterState cluster) : cluster_(std::move(cluster)) {
        const ClusterSpec& s = cluster_.spec();
        stores_.resize(cluster_.node_count());
        ram_epoch_.assign(cluster_.node_count(), 0);
        alive_.assign(cluster_.node_count(), true);
        for (uint32_t n = 0; n < cluster_.node_count(); ++n)
            for (const auto& t : s.tiers_per_node)
                stores_[n].emplace(t.kind, TierStore(t.capacity));
        global_store_ = TierStore(s.global_fs.capacity);
        for (const auto& n : s.nam_devices) nams_.emplace_back(n);
    }

    const ClusterState& cluster() const { return cluster_; }
    double now() const { return now_; }

    uint64_t schedule_at(double time, EventKind kind, int64_t node, uint64_t bytes,
                         std::string detail, std::function<void(SimEngine&)> action = {}) {
        if (time < now_)
            throw Error("cannot schedule event in the past (" + std::to_string(time) + " < " +
                        std::to_string(now_) + ")");
        PendingEvent ev;
        ev.time = time;
        ev.seq = next_seq_++;
        ev.kind = kind;
        ev.node = node;
        ev.bytes = bytes;
        ev.detail = std::move(detail);
        ev.action = std::move(action);
        uint64_t seq = ev.seq;
        queue_.push(std::move(ev));
        return seq;
    }

    // Processes all events with timestamp <= time, in deterministic order.
    void run_until(double time) {
        while (!queue_.empty() && queue_.top().time <= time) {
            PendingEvent ev = queue_.top();
            queue_.pop();
            if (cancelled_.count(ev.seq)) {
                cancelled_.erase(ev.seq);
                continue;
            }
            now_ = ev.time;
            log_.push_back({ev.time, ev.seq, ev.kind, ev.node, ev.bytes, ev.detail});
            if (ev.action) ev.action(*this);
        }
        now_ = std::max(now_, time);
    }

    void run_all() {
        while (!queue_.empty()) run_until(queue_.top().time);
    }

    bool has_pending() const { return !queue_.empty(); }
    double next_event_time() const { return queue_.empty() ? now_ : queue_.top().time; }

    void cancel_event(uint64_t seq) { cancelled_.insert(seq); }

    const std::vector<EventRecord>& event_log() const { return log_; }

    std::string export_log_csv() const {
        std::string out = "time_s,seq,kind,node,bytes,detail\n";
        char buf[64];
        for (const auto& e : log_) {
            std::snprintf(buf, sizeof(buf), "%.9f", e.time_s);
            out += buf;
            out += ',' + std::to_string(e.seq) + ',' + event_kind_name(e.kind) + ',' +
                   std::to_string(e.node) + ',' + std::to_string(e.bytes) + ',' + e.detail + '\n';
        }
        return out;
    }

    // -- machine runtime state -------------------------------------------

    bool node_alive(uint32_t node) const {
        check_node(node);
        return alive_[node];
    }

    // Crash-stop: the node's tiers and in-flight transfers become unreachable.
    void kill_node(uint32_t node) {
        check_node(node);
        alive_[node] = false;
        ++ram_epoch_[node];
    }

    // Transient process failure: volatile state is lost, persistent tiers survive.
    void clear_node_ram(uint32_t node) {
        check_node(node);
        stores_[node][TierKind::RAM].clear();
        ++ram_epoch_[node];
    }

    uint64_t ram_epoch(uint32_t node) const {
        check_node(node);
        return ram_epoch_[node];
    }

    TierStore& store(uint32_t node, TierKind kind) {
        check_node(node);
        auto it = stores_[node].find(kind);
        if (it == stores_[node].end())
            throw RouteError(std::string("node has no tier ") + tier_name(kind));
        return it->second;
    }
    const TierStore& store(uint32_t node, TierKind kind) const {
        return const_cast<SimEngine*>(this)->store(node, kind);
    }

    TierStore& global_store() { return global_store_; }
    const TierStore& global_store() const { return global_store_; }

    NamDevice& nam(uint32_t id) {
        if (id >= nams_.size()) throw RouteError("no such NAM device: " + std::to_string(id));
        return nams_[id];
    }
    const NamDevice& nam(uint32_t id) const { return const_cast<SimEngine*>(this)->nam(id); }
    uint32_t nam_count() const { return static_cast<uint32_t>(nams_.size()); }

    ByteCounters& counters() { return counters_; }
    const ByteCounters& counters() const { return counters_; }

    // -- synchronous transfer helpers --------------------------------------

    // Prices a batch of concurrent flows starting at `start`, logs one event
    // per flow at its completion time, and advances the clock to the slowest
    // completion. Returns the per-flow durations.
    std::vector<double> execute_batch(double start, std::span<const Flow> flows, EventKind kind,
                                      const std::string& what) {
        if (start < now_) throw Error("batch starts in the past");
        std::vector<double> times = batch_transfer_times(cluster_, flows);
        double end = start;
        for (size_t i = 0; i < flows.size(); ++i) {
            int64_t node = -1;
            if (flows[i].route.dst.kind == Endpoint::Kind::NODE_TIER)
                node = flows[i].route.dst.node;
            else if (flows[i].route.src.kind == Endpoint::Kind::NODE_TIER)
                node = flows[i].route.src.node;
            schedule_at(start + times[i], kind, node, flows[i].bytes, what);
            account(flows[i]);
            end = std::max(end, start + times[i]);
        }
        run_until(end);
        return times;
    }

    // -- NAM operations -----------------------------------------------------

    Notification nam_put(uint32_t nam_id, uint32_t client, uint64_t dst_offset,
                         std::span<const uint8_t> data) {
        NamDevice& dev = nam(nam_id);
        require_client(dev, client);
        dev.check_region(dst_offset, data.size());
        double elapsed = transfer_time(cluster_, data.size(),
                                       {Endpoint::node_tier(client, TierKind::RAM),
                                        Endpoint::nam(nam_id)});
        uint64_t cycles = dev.stage_through_ring(data.size());
        dev.write_region(dst_offset, data);
        counters_.nam += data.size();
        Notification note{Notification::Op::PUT_COMPLETE,
                          cycles == 0 ? 0u : static_cast<uint32_t>((cycles - 1) % dev.spec().ring_buffers),
                          client, data.size()};
        double done = now_ + elapsed;
        schedule_at(done, EventKind::TRANSFER_DONE, client, data.size(),
                    "nam_put nam=" + std::to_string(nam_id) + " cycles=" + std::to_string(cycles));
        schedule_at(done, EventKind::NOTIFY, client, data.size(),
                    std::string("notify ") + notification_name(note.op));
        run_until(done);
        dev.push_notification(note);
        return note;
    }

    std::pair<std::vector<uint8_t>, Notification> nam_get(uint32_t nam_id, uint32_t client,
                                                          uint64_t src_offset, uint64_t len) {
        NamDevice& dev = nam(nam_id);
        require_client(dev, client);
        std::vector<uint8_t> data = dev.read_region(src_offset, len);
        double elapsed = transfer_time(cluster_, len,
                                       {Endpoint::nam(nam_id),
                                        Endpoint::node_tier(client, TierKind::RAM)});
        uint64_t cycles = dev.stage_through_ring(len);
        Notification note{Notification::Op::GET_COMPLETE,
                          cycles == 0 ? 0u : static_cast<uint32_t>((cycles - 1) % dev.spec().ring_buffers),
                          client, len};
        double done = now_ + elapsed;
        schedule_at(done, EventKind::TRANSFER_DONE, client, len,
                    "nam_get nam=" + std::to_string(nam_id) + " cycles=" + std::to_string(cycles));
        schedule_at(done, EventKind::NOTIFY, client, len,
                    std::string("notify ") + notification_name(note.op));
        run_until(done);
        dev.push_notification(note);
        return {std::move(data), note};
    }

    void nam_register_source(uint32_t nam_id, uint32_t client,
                             std::shared_ptr<std::vector<uint8_t>> data, uint64_t len) {
        NamDevice& dev = nam(nam_id);
        dev.register_client(client);
        if (data && data->size() != len) throw GroupError("source length mismatch");
        dev.register_source(client, {std::move(data), len, ram_epoch_[client]});
    }

    struct OffloadResult {
        Notification note;
        double expose_time = 0.0;    // node-visible cost per member
        double complete_time = 0.0;  // absolute sim time when parity is stored
        bool completed = false;      // false until the OFFLOAD_DONE event ran
    };

    // Pulls one registered block of `block_len` bytes from every group member
    // (concurrently, sharing the device link), folds them on the device, and
    // stores the parity at dst_offset. Member nodes only pay for exposing
    // their buffers; collection and parity computation happen on the device.
    // The parity lands when the OFFLOAD_DONE event is processed; callers that
    // need it immediately run the engine until `complete_time`.
    std::shared_ptr<OffloadResult> nam_xor_offload(uint32_t nam_id,
                                                   const std::vector<uint32_t>& group,
                                                   uint64_t block_len, uint64_t dst_offset) {
        NamDevice& dev = nam(nam_id);
        if (group.empty()) throw GroupError("empty offload group");
        dev.check_region(dst_offset, block_len);
        bool materialized = true;
        for (uint32_t member : group) {
            const NamDevice::Source* src = dev.source(member);
            if (src == nullptr)
                throw GroupError("member " + std::to_string(member) + " has no registered source");
            if (src->len != block_len)
                throw GroupError("member " + std::to_string(member) + " registered " +
                                 std::to_string(src->len) + " bytes, expected " +
                                 std::to_string(block_len));
            materialized = materialized && src->data != nullptr;
        }

        std::vector<Flow> pulls;
        pulls.reserve(group.size());
        for (uint32_t member : group)
            pulls.push_back({{Endpoint::node_tier(member, TierKind::RAM), Endpoint::nam(nam_id)},
                             block_len});
        std::vector<double> pull_times = batch_transfer_times(cluster_, pulls);
        double collect = 0.0;
        for (double t : pull_times) collect = std::max(collect, t);
        double fold = group.size() > 1
                          ? static_cast<double>(group.size() - 1) * static_cast<double>(block_len) /
                                dev.spec().xor_throughput
                          : 0.0;

        auto result = std::make_shared<OffloadResult>();
        result->expose_time = cluster_.network().base_latency;
        result->complete_time = now_ + collect + fold;
        result->note = {Notification::Op::OFFLOAD_COMPLETE, 0, group.front(), block_len};

        // Capture what the device needs at completion; a member that crashed
        // or lost its RAM meanwhile aborts the offload.
        std::vector<std::pair<uint32_t, uint64_t>> epochs;
        for (uint32_t member : group) epochs.emplace_back(member, ram_epoch_[member]);
        uint64_t bytes_pulled = static_cast<uint64_t>(group.size()) * block_len;

        schedule_at(result->complete_time, EventKind::OFFLOAD_DONE, -1, bytes_pulled,
                    "nam_xor_offload nam=" + std::to_string(nam_id) + " group_size=" +
                        std::to_string(group.size()) + " block=" + std::to_string(block_len),
                    [nam_id, group, block_len, dst_offset, materialized, epochs,
                     result](SimEngine& eng) {
                        NamDevice& d = eng.nam(nam_id);
                        for (const auto& [member, epoch] : epochs) {
                            if (!eng.alive_[member] || eng.ram_epoch_[member] != epoch) {
                                result->completed = false;
                                return;  // source lost mid-collection: parity never lands
                            }
                        }
                        if (materialized) {
                            std::vector<uint8_t> parity(block_len, 0);
                            for (uint32_t member : group) {
                                const NamDevice::Source* src = d.source(member);
                                const std::vector<uint8_t>& b = *src->data;
                                for (uint64_t i = 0; i < block_len; ++i) parity[i] ^= b[i];
                            }
                            d.write_region(dst_offset, parity);
                        }
                        eng.counters_.nam += static_cast<uint64_t>(group.size()) * block_len;
                        d.push_notification(result->note);
                        result->completed = true;
                    });
        return result;
    }

private:
    struct PendingEvent {
        double time = 0.0;
        uint64_t seq = 0;
        EventKind kind = EventKind::TRANSFER_DONE;
        int64_t node = -1;
        uint64_t bytes = 0;
        std::string detail;
        std::function<void(SimEngine&)> action;
    };
    struct EventOrder {
        bool operator()(const PendingEvent& a, const PendingEvent& b) const {
            if (a.time != b.time) return a.time > b.time;
            return a.seq > b.seq;
        }
    };

    void check_node(uint32_t node) const {
        if (!cluster_.valid_node(node)) throw UnknownNode(std::to_string(node));
    }

    void require_client(const NamDevice& dev, uint32_t client) const {
        check_node(client);
        if (!dev.client_registered(client))
            throw NotRegistered("node " + std::to_string(client) + " is not a NAM client");
    }

    void account(const Flow& f) {
        const Endpoint& s = f.route.src;
        const Endpoint& d = f.route.dst;
        if (d.kind == Endpoint::Kind::NODE_TIER &&
            (d.tier == TierKind::NVME || d.tier == TierKind::HDD))
            counters_.local += f.bytes;
        if (s.kind == Endpoint::Kind::NODE_TIER && d.kind == Endpoint::Kind::NODE_TIER &&
            s.node != d.node)
            counters_.remote += f.bytes;
        if (d.kind == Endpoint::Kind::GLOBAL_FS) counters_.global += f.bytes;
        if (d.kind == Endpoint::Kind::NAM) counters_.nam += f.bytes;
    }

    ClusterState cluster_;
    double now_ = 0.0;
    uint64_t next_seq_ = 0;
    std::priority_queue<PendingEvent, std::vector<PendingEvent>, EventOrder> queue_;
    std::set<uint64_t> cancelled_;
    std::vector<EventRecord> log_;
    std::vector<std::map<TierKind, TierStore>> stores_;
    TierStore global_store_;
    std::vector<NamDevice> nams_;
    std::vector<bool> alive_;
    std::vector<uint64_t> ram_epoch_;
    ByteCounters counters_;
};

}  // namespace deepckpt
