#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "deepckpt/errors.hpp"

namespace deepckpt {

// ---------------------------------------------------------------------------
// Machine description
// ---------------------------------------------------------------------------

enum class TierKind { RAM, NVME, HDD, GLOBAL_FS };

inline const char* tier_name(TierKind k) {
    switch (k) {
        case TierKind::RAM: return "ram";
        case TierKind::NVME: return "nvme";
        case TierKind::HDD: return "hdd";
        case TierKind::GLOBAL_FS: return "global";
    }
    return "?";
}

struct TierSpec {
    TierKind kind = TierKind::RAM;
    uint64_t capacity = 0;        // bytes
    double write_bw = 0.0;        // bytes/s
    double read_bw = 0.0;         // bytes/s
    double access_latency = 0.0;  // seconds
};

struct NetworkSpec {
    double link_bw = 0.0;          // bytes/s, per node link
    double base_latency = 0.0;     // seconds
    double bisection_limit = 0.0;  // bytes/s, aggregate cap for concurrent transfers
};

struct NamSpec {
    uint64_t capacity = 0;       // bytes
    double link_bw = 0.0;        // bytes/s into/out of the device
    double xor_throughput = 0.0; // bytes/s of the on-device parity engine
    uint32_t ring_buffers = 0;   // number of ring slots
    uint64_t buffer_size = 0;    // bytes per slot
};

struct ClusterSpec {
    uint32_t cluster_nodes = 0;
    uint32_t booster_nodes = 0;
    std::vector<TierSpec> tiers_per_node;  // same tier set on every node
    NetworkSpec network;
    std::vector<NamSpec> nam_devices;
    TierSpec global_fs;
    // Metadata cost charged once per file created on the global file system.
    double global_fs_file_create_cost = 0.0;  // seconds
    // Effective rate of a host-side XOR fold (streaming, single pass).
    double node_xor_throughput = 0.0;  // bytes/s
};

// ---------------------------------------------------------------------------
// Validation + immutable machine state
// ---------------------------------------------------------------------------

inline void validate_cluster_spec(const ClusterSpec& s) {
    if (s.cluster_nodes < 1)
        throw SpecError("cluster_nodes", "must be >= 1");
    if (s.tiers_per_node.empty())
        throw SpecError("tiers_per_node", "must not be empty");

    int ram = 0, persistent = 0;
    for (size_t i = 0; i < s.tiers_per_node.size(); ++i) {
        const TierSpec& t = s.tiers_per_node[i];
        const std::string f = "tiers_per_node[" + std::to_string(i) + "]";
        if (t.kind == TierKind::GLOBAL_FS)
            throw SpecError(f + ".kind", "global_fs is not a node-local tier");
        if (t.kind == TierKind::RAM) ++ram; else ++persistent;
        if (t.capacity == 0) throw SpecError(f + ".capacity", "must be > 0");
        if (t.write_bw <= 0) throw SpecError(f + ".write_bw", "must be > 0");
        if (t.read_bw <= 0) throw SpecError(f + ".read_bw", "must be > 0");
        if (t.access_latency < 0) throw SpecError(f + ".access_latency", "must be >= 0");
    }
    if (ram != 1)
        throw SpecError("tiers_per_node", "every node needs exactly one RAM tier");
    if (persistent < 1)
        throw SpecError("tiers_per_node", "every node needs at least one persistent tier");

    const TierSpec* ram_tier = nullptr;
    const TierSpec* nvme_tier = nullptr;
    for (const auto& t : s.tiers_per_node) {
        if (t.kind == TierKind::RAM) ram_tier = &t;
        if (t.kind == TierKind::NVME) nvme_tier = &t;
    }
    if (ram_tier && nvme_tier) {
        if (ram_tier->read_bw < nvme_tier->read_bw ||
            ram_tier->write_bw < nvme_tier->write_bw)
            throw SpecError("tiers_per_node", "RAM bandwidth must be >= NVME bandwidth");
    }

    if (s.network.link_bw <= 0)
        throw SpecError("network.link_bw", "must be > 0");
    if (s.network.base_latency < 0)
        throw SpecError("network.base_latency", "must be >= 0");
    if (s.network.bisection_limit < s.network.link_bw)
        throw SpecError("network.bisection_limit", "must be >= link_bw");

    for (size_t i = 0; i < s.nam_devices.size(); ++i) {
        const NamSpec& n = s.nam_devices[i];
        const std::string f = "nam_devices[" + std::to_string(i) + "]";
        if (n.capacity == 0) throw SpecError(f + ".capacity", "must be > 0");
        if (n.link_bw <= 0) throw SpecError(f + ".link_bw", "must be > 0");
        if (n.xor_throughput <= 0) throw SpecError(f + ".xor_throughput", "must be > 0");
        if (n.ring_buffers < 2) throw SpecError(f + ".ring_buffers", "must be >= 2");
        if (n.buffer_size == 0) throw SpecError(f + ".buffer_size", "must be > 0");
    }

    if (s.global_fs.kind != TierKind::GLOBAL_FS)
        throw SpecError("global_fs.kind", "must be GLOBAL_FS");
    if (s.global_fs.capacity == 0) throw SpecError("global_fs.capacity", "must be > 0");
    if (s.global_fs.write_bw <= 0) throw SpecError("global_fs.write_bw", "must be > 0");
    if (s.global_fs.read_bw <= 0) throw SpecError("global_fs.read_bw", "must be > 0");
    if (s.global_fs.access_latency < 0)
        throw SpecError("global_fs.access_latency", "must be >= 0");
    if (s.global_fs_file_create_cost < 0)
        throw SpecError("global_fs_file_create_cost", "must be >= 0");
    if (s.node_xor_throughput <= 0)
        throw SpecError("node_xor_throughput", "must be > 0");
}

// Immutable machine state. Node ids are 0..N-1, cluster nodes first, then
// booster nodes. Safe to share across threads; all cost functions are pure.
class ClusterState {
public:
    static ClusterState build(const ClusterSpec& spec) {
        validate_cluster_spec(spec);
        return ClusterState(spec);
    }

    const ClusterSpec& spec() const { return spec_; }
    uint32_t node_count() const { return spec_.cluster_nodes + spec_.booster_nodes; }
    uint32_t cluster_nodes() const { return spec_.cluster_nodes; }
    uint32_t booster_nodes() const { return spec_.booster_nodes; }
    bool is_booster(uint32_t node) const { return node >= spec_.cluster_nodes && node < node_count(); }
    bool valid_node(uint32_t node) const { return node < node_count(); }

    bool has_tier(TierKind k) const {
        for (const auto& t : spec_.tiers_per_node)
            if (t.kind == k) return true;
        return false;
    }

    const TierSpec& tier(TierKind k) const {
        for (const auto& t : spec_.tiers_per_node)
            if (t.kind == k) return t;
        throw RouteError(std::string("no such node-local tier: ") + tier_name(k));
    }

    const TierSpec& global_fs() const { return spec_.global_fs; }
    const NetworkSpec& network() const { return spec_.network; }
    uint32_t nam_count() const { return static_cast<uint32_t>(spec_.nam_devices.size()); }
    const NamSpec& nam(uint32_t i) const {
        if (i >= nam_count()) throw RouteError("no such NAM device: " + std::to_string(i));
        return spec_.nam_devices[i];
    }

private:
    explicit ClusterState(ClusterSpec spec) : spec_(std::move(spec)) {}
    ClusterSpec spec_;
};

inline ClusterState build_cluster(const ClusterSpec& spec) { return ClusterState::build(spec); }

// ---------------------------------------------------------------------------
// Routes and the transfer cost model
// ---------------------------------------------------------------------------

struct Endpoint {
    enum class Kind { NODE_TIER, NAM, GLOBAL_FS };
    Kind kind = Kind::NODE_TIER;
    uint32_t node = 0;       // NODE_TIER only
    TierKind tier = TierKind::RAM;
    uint32_t nam_id = 0;     // NAM only

    static Endpoint node_tier(uint32_t node, TierKind tier) {
        Endpoint e;
        e.kind = Kind::NODE_TIER;
        e.node = node;
        e.tier = tier;
        return e;
    }
    static Endpoint nam(uint32_t id) {
        Endpoint e;
        e.kind = Kind::NAM;
        e.nam_id = id;
        return e;
    }
    static Endpoint global_fs() {
        Endpoint e;
        e.kind = Kind::GLOBAL_FS;
        return e;
    }
};

struct Route {
    Endpoint src;
    Endpoint dst;
};

struct Flow {
    Route route;
    uint64_t bytes = 0;
};

namespace detail {

inline void check_endpoint(const ClusterState& c, const Endpoint& e) {
    switch (e.kind) {
        case Endpoint::Kind::NODE_TIER:
            if (!c.valid_node(e.node))
                throw RouteError("unknown node " + std::to_string(e.node));
            (void)c.tier(e.tier);  // throws if the tier does not exist
            break;
        case Endpoint::Kind::NAM:
            (void)c.nam(e.nam_id);
            break;
        case Endpoint::Kind::GLOBAL_FS:
            break;
    }
}

// A route crosses the fabric unless both ends are tiers of the same node.
inline bool crosses_network(const Route& r) {
    if (r.src.kind == Endpoint::Kind::NODE_TIER && r.dst.kind == Endpoint::Kind::NODE_TIER)
        return r.src.node != r.dst.node;
    return true;
}

inline double endpoint_latency(const ClusterState& c, const Endpoint& e) {
    switch (e.kind) {
        case Endpoint::Kind::NODE_TIER: return c.tier(e.tier).access_latency;
        case Endpoint::Kind::NAM: return 0.0;
        case Endpoint::Kind::GLOBAL_FS: return c.global_fs().access_latency;
    }
    return 0.0;
}

// Identifiers for the resources a flow occupies. Concurrent flows touching
// the same resource share its bandwidth in equal parts.
struct ResourceUse {
    // (node, kind, read?) for node tiers; (~0, GLOBAL_FS, read?) for global fs
    std::vector<std::string> ids;
    std::vector<double> caps;
    void add(std::string id, double cap) {
        ids.push_back(std::move(id));
        caps.push_back(cap);
    }
};

inline ResourceUse flow_resources(const ClusterState& c, const Route& r) {
    ResourceUse u;
    const bool net = crosses_network(r);

    auto add_tier = [&](const Endpoint& e, bool reading) {
        const char* dir = reading ? "r" : "w";
        if (e.kind == Endpoint::Kind::NODE_TIER) {
            const TierSpec& t = c.tier(e.tier);
            u.add("tier/" + std::to_string(e.node) + "/" + tier_name(e.tier) + "/" + dir,
                  reading ? t.read_bw : t.write_bw);
        } else if (e.kind == Endpoint::Kind::GLOBAL_FS) {
            u.add(std::string("gfs/") + dir, reading ? c.global_fs().read_bw : c.global_fs().write_bw);
        } else {
            u.add("nam/" + std::to_string(e.nam_id), c.nam(e.nam_id).link_bw);
        }
    };

    add_tier(r.src, /*reading=*/true);
    add_tier(r.dst, /*reading=*/false);

    if (net) {
        if (r.src.kind == Endpoint::Kind::NODE_TIER)
            u.add("link/" + std::to_string(r.src.node) + "/out", c.network().link_bw);
        if (r.dst.kind == Endpoint::Kind::NODE_TIER)
            u.add("link/" + std::to_string(r.dst.node) + "/in", c.network().link_bw);
        u.add("net/bisection", c.network().bisection_limit);
    }
    return u;
}

}  // namespace detail

// Time for a batch of concurrent flows. Each shared resource (tier direction,
// node link direction, the network bisection cap, a NAM link, the global file
// system) is split equally among the flows using it; a flow's effective
// bandwidth is the minimum share over the resources it touches. Deterministic.
inline std::vector<double> batch_transfer_times(const ClusterState& c,
                                                std::span<const Flow> flows) {
    std::vector<detail::ResourceUse> uses;
    uses.reserve(flows.size());
    std::map<std::string, uint32_t> counts;
    for (const Flow& f : flows) {
        detail::check_endpoint(c, f.route.src);
        detail::check_endpoint(c, f.route.dst);
        uses.push_back(detail::flow_resources(c, f.route));
        for (const auto& id : uses.back().ids) ++counts[id];
    }
    std::vector<double> times;
    times.reserve(flows.size());
    for (size_t i = 0; i < flows.size(); ++i) {
        double eff = 0.0;
        bool first = true;
        for (size_t k = 0; k < uses[i].ids.size(); ++k) {
            double share = uses[i].caps[k] / counts[uses[i].ids[k]];
            eff = first ? share : std::min(eff, share);
            first = false;
        }
        double lat = detail::endpoint_latency(c, flows[i].route.src) +
                     detail::endpoint_latency(c, flows[i].route.dst) +
                     (detail::crosses_network(flows[i].route) ? c.network().base_latency : 0.0);
        times.push_back(lat + static_cast<double>(flows[i].bytes) / eff);
    }
    return times;
}

// Time for a single transfer: latency plus size over the minimum bandwidth on
// the route. Deterministic and monotone non-decreasing in size.
inline double transfer_time(const ClusterState& c, uint64_t bytes, const Route& route) {
    Flow f{route, bytes};
    return batch_transfer_times(c, std::span<const Flow>(&f, 1))[0];
}

}  // namespace deepckpt
