#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "deepckpt/aggregate.hpp"
#include "deepckpt/cluster.hpp"
#include "deepckpt/config.hpp"
#include "deepckpt/crc32c.hpp"
#include "deepckpt/errors.hpp"
#include "deepckpt/simnet.hpp"
#include "deepckpt/xor_code.hpp"

namespace deepckpt {

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

enum class Strategy { SINGLE, PARTNER, BUDDY, DIST_XOR, NAM_XOR };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::SINGLE: return "single";
        case Strategy::PARTNER: return "partner";
        case Strategy::BUDDY: return "buddy";
        case Strategy::DIST_XOR: return "distxor";
        case Strategy::NAM_XOR: return "namxor";
    }
    return "?";
}

inline std::optional<Strategy> strategy_from_name(const std::string& name) {
    if (name == "single") return Strategy::SINGLE;
    if (name == "partner") return Strategy::PARTNER;
    if (name == "buddy") return Strategy::BUDDY;
    if (name == "distxor") return Strategy::DIST_XOR;
    if (name == "namxor") return Strategy::NAM_XOR;
    return std::nullopt;
}

enum class FlushMode { SYNC, ASYNC };

// Checkpoint cadence: one checkpoint after every `interval` completed steps.
inline bool need_checkpoint(uint64_t step, uint64_t interval) {
    if (interval < 1) throw Error("checkpoint interval must be >= 1");
    return step > 0 && step % interval == 0;
}

// Ring partner mapping over n_nodes slots; bijective for any fixed hop.
inline uint32_t partner_of(uint32_t node, uint32_t n_nodes, uint32_t hop) {
    if (hop < 1 || hop >= n_nodes)
        throw HopError("hop " + std::to_string(hop) + " not in [1, " + std::to_string(n_nodes) +
                       ")");
    if (node >= n_nodes) throw UnknownNode(std::to_string(node));
    return (node + hop) % n_nodes;
}

struct CkptKnobs {
    uint32_t group_size = 8;
    uint32_t partner_hop = 1;
    uint32_t keep_sets = 2;  // cached checkpoint sets retained per strategy run
    uint64_t materialize_limit = 64ull << 20;
};

inline CkptKnobs ckpt_knobs_from_config(const KvConfig& cfg) {
    CkptKnobs k;
    k.group_size = cfg.get_u32("ckpt.group_size", k.group_size);
    k.partner_hop = cfg.get_u32("ckpt.partner_hop", k.partner_hop);
    k.keep_sets = cfg.get_u32("ckpt.keep_sets", k.keep_sets);
    k.materialize_limit = cfg.get_u64("ckpt.materialize_limit", k.materialize_limit);
    return k;
}

// Consecutive participants grouped by `group_size`; a remainder of one is
// folded into the previous group so every group has at least two members.
inline std::vector<std::vector<uint32_t>> form_groups(const std::vector<uint32_t>& participants,
                                                      uint32_t group_size) {
    if (group_size < 2) throw GroupError("group size must be >= 2");
    if (participants.size() < 2)
        throw StrategyUnsupported("XOR redundancy needs at least 2 participating nodes");
    std::vector<std::vector<uint32_t>> groups;
    for (size_t i = 0; i < participants.size(); i += group_size) {
        size_t end = std::min(participants.size(), i + group_size);
        groups.emplace_back(participants.begin() + i, participants.begin() + end);
    }
    if (groups.size() > 1 && groups.back().size() == 1) {
        groups[groups.size() - 2].push_back(groups.back()[0]);
        groups.pop_back();
    }
    return groups;
}

// Byte-wise fold of checkpoint blocks (full-block parity, NAM style).
inline std::vector<uint8_t> xor_encode_blocks(const std::vector<std::vector<uint8_t>>& blocks) {
    return xor_encode(blocks);
}

// ---------------------------------------------------------------------------
// Checkpoint database
// ---------------------------------------------------------------------------

enum class SetState { PENDING, VALID, FLUSHED, INVALID };

inline const char* set_state_name(SetState s) {
    switch (s) {
        case SetState::PENDING: return "PENDING";
        case SetState::VALID: return "VALID";
        case SetState::FLUSHED: return "FLUSHED";
        case SetState::INVALID: return "INVALID";
    }
    return "?";
}

inline std::optional<SetState> set_state_from_name(const std::string& n) {
    if (n == "PENDING") return SetState::PENDING;
    if (n == "VALID") return SetState::VALID;
    if (n == "FLUSHED") return SetState::FLUSHED;
    if (n == "INVALID") return SetState::INVALID;
    return std::nullopt;
}

// Location strings: "<tier>:<node>:<key>" for node tiers, "global:-:<key>"
// for the global file system, "nam:<dev>:<offset>:<len>" for NAM regions,
// "-" when absent.
struct MemberRecord {
    uint32_t node = 0;
    uint64_t bytes = 0;
    uint32_t crc = 0;
    std::string loc = "-";
    SetState state = SetState::PENDING;
    int64_t partner = -1;
    int64_t group = -1;
    std::string parity_loc = "-";

    bool operator==(const MemberRecord&) const = default;
};

struct CheckpointSet {
    uint64_t set_id = 0;
    uint64_t step = 0;
    Strategy strategy = Strategy::SINGLE;
    std::map<uint32_t, MemberRecord> members;
    SetState state = SetState::PENDING;

    bool operator==(const CheckpointSet&) const = default;

    std::vector<uint32_t> member_nodes() const {
        std::vector<uint32_t> out;
        for (const auto& [n, _] : members) out.push_back(n);
        return out;
    }
};

// Append-only record log; the log is the source of truth and replaying it
// reconstructs the in-memory state exactly. One `key=value` record per line;
// a final `commit set=<id>` line marks the set VALID.
class CkptDb {
public:
    uint64_t next_set_id() const { return sets_.empty() ? 1 : sets_.rbegin()->first + 1; }

    bool has_pending() const {
        for (const auto& [id, s] : sets_)
            if (s.state == SetState::PENDING) return true;
        return false;
    }

    void append_member(uint64_t set_id, uint64_t step, Strategy strategy,
                       const MemberRecord& m) {
        if (!sets_.empty() && set_id < sets_.rbegin()->first)
            throw Error("set ids must not decrease");
        char crc_hex[16];
        std::snprintf(crc_hex, sizeof(crc_hex), "%08x", m.crc);
        std::string line =
            "set=" + std::to_string(set_id) + " step=" + std::to_string(step) +
            " strategy=" + strategy_name(strategy) + " node=" + std::to_string(m.node) +
            " bytes=" + std::to_string(m.bytes) + " crc=" + crc_hex + " loc=" + m.loc +
            " state=" + set_state_name(m.state) +
            " partner=" + (m.partner < 0 ? "-" : std::to_string(m.partner)) +
            " group=" + (m.group < 0 ? "-" : std::to_string(m.group)) +
            " parity_loc=" + m.parity_loc;
        apply_line(line);
        log_.push_back(std::move(line));
    }

    void commit(uint64_t set_id) {
        std::string line = "commit set=" + std::to_string(set_id);
        apply_line(line);
        log_.push_back(std::move(line));
    }

    void mark_member_state(uint64_t set_id, uint32_t node, SetState state) {
        auto it = sets_.find(set_id);
        if (it == sets_.end()) throw Error("unknown set " + std::to_string(set_id));
        auto mit = it->second.members.find(node);
        if (mit == it->second.members.end())
            throw Error("set " + std::to_string(set_id) + " has no member " +
                        std::to_string(node));
        MemberRecord m = mit->second;
        m.state = state;
        append_member(set_id, it->second.step, it->second.strategy, m);
    }

    void mark_set_invalid(uint64_t set_id) {
        auto it = sets_.find(set_id);
        if (it == sets_.end()) throw Error("unknown set " + std::to_string(set_id));
        for (const auto& [node, _] : it->second.members)
            mark_member_state(set_id, node, SetState::INVALID);
    }

    const std::map<uint64_t, CheckpointSet>& sets() const { return sets_; }

    const CheckpointSet* find(uint64_t set_id) const {
        auto it = sets_.find(set_id);
        return it == sets_.end() ? nullptr : &it->second;
    }

    std::string serialize() const {
        std::string out;
        for (const auto& l : log_) {
            out += l;
            out += '\n';
        }
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot create " + path);
        f << serialize();
    }

    static CkptDb replay(const std::string& text) {
        CkptDb db;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            db.apply_line(line);
            db.log_.push_back(line);
        }
        return db;
    }

    static CkptDb load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return replay(ss.str());
    }

    bool equal_state(const CkptDb& other) const { return sets_ == other.sets_; }

private:
    static std::map<std::string, std::string> tokenize(const std::string& line) {
        std::map<std::string, std::string> kv;
        std::istringstream in(line);
        std::string tok;
        while (in >> tok) {
            auto eq = tok.find('=');
            if (eq == std::string::npos) throw LogCorrupt("bad token '" + tok + "'");
            kv[tok.substr(0, eq)] = tok.substr(eq + 1);
        }
        return kv;
    }

    void apply_line(const std::string& line) {
        if (line.rfind("commit ", 0) == 0) {
            auto kv = tokenize(line.substr(7));
            uint64_t id = std::stoull(kv.at("set"));
            auto it = sets_.find(id);
            if (it == sets_.end()) throw LogCorrupt("commit of unknown set " + std::to_string(id));
            if (it->second.state == SetState::PENDING) it->second.state = SetState::VALID;
            return;
        }
        auto kv = tokenize(line);
        uint64_t id = std::stoull(kv.at("set"));
        CheckpointSet& set = sets_[id];
        if (set.members.empty() && set.state == SetState::PENDING && set.set_id == 0) {
            set.set_id = id;
            set.step = std::stoull(kv.at("step"));
            auto strat = strategy_from_name(kv.at("strategy"));
            if (!strat) throw LogCorrupt("unknown strategy " + kv.at("strategy"));
            set.strategy = *strat;
        }
        MemberRecord m;
        m.node = static_cast<uint32_t>(std::stoul(kv.at("node")));
        m.bytes = std::stoull(kv.at("bytes"));
        m.crc = static_cast<uint32_t>(std::stoul(kv.at("crc"), nullptr, 16));
        m.loc = kv.at("loc");
        auto st = set_state_from_name(kv.at("state"));
        if (!st) throw LogCorrupt("unknown state " + kv.at("state"));
        m.state = *st;
        m.partner = kv.at("partner") == "-" ? -1 : std::stoll(kv.at("partner"));
        m.group = kv.at("group") == "-" ? -1 : std::stoll(kv.at("group"));
        m.parity_loc = kv.at("parity_loc");
        set.members[m.node] = m;

        // Set-level state follows the member rows: any INVALID member poisons
        // the set; a set whose members are all FLUSHED is FLUSHED.
        if (m.state == SetState::INVALID) {
            set.state = SetState::INVALID;
        } else if (set.state == SetState::VALID || set.state == SetState::FLUSHED) {
            bool all_flushed = true;
            for (const auto& [n, mem] : set.members)
                all_flushed = all_flushed && mem.state == SetState::FLUSHED;
            set.state = all_flushed ? SetState::FLUSHED : SetState::VALID;
        }
    }

    std::map<uint64_t, CheckpointSet> sets_;
    std::vector<std::string> log_;
};

// ---------------------------------------------------------------------------
// Strategy pricing (closed form, uniform payloads)
// ---------------------------------------------------------------------------

struct StrategyTiming {
    double write_local = 0, reread = 0, send = 0, remote_write = 0;
    double exchange = 0, xor_compute = 0, parity_write = 0, expose = 0;
    double per_node_overhead = 0;  // app-visible seconds per node
    double redundancy_tail = 0;    // device time after the app proceeds (NAM offload)
};

// Prices one checkpoint epoch for n nodes writing `bytes` each, under the
// same bandwidth-sharing rules the simulator applies. Pure function.
inline StrategyTiming price_strategy(const ClusterState& c, Strategy strat, uint32_t n,
                                     uint64_t bytes, const CkptKnobs& knobs) {
    if (n == 0) throw StrategyUnsupported("no participants");
    const TierSpec& ram = c.tier(TierKind::RAM);
    const TierSpec& nvme = c.tier(TierKind::NVME);
    const NetworkSpec& net = c.network();
    const double B = static_cast<double>(bytes);

    StrategyTiming t;
    t.write_local =
        ram.access_latency + nvme.access_latency + B / std::min(ram.read_bw, nvme.write_bw);
    t.reread =
        nvme.access_latency + ram.access_latency + B / std::min(nvme.read_bw, ram.write_bw);

    double net_eff = std::min({ram.read_bw, net.link_bw, net.bisection_limit / n, ram.write_bw});
    t.send = 2 * ram.access_latency + net.base_latency + B / net_eff;
    t.remote_write = t.write_local;

    uint32_t k = 0;
    if (strat == Strategy::DIST_XOR || strat == Strategy::NAM_XOR) {
        auto groups = form_groups([&] {
            std::vector<uint32_t> p(n);
            for (uint32_t i = 0; i < n; ++i) p[i] = i;
            return p;
        }(), knobs.group_size);
        k = static_cast<uint32_t>(groups[0].size());
        if (strat == Strategy::NAM_XOR && c.nam_count() == 0)
            throw StrategyUnsupported("NAM_XOR requires at least one NAM device");

        const double chunk = std::ceil(B / (k - 1));
        t.exchange = (k - 1) * (2 * ram.access_latency + net.base_latency +
                                chunk / net_eff);
        t.xor_compute = (k - 1) * chunk / c.spec().node_xor_throughput;
        t.parity_write = ram.access_latency + nvme.access_latency +
                         chunk / std::min(ram.read_bw, nvme.write_bw);
        t.expose = net.base_latency;

        if (strat == Strategy::NAM_XOR) {
            uint32_t n_groups = static_cast<uint32_t>(groups.size());
            uint32_t groups_per_nam = (n_groups + c.nam_count() - 1) / c.nam_count();
            uint32_t pulls = k * groups_per_nam;
            const NamSpec& nam = c.nam(0);
            double pull_eff = std::min({ram.read_bw, net.link_bw, nam.link_bw / pulls});
            double collect = ram.access_latency + net.base_latency + B / pull_eff;
            double fold = (k - 1) * B / nam.xor_throughput;
            t.redundancy_tail = collect + fold;
        }
    }

    switch (strat) {
        case Strategy::SINGLE:
            t.per_node_overhead = t.write_local;
            break;
        case Strategy::PARTNER:
            t.per_node_overhead = t.write_local + t.reread + t.send + t.remote_write;
            break;
        case Strategy::BUDDY:
            t.per_node_overhead = t.write_local + t.send + t.remote_write;
            break;
        case Strategy::DIST_XOR:
            t.per_node_overhead =
                t.write_local + t.reread + t.exchange + t.xor_compute + t.parity_write;
            break;
        case Strategy::NAM_XOR:
            t.per_node_overhead = t.write_local + t.expose;
            break;
    }
    return t;
}

// ---------------------------------------------------------------------------
// The checkpoint engine
// ---------------------------------------------------------------------------

struct NodePayload {
    uint32_t node = 0;
    uint64_t bytes = 0;
    std::shared_ptr<std::vector<uint8_t>> data;  // null for size-only payloads
};

struct WriteResult {
    uint64_t set_id = 0;
    std::vector<uint32_t> participants;
    std::vector<double> node_overhead;  // aligned with participants
    double epoch_overhead = 0;          // barrier-synchronized wall time
    double pending_wait = 0;            // time spent waiting for prior set/flush
    double valid_at = 0;                // sim time at which the set is VALID
};

struct FlushResult {
    double app_seconds = 0;     // time charged to the application timeline
    double complete_time = 0;   // sim time when all copies are on global storage
};

// Drives the checkpoint pipelines through the simulator, maintains the
// checkpoint database, and retires old cached sets. One engine instance per
// simulated application run.
class CheckpointEngine {
public:
    CheckpointEngine(SimEngine& sim, CkptKnobs knobs) : sim_(sim), knobs_(knobs) {}

    CkptDb& db() { return db_; }
    const CkptDb& db() const { return db_; }
    const CkptKnobs& knobs() const { return knobs_; }

    static std::string payload_key(uint64_t set_id, uint32_t node) {
        return "s" + std::to_string(set_id) + "/n" + std::to_string(node) + "/payload";
    }
    static std::string copy_key(uint64_t set_id, uint32_t node) {
        return "s" + std::to_string(set_id) + "/n" + std::to_string(node) + "/copy";
    }
    static std::string buddy_key(uint64_t set_id, uint32_t node) {
        return "s" + std::to_string(set_id) + "/n" + std::to_string(node) + "/buddy";
    }
    static std::string stripe_key(uint64_t set_id, uint64_t group, uint32_t stripe) {
        return "s" + std::to_string(set_id) + "/g" + std::to_string(group) + "/stripe" +
               std::to_string(stripe);
    }

    WriteResult write_checkpoint(uint64_t step, std::vector<NodePayload> payloads,
                                 Strategy strategy, bool run_to_valid = true) {
        if (payloads.empty()) throw EmptyInput("no payloads");
        std::sort(payloads.begin(), payloads.end(),
                  [](const NodePayload& a, const NodePayload& b) { return a.node < b.node; });
        std::vector<uint32_t> participants;
        for (const auto& p : payloads) {
            if (!sim_.cluster().valid_node(p.node)) throw UnknownNode(std::to_string(p.node));
            if (!sim_.node_alive(p.node))
                throw Error("node " + std::to_string(p.node) + " is dead");
            if (!participants.empty() && participants.back() == p.node)
                throw Error("duplicate payload for node " + std::to_string(p.node));
            if (p.data && p.data->size() != p.bytes)
                throw Error("payload data/bytes mismatch for node " + std::to_string(p.node));
            participants.push_back(p.node);
        }
        if (strategy == Strategy::NAM_XOR && sim_.nam_count() == 0)
            throw StrategyUnsupported("NAM_XOR requires at least one NAM device");

        WriteResult res;
        res.participants = participants;
        res.node_overhead.assign(participants.size(), 0.0);

        // A prior pending set or an unfinished asynchronous flush must settle
        // before the next epoch starts; the residual wait is charged here.
        double barrier = std::max(pending_valid_at_, pending_flush_complete_);
        if (barrier > sim_.now()) {
            res.pending_wait = barrier - sim_.now();
            sim_.run_until(barrier);
            for (auto& o : res.node_overhead) o += res.pending_wait;
        }

        const uint64_t set_id = db_.next_set_id();
        if (db_.has_pending()) throw Error("previous checkpoint set still pending");
        res.set_id = set_id;
        const double epoch_start = sim_.now();
        const std::string tag = "s" + std::to_string(set_id);

        // Payloads live in application RAM for the duration of the epoch.
        for (const auto& p : payloads) {
            sim_.store(p.node, TierKind::RAM).erase_prefix("s");  // previous epoch's buffer
            sim_.store(p.node, TierKind::RAM)
                .put(payload_key(set_id, p.node), make_object(set_id, p));
        }

        // Stage: every node writes its payload to the local cache tier.
        std::vector<Flow> local;
        for (const auto& p : payloads)
            local.push_back({{Endpoint::node_tier(p.node, TierKind::RAM),
                              Endpoint::node_tier(p.node, TierKind::NVME)},
                             p.bytes});
        run_stage(local, EventKind::WRITE_DONE, tag + " write_local", res);
        try {
            for (const auto& p : payloads)
                sim_.store(p.node, TierKind::NVME)
                    .put(payload_key(set_id, p.node), make_object(set_id, p));
        } catch (const TierFull&) {
            append_rows(set_id, step, strategy, payloads, {}, {}, SetState::INVALID);
            throw;
        }

        std::vector<MemberExtra> extra(payloads.size());
        switch (strategy) {
            case Strategy::SINGLE:
                break;
            case Strategy::PARTNER:
            case Strategy::BUDDY:
                run_partner_pipeline(set_id, payloads, strategy, res, extra);
                break;
            case Strategy::DIST_XOR:
                run_dist_xor_pipeline(set_id, payloads, res, extra);
                break;
            case Strategy::NAM_XOR:
                run_nam_xor_pipeline(set_id, payloads, res, extra);
                break;
        }

        append_rows(set_id, step, strategy, payloads, participants, extra, SetState::PENDING);
        res.epoch_overhead = sim_.now() - epoch_start + res.pending_wait;

        if (strategy == Strategy::NAM_XOR) {
            res.valid_at = pending_valid_at_;
            // Commit fires once every group's offload has landed its parity;
            // a collection aborted by a failure invalidates the set instead.
            auto offloads = pending_offloads_;
            sim_.schedule_at(res.valid_at, EventKind::NOTIFY, -1, 0,
                             "commit set=" + std::to_string(set_id),
                             [this, set_id, offloads](SimEngine&) {
                                 for (const auto& o : offloads) {
                                     if (!o->completed) {
                                         db_.mark_set_invalid(set_id);
                                         return;
                                     }
                                 }
                                 db_.commit(set_id);
                                 retire_old_sets(set_id);
                             });
            pending_offloads_.clear();
            if (run_to_valid) sim_.run_until(res.valid_at);
        } else {
            db_.commit(set_id);
            retire_old_sets(set_id);
            res.valid_at = sim_.now();
        }
        return res;
    }

    // Copies a VALID set's payloads from the node-local cache tier to the
    // global file system (one container file per node). SYNC charges the
    // application timeline; ASYNC overlaps with subsequent compute and only
    // its residual is charged if the next checkpoint arrives first.
    FlushResult flush_to_global(uint64_t set_id, FlushMode mode) {
        const CheckpointSet* set = db_.find(set_id);
        if (set == nullptr) throw FlushError("unknown set " + std::to_string(set_id));
        if (set->state != SetState::VALID)
            throw FlushError("set " + std::to_string(set_id) + " is " +
                             set_state_name(set->state) + ", need VALID");

        std::vector<uint32_t> nodes;
        std::vector<Flow> flows;
        uint64_t total = 0;
        for (const auto& [node, m] : set->members) {
            if (!sim_.node_alive(node)) continue;
            nodes.push_back(node);
            flows.push_back({{Endpoint::node_tier(node, TierKind::NVME), Endpoint::global_fs()},
                             m.bytes});
            total += m.bytes;
        }
        if (sim_.global_store().used() + total > sim_.global_store().capacity())
            throw FlushError("global storage full");

        std::vector<double> times = batch_transfer_times(sim_.cluster(), flows);
        const double fc = sim_.cluster().spec().global_fs_file_create_cost;
        double start = sim_.now();
        double end = start;
        for (size_t i = 0; i < nodes.size(); ++i) {
            uint32_t node = nodes[i];
            double done = start + fc + times[i];
            end = std::max(end, done);
            uint64_t bytes = flows[i].bytes;
            sim_.schedule_at(done, EventKind::WRITE_DONE, node, bytes,
                             "flush s" + std::to_string(set_id),
                             [this, set_id, node](SimEngine& eng) {
                                 if (!eng.node_alive(node)) return;  // crashed mid-flush
                                 const CheckpointSet* s = db_.find(set_id);
                                 if (s == nullptr) return;
                                 auto it = s->members.find(node);
                                 if (it == s->members.end()) return;
                                 const StoredObject* obj = eng.store(node, TierKind::NVME)
                                                               .get(payload_key(set_id, node));
                                 if (obj == nullptr) return;  // cache copy already retired
                                 eng.global_store().put(payload_key(set_id, node), *obj);
                                 eng.counters().global += obj->bytes;
                                 db_.mark_member_state(set_id, node, SetState::FLUSHED);
                             });
        }

        FlushResult fr;
        fr.complete_time = end;
        if (mode == FlushMode::SYNC) {
            sim_.run_until(end);
            fr.app_seconds = end - start;
        } else {
            pending_flush_complete_ = std::max(pending_flush_complete_, end);
        }
        return fr;
    }

    double pending_valid_at() const { return pending_valid_at_; }
    double pending_flush_complete() const { return pending_flush_complete_; }

private:
    struct MemberExtra {
        int64_t partner = -1;
        int64_t group = -1;
        std::string parity_loc = "-";
    };

    StoredObject make_object(uint64_t set_id, const NodePayload& p) const {
        if (p.data) return StoredObject::from_bytes(p.data);
        return StoredObject::sized(p.bytes, descriptor_crc(set_id, p.node, p.bytes));
    }

    static uint32_t descriptor_crc(uint64_t set_id, uint32_t node, uint64_t bytes) {
        std::string d = "s" + std::to_string(set_id) + "/n" + std::to_string(node) + "/" +
                        std::to_string(bytes);
        return crc32c(d.data(), d.size());
    }

    // Runs one barrier-synchronized stage; per-node stage times accumulate
    // into the per-node overheads, the barrier advances the sim clock.
    std::vector<double> run_stage(std::span<const Flow> flows, EventKind kind,
                                  const std::string& what, WriteResult& res) {
        std::vector<double> times = sim_.execute_batch(sim_.now(), flows, kind, what);
        for (size_t i = 0; i < times.size() && i < res.node_overhead.size(); ++i)
            res.node_overhead[i] += times[i];
        return times;
    }

    void run_partner_pipeline(uint64_t set_id, const std::vector<NodePayload>& payloads,
                              Strategy strategy, WriteResult& res,
                              std::vector<MemberExtra>& extra) {
        const size_t n = payloads.size();
        if (n < 2) throw StrategyUnsupported("partner redundancy needs at least 2 nodes");
        const std::string tag = "s" + std::to_string(set_id);

        if (strategy == Strategy::PARTNER) {
            std::vector<Flow> reread;
            for (const auto& p : payloads)
                reread.push_back({{Endpoint::node_tier(p.node, TierKind::NVME),
                                   Endpoint::node_tier(p.node, TierKind::RAM)},
                                  p.bytes});
            run_stage(reread, EventKind::TRANSFER_DONE, tag + " reread_local", res);
        }

        std::vector<Flow> sends;
        for (size_t i = 0; i < n; ++i) {
            uint32_t dst = payloads[partner_of(static_cast<uint32_t>(i),
                                               static_cast<uint32_t>(n), knobs_.partner_hop)]
                               .node;
            extra[i].partner = dst;
            sends.push_back({{Endpoint::node_tier(payloads[i].node, TierKind::RAM),
                              Endpoint::node_tier(dst, TierKind::RAM)},
                             payloads[i].bytes});
        }
        run_stage(sends, EventKind::TRANSFER_DONE, tag + " send_partner", res);

        std::vector<Flow> remote_writes;
        for (size_t i = 0; i < n; ++i)
            remote_writes.push_back(
                {{Endpoint::node_tier(static_cast<uint32_t>(extra[i].partner), TierKind::RAM),
                  Endpoint::node_tier(static_cast<uint32_t>(extra[i].partner), TierKind::NVME)},
                 payloads[i].bytes});
        run_stage(remote_writes, EventKind::WRITE_DONE, tag + " partner_write", res);

        for (size_t i = 0; i < n; ++i) {
            const NodePayload& p = payloads[i];
            uint32_t partner = static_cast<uint32_t>(extra[i].partner);
            StoredObject copy = make_object(set_id, p);
            std::string key;
            if (strategy == Strategy::BUDDY) {
                // The buddy copy is one aggregation container per node; its
                // framing is metadata and is not charged against capacity.
                key = buddy_key(set_id, p.node);
                if (p.data) {
                    uint64_t size = p.bytes;
                    ContainerWriter w(1, std::span<const uint64_t>(&size, 1));
                    w.write_chunk(0, *p.data);
                    auto bytes = std::make_shared<std::vector<uint8_t>>(w.take());
                    StoredObject obj;
                    obj.bytes = p.bytes;
                    obj.crc = copy.crc;
                    obj.data = std::move(bytes);
                    copy = std::move(obj);
                }
            } else {
                key = copy_key(set_id, p.node);
            }
            sim_.store(partner, TierKind::NVME).put(key, std::move(copy));
        }
    }

    void run_dist_xor_pipeline(uint64_t set_id, const std::vector<NodePayload>& payloads,
                               WriteResult& res, std::vector<MemberExtra>& extra) {
        const std::string tag = "s" + std::to_string(set_id);
        std::vector<uint32_t> participants;
        for (const auto& p : payloads) participants.push_back(p.node);
        auto groups = form_groups(participants, knobs_.group_size);

        std::map<uint32_t, size_t> index_of;
        for (size_t i = 0; i < payloads.size(); ++i) index_of[payloads[i].node] = i;

        std::vector<Flow> reread;
        for (const auto& p : payloads)
            reread.push_back({{Endpoint::node_tier(p.node, TierKind::NVME),
                               Endpoint::node_tier(p.node, TierKind::RAM)},
                              p.bytes});
        run_stage(reread, EventKind::TRANSFER_DONE, tag + " reread_local", res);

        // Plan each group's stripe layout.
        struct GroupPlan {
            std::vector<uint32_t> members;
            StripedGroupLayout layout;
        };
        std::vector<GroupPlan> plans;
        uint32_t max_k = 0;
        for (const auto& g : groups) {
            std::vector<uint64_t> sizes;
            for (uint32_t node : g) sizes.push_back(payloads[index_of[node]].bytes);
            plans.push_back({g, StripedGroupLayout::plan(static_cast<uint32_t>(g.size()), sizes)});
            max_k = std::max(max_k, static_cast<uint32_t>(g.size()));
        }

        // Chunk exchange: k-1 rounds, every member moving one chunk per round.
        for (uint32_t round = 1; round < max_k; ++round) {
            std::vector<Flow> flows;
            std::vector<size_t> flow_owner;
            for (const auto& plan : plans) {
                uint32_t k = plan.layout.k;
                if (round >= k) continue;
                for (uint32_t j = 0; j < k; ++j) {
                    uint32_t dst = plan.members[(j + round) % k];
                    flows.push_back({{Endpoint::node_tier(plan.members[j], TierKind::RAM),
                                      Endpoint::node_tier(dst, TierKind::RAM)},
                                     plan.layout.chunk_len});
                    flow_owner.push_back(index_of[plan.members[j]]);
                }
            }
            std::vector<double> times =
                sim_.execute_batch(sim_.now(), flows, EventKind::TRANSFER_DONE,
                                   tag + " xor_exchange r" + std::to_string(round));
            for (size_t f = 0; f < flows.size(); ++f)
                res.node_overhead[flow_owner[f]] += times[f];
        }

        // Host-side fold: each stripe holder accumulates k-1 contributions.
        double fold_max = 0;
        for (const auto& plan : plans) {
            double fold = (plan.layout.k - 1) * static_cast<double>(plan.layout.chunk_len) /
                          sim_.cluster().spec().node_xor_throughput;
            for (uint32_t node : plan.members) res.node_overhead[index_of[node]] += fold;
            fold_max = std::max(fold_max, fold);
        }
        sim_.run_until(sim_.now() + fold_max);

        // Parity chunk write-out, one stripe per member.
        std::vector<Flow> pwrites;
        std::vector<size_t> owner;
        for (const auto& plan : plans)
            for (uint32_t s = 0; s < plan.layout.k; ++s) {
                pwrites.push_back({{Endpoint::node_tier(plan.members[s], TierKind::RAM),
                                    Endpoint::node_tier(plan.members[s], TierKind::NVME)},
                                   plan.layout.chunk_len});
                owner.push_back(index_of[plan.members[s]]);
            }
        std::vector<double> ptimes = sim_.execute_batch(
            sim_.now(), pwrites, EventKind::WRITE_DONE, tag + " parity_write");
        for (size_t f = 0; f < pwrites.size(); ++f) res.node_overhead[owner[f]] += ptimes[f];

        for (size_t gi = 0; gi < plans.size(); ++gi) {
            const GroupPlan& plan = plans[gi];
            bool materialized = true;
            std::vector<std::span<const uint8_t>> blocks;
            for (uint32_t node : plan.members) {
                const NodePayload& p = payloads[index_of[node]];
                if (p.data)
                    blocks.push_back(*p.data);
                else
                    materialized = false;
            }
            std::vector<std::vector<uint8_t>> parity;
            if (materialized) parity = build_stripe_parity(plan.layout, blocks);
            for (uint32_t s = 0; s < plan.layout.k; ++s) {
                uint32_t holder = plan.members[s];
                StoredObject obj;
                if (materialized) {
                    obj = StoredObject::from_bytes(
                        std::make_shared<std::vector<uint8_t>>(std::move(parity[s])));
                } else {
                    obj = StoredObject::sized(plan.layout.chunk_len,
                                              descriptor_crc(set_id, holder, plan.layout.chunk_len));
                }
                std::string key = stripe_key(set_id, gi, s);
                sim_.store(holder, TierKind::NVME).put(key, std::move(obj));
                size_t idx = index_of[holder];
                extra[idx].group = static_cast<int64_t>(gi);
                extra[idx].parity_loc =
                    "nvme:" + std::to_string(holder) + ":" + key;
            }
        }
    }

    void run_nam_xor_pipeline(uint64_t set_id, const std::vector<NodePayload>& payloads,
                              WriteResult& res, std::vector<MemberExtra>& extra) {
        std::vector<uint32_t> participants;
        for (const auto& p : payloads) participants.push_back(p.node);
        auto groups = form_groups(participants, knobs_.group_size);
        std::map<uint32_t, size_t> index_of;
        for (size_t i = 0; i < payloads.size(); ++i) index_of[payloads[i].node] = i;

        pending_offloads_.clear();
        double valid_at = sim_.now();
        double expose = sim_.cluster().network().base_latency;

        for (size_t gi = 0; gi < groups.size(); ++gi) {
            const auto& g = groups[gi];
            uint64_t block_len = 0;
            for (uint32_t node : g) block_len = std::max(block_len, payloads[index_of[node]].bytes);

            uint32_t nam_id = static_cast<uint32_t>((set_id * groups.size() + gi) % sim_.nam_count());
            NamDevice& dev = sim_.nam(nam_id);

            for (uint32_t node : g) {
                const NodePayload& p = payloads[index_of[node]];
                std::shared_ptr<std::vector<uint8_t>> padded;
                if (p.data) {
                    padded = std::make_shared<std::vector<uint8_t>>(*p.data);
                    padded->resize(block_len, 0);
                }
                sim_.nam_register_source(nam_id, node, padded, block_len);
            }

            uint64_t offset = alloc_with_retirement(dev, nam_id, set_id, block_len);
            nam_allocs_[set_id].push_back({nam_id, offset});
            auto offload = sim_.nam_xor_offload(nam_id, g, block_len, offset);
            pending_offloads_.push_back(offload);
            valid_at = std::max(valid_at, offload->complete_time);

            std::string ploc = "nam:" + std::to_string(nam_id) + ":" + std::to_string(offset) +
                               ":" + std::to_string(block_len);
            for (uint32_t node : g) {
                size_t idx = index_of[node];
                extra[idx].group = static_cast<int64_t>(gi);
                extra[idx].parity_loc = ploc;
            }
        }

        sim_.run_until(sim_.now() + expose);
        for (auto& o : res.node_overhead) o += expose;
        pending_valid_at_ = valid_at;
    }

    // Parity space is scarce; when the device is full, regions of older sets
    // are reclaimed oldest-first (never the set being written) until the new
    // block fits.
    uint64_t alloc_with_retirement(NamDevice& dev, uint32_t nam_id, uint64_t current_set,
                                   uint64_t block_len) {
        while (true) {
            try {
                return dev.alloc(block_len);
            } catch (const CapacityError&) {
                bool freed = false;
                for (auto it = nam_allocs_.begin(); it != nam_allocs_.end() && !freed; ++it) {
                    if (it->first == current_set) continue;
                    auto& regions = it->second;
                    for (auto rit = regions.begin(); rit != regions.end(); ++rit) {
                        if (rit->first == nam_id) {
                            dev.free_region(rit->second);
                            regions.erase(rit);
                            freed = true;
                            break;
                        }
                    }
                }
                if (!freed) throw;
            }
        }
    }

    void append_rows(uint64_t set_id, uint64_t step, Strategy strategy,
                     const std::vector<NodePayload>& payloads,
                     const std::vector<uint32_t>& participants,
                     const std::vector<MemberExtra>& extra, SetState state) {
        for (size_t i = 0; i < payloads.size(); ++i) {
            const NodePayload& p = payloads[i];
            MemberRecord m;
            m.node = p.node;
            m.bytes = p.bytes;
            m.crc = p.data ? crc32c(*p.data) : descriptor_crc(set_id, p.node, p.bytes);
            m.loc = "nvme:" + std::to_string(p.node) + ":" + payload_key(set_id, p.node);
            m.state = state;
            if (!extra.empty()) {
                m.partner = extra[i].partner;
                m.group = extra[i].group;
                m.parity_loc = extra[i].parity_loc;
            }
            db_.append_member(set_id, step, strategy, m);
        }
        (void)participants;
    }

    // Keeps the newest `keep_sets` resolved sets in cache; older sets lose
    // their cache-tier objects and NAM parity regions (global copies stay).
    void retire_old_sets(uint64_t committed_set) {
        std::vector<uint64_t> resolved;
        for (const auto& [id, s] : db_.sets())
            if (id <= committed_set &&
                (s.state == SetState::VALID || s.state == SetState::FLUSHED))
                resolved.push_back(id);
        if (resolved.size() <= knobs_.keep_sets) return;
        for (size_t i = 0; i + knobs_.keep_sets < resolved.size(); ++i) {
            uint64_t id = resolved[i];
            if (!retired_sets_.insert(id).second) continue;
            const CheckpointSet* s = db_.find(id);
            std::string prefix = "s" + std::to_string(id) + "/";
            for (const auto& [node, m] : s->members) {
                if (!sim_.node_alive(node)) continue;
                sim_.store(node, TierKind::RAM).erase_prefix(prefix);
                sim_.store(node, TierKind::NVME).erase_prefix(prefix);
            }
            auto it = nam_allocs_.find(id);
            if (it != nam_allocs_.end()) {
                for (const auto& [nam_id, offset] : it->second)
                    sim_.nam(nam_id).free_region(offset);
                nam_allocs_.erase(it);
            }
        }
    }

    SimEngine& sim_;
    CkptKnobs knobs_;
    CkptDb db_;
    double pending_valid_at_ = 0;
    double pending_flush_complete_ = 0;
    std::vector<std::shared_ptr<SimEngine::OffloadResult>> pending_offloads_;
    std::map<uint64_t, std::vector<std::pair<uint32_t, uint64_t>>> nam_allocs_;
    std::set<uint64_t> retired_sets_;
};

}  // namespace deepckpt
