#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "deepckpt/aggregate.hpp"
#include "deepckpt/ckpt.hpp"
#include "deepckpt/cluster.hpp"
#include "deepckpt/errors.hpp"
#include "deepckpt/simnet.hpp"
#include "deepckpt/xor_code.hpp"

namespace deepckpt {

// ---------------------------------------------------------------------------
// Failure injection
// ---------------------------------------------------------------------------

enum class FailureKind { NODE_CRASH, PROCESS_TRANSIENT };

inline const char* failure_kind_name(FailureKind k) {
    return k == FailureKind::NODE_CRASH ? "crash" : "transient";
}

struct FailureEvent {
    double time = 0.0;
    FailureKind kind = FailureKind::NODE_CRASH;
    std::set<uint32_t> victims;
};

// NODE_CRASH makes the node's tiers unreachable; PROCESS_TRANSIENT clears RAM
// only, the local persistent tiers survive.
inline void inject_failure(SimEngine& sim, const FailureEvent& ev) {
    if (ev.victims.empty()) throw Error("failure event needs at least one victim");
    for (uint32_t v : ev.victims)
        if (!sim.cluster().valid_node(v)) throw UnknownNode(std::to_string(v));
    if (ev.time < sim.now()) throw Error("failure scheduled in the past");
    for (uint32_t v : ev.victims) {
        FailureKind kind = ev.kind;
        sim.schedule_at(ev.time, EventKind::FAILURE, v, 0, failure_kind_name(kind),
                        [v, kind](SimEngine& eng) {
                            if (kind == FailureKind::NODE_CRASH)
                                eng.kill_node(v);
                            else
                                eng.clear_node_ram(v);
                        });
    }
    sim.run_until(ev.time);
}

// ---------------------------------------------------------------------------
// Recovery planning
// ---------------------------------------------------------------------------

enum class RecoverySource { LOCAL, PARTNER_COPY, XOR_RECONSTRUCT, GLOBAL_FS };

inline const char* recovery_source_name(RecoverySource s) {
    switch (s) {
        case RecoverySource::LOCAL: return "LOCAL";
        case RecoverySource::PARTNER_COPY: return "PARTNER_COPY";
        case RecoverySource::XOR_RECONSTRUCT: return "XOR_RECONSTRUCT";
        case RecoverySource::GLOBAL_FS: return "GLOBAL_FS";
    }
    return "?";
}

struct VictimPlan {
    uint32_t node = 0;
    RecoverySource source = RecoverySource::LOCAL;
    uint32_t home = 0;  // node that will hold the restored payload
    double est_cost = 0.0;
};

struct RecoveryPlan {
    uint64_t source_set = 0;
    bool feasible = false;
    std::string reason;
    double estimated_cost = 0.0;
    std::map<uint32_t, VictimPlan> victims;
};

namespace detail {

// Location of a set's buddy/partner copy object for a member.
inline std::string redundancy_copy_key(const CheckpointSet& set, uint32_t node) {
    return set.strategy == Strategy::BUDDY ? CheckpointEngine::buddy_key(set.set_id, node)
                                           : CheckpointEngine::copy_key(set.set_id, node);
}

struct ParityRef {
    bool on_nam = false;
    uint32_t nam_id = 0;
    uint64_t offset = 0;
    uint64_t len = 0;
};

inline std::optional<ParityRef> parse_nam_parity(const std::string& parity_loc) {
    if (parity_loc.rfind("nam:", 0) != 0) return std::nullopt;
    ParityRef r;
    r.on_nam = true;
    size_t p1 = parity_loc.find(':', 4);
    size_t p2 = parity_loc.find(':', p1 + 1);
    if (p1 == std::string::npos || p2 == std::string::npos) return std::nullopt;
    r.nam_id = static_cast<uint32_t>(std::stoul(parity_loc.substr(4, p1 - 4)));
    r.offset = std::stoull(parity_loc.substr(p1 + 1, p2 - p1 - 1));
    r.len = std::stoull(parity_loc.substr(p2 + 1));
    return r;
}

inline std::vector<uint32_t> group_members(const CheckpointSet& set, int64_t group) {
    std::vector<uint32_t> out;
    for (const auto& [node, m] : set.members)
        if (m.group == group) out.push_back(node);
    return out;
}

}  // namespace detail

// Spare-first re-homing: a crashed member's payload lands on a configured
// spare if one is alive, otherwise on the surviving node with the most free
// cache space (lowest id breaks ties).
inline uint32_t pick_home(const SimEngine& sim, uint32_t victim, bool victim_alive,
                          const std::vector<uint32_t>& members,
                          const std::vector<uint32_t>& spares) {
    if (victim_alive) return victim;
    for (uint32_t s : spares)
        if (sim.node_alive(s)) return s;
    uint32_t best = UINT32_MAX;
    uint64_t best_free = 0;
    for (uint32_t n : members) {
        if (!sim.node_alive(n)) continue;
        const TierStore& st = sim.store(n, TierKind::NVME);
        uint64_t free = st.capacity() - st.used();
        if (best == UINT32_MAX || free > best_free) {
            best = n;
            best_free = free;
        }
    }
    if (best == UINT32_MAX) throw NoSurvivors("no node left to re-home onto");
    return best;
}

// Selects the newest set whose every victim payload is recoverable, choosing
// the cheapest source per victim. Infeasibility is reported in-band.
inline RecoveryPlan plan_recovery(const CkptDb& db, const SimEngine& sim,
                                  const std::set<uint32_t>& failed,
                                  const std::vector<uint32_t>& spares = {}) {
    RecoveryPlan plan;
    if (db.sets().empty()) {
        plan.reason = "checkpoint database is empty";
        return plan;
    }

    const ClusterState& cluster = sim.cluster();
    auto cost_local = [&](uint64_t bytes, uint32_t node) {
        return transfer_time(cluster, bytes,
                             {Endpoint::node_tier(node, TierKind::NVME),
                              Endpoint::node_tier(node, TierKind::RAM)});
    };

    for (auto it = db.sets().rbegin(); it != db.sets().rend(); ++it) {
        const CheckpointSet& set = it->second;
        if (set.state != SetState::VALID && set.state != SetState::FLUSHED) continue;

        RecoveryPlan candidate;
        candidate.source_set = set.set_id;
        bool all_covered = true;

        for (uint32_t v : failed) {
            auto mit = set.members.find(v);
            if (mit == set.members.end()) continue;  // not a member: nothing to restore
            const MemberRecord& m = mit->second;
            bool victim_alive = sim.node_alive(v);

            std::optional<VictimPlan> best;
            auto consider = [&](RecoverySource src, double cost) {
                if (!best || cost < best->est_cost) {
                    VictimPlan vp;
                    vp.node = v;
                    vp.source = src;
                    vp.est_cost = cost;
                    best = vp;
                }
            };

            // LOCAL: the victim's own cache copy survived a transient failure.
            if (victim_alive && sim.store(v, TierKind::NVME).get(
                                    CheckpointEngine::payload_key(set.set_id, v)) != nullptr)
                consider(RecoverySource::LOCAL, cost_local(m.bytes, v));

            // PARTNER_COPY: the designated peer holds a full copy.
            if (m.partner >= 0) {
                uint32_t partner = static_cast<uint32_t>(m.partner);
                if (sim.node_alive(partner) &&
                    sim.store(partner, TierKind::NVME)
                            .get(detail::redundancy_copy_key(set, v)) != nullptr) {
                    double c = cost_local(m.bytes, partner) +
                               transfer_time(cluster, m.bytes,
                                             {Endpoint::node_tier(partner, TierKind::RAM),
                                              Endpoint::node_tier(partner, TierKind::RAM)});
                    consider(RecoverySource::PARTNER_COPY, c);
                }
            }

            // XOR_RECONSTRUCT: single erasure per group, all pieces reachable.
            if (m.group >= 0) {
                std::vector<uint32_t> members = detail::group_members(set, m.group);
                uint32_t k = static_cast<uint32_t>(members.size());
                uint32_t dead_in_group = 0;
                for (uint32_t node : members)
                    if (failed.count(node) && !sim.node_alive(node)) ++dead_in_group;
                bool lost_in_group = failed.count(v) != 0;
                uint64_t block_len = 0;
                for (uint32_t node : members)
                    block_len = std::max(block_len, set.members.at(node).bytes);

                bool pieces_ok = lost_in_group && dead_in_group <= 1;
                auto nam_ref = detail::parse_nam_parity(m.parity_loc);
                if (nam_ref) {
                    // the parity region may have been reclaimed for a newer set
                    if (nam_ref->nam_id >= sim.nam_count() ||
                        sim.nam(nam_ref->nam_id).allocations().count(nam_ref->offset) == 0)
                        pieces_ok = false;
                }
                for (uint32_t node : members) {
                    if (node == v) continue;
                    if (!sim.node_alive(node) ||
                        sim.store(node, TierKind::NVME)
                                .get(CheckpointEngine::payload_key(set.set_id, node)) == nullptr) {
                        pieces_ok = false;
                        break;
                    }
                    if (!nam_ref) {
                        // surviving stripe holders must still have their chunk
                        uint32_t pos = static_cast<uint32_t>(
                            std::find(members.begin(), members.end(), node) - members.begin());
                        if (sim.store(node, TierKind::NVME)
                                .get(CheckpointEngine::stripe_key(set.set_id, m.group, pos)) ==
                            nullptr) {
                            pieces_ok = false;
                            break;
                        }
                    }
                }
                if (pieces_ok && k >= 2) {
                    double gather = (k - 1) * static_cast<double>(block_len) / cluster.network().link_bw +
                                    static_cast<double>(block_len) / cluster.tier(TierKind::NVME).read_bw;
                    double fold = (k - 1) * static_cast<double>(block_len) /
                                  cluster.spec().node_xor_throughput;
                    consider(RecoverySource::XOR_RECONSTRUCT, gather + fold);
                }
            }

            // GLOBAL_FS: a flushed copy on permanent storage.
            if (sim.global_store().get(CheckpointEngine::payload_key(set.set_id, v)) != nullptr) {
                double c = transfer_time(cluster, m.bytes,
                                         {Endpoint::global_fs(),
                                          Endpoint::node_tier(v % cluster.node_count(),
                                                              TierKind::RAM)});
                consider(RecoverySource::GLOBAL_FS, c);
            }

            if (!best) {
                all_covered = false;
                break;
            }
            best->home = pick_home(sim, v, victim_alive, set.member_nodes(), spares);
            candidate.victims[v] = *best;
            candidate.estimated_cost = std::max(candidate.estimated_cost, best->est_cost);
        }

        if (all_covered) {
            candidate.feasible = true;
            return candidate;
        }
    }

    plan.reason = "no checkpoint set can supply every victim's payload";
    return plan;
}

// ---------------------------------------------------------------------------
// XOR reconstruction (full-block parity)
// ---------------------------------------------------------------------------

// Rebuilds the one missing member block of a k-member group from the k-1
// surviving padded payloads and the group parity, trimming to the recorded
// original length and verifying the checksum.
inline std::vector<uint8_t> reconstruct_xor(uint32_t group_size,
                                            const std::vector<std::vector<uint8_t>>& surviving,
                                            const std::vector<uint8_t>& parity,
                                            uint64_t original_len, uint32_t expected_crc) {
    if (surviving.size() + 1 != group_size)
        throw TooManyErasures(std::to_string(group_size - surviving.size()) +
                              " members missing from a single-parity group of " +
                              std::to_string(group_size));
    std::vector<uint8_t> out = parity;
    for (const auto& b : surviving) xor_range_into(out, b, 0);
    if (original_len > out.size())
        throw CrcMismatch("reconstructed block shorter than recorded payload");
    for (size_t i = original_len; i < out.size(); ++i)
        if (out[i] != 0) throw CrcMismatch("nonzero padding after reconstruction");
    out.resize(original_len);
    if (crc32c(out) != expected_crc)
        throw CrcMismatch("reconstructed payload does not match recorded checksum");
    return out;
}

// ---------------------------------------------------------------------------
// Restart
// ---------------------------------------------------------------------------

struct RestartReport {
    uint64_t source_set = 0;
    uint64_t restored_step = 0;
    double recovery_seconds = 0.0;
    uint64_t bytes_moved = 0;  // traffic needed to restore victim payloads
    std::map<uint32_t, uint32_t> homes;  // victim -> node now holding its payload
};

// Executes a feasible plan: restores every victim payload (verified against
// the recorded checksum when materialized) onto its home node's RAM and cache
// tier, and reports where the application resumes.
inline RestartReport restart(SimEngine& sim, CheckpointEngine& engine,
                             const RecoveryPlan& plan) {
    if (!plan.feasible) throw PlanStale("plan is infeasible");
    const CheckpointSet* set = engine.db().find(plan.source_set);
    if (set == nullptr) throw PlanStale("source set vanished");

    RestartReport rep;
    rep.source_set = plan.source_set;
    rep.restored_step = set->step;
    const double start = sim.now();
    const ClusterState& cluster = sim.cluster();

    for (const auto& [v, vp] : plan.victims) {
        const MemberRecord& m = set->members.at(v);
        const std::string pkey = CheckpointEngine::payload_key(set->set_id, v);
        StoredObject restored;

        switch (vp.source) {
            case RecoverySource::LOCAL: {
                if (!sim.node_alive(v)) throw PlanStale("victim no longer reachable");
                const StoredObject* obj = sim.store(v, TierKind::NVME).get(pkey);
                if (obj == nullptr) throw PlanStale("local copy vanished");
                Flow f{{Endpoint::node_tier(v, TierKind::NVME),
                        Endpoint::node_tier(v, TierKind::RAM)},
                       obj->bytes};
                sim.execute_batch(sim.now(), std::span<const Flow>(&f, 1),
                                  EventKind::TRANSFER_DONE, "restore local n" + std::to_string(v));
                rep.bytes_moved += obj->bytes;
                restored = *obj;
                break;
            }
            case RecoverySource::PARTNER_COPY: {
                uint32_t partner = static_cast<uint32_t>(m.partner);
                if (!sim.node_alive(partner)) throw PlanStale("partner no longer reachable");
                const StoredObject* obj =
                    sim.store(partner, TierKind::NVME).get(detail::redundancy_copy_key(*set, v));
                if (obj == nullptr) throw PlanStale("partner copy vanished");
                std::vector<Flow> flows = {
                    {{Endpoint::node_tier(partner, TierKind::NVME),
                      Endpoint::node_tier(partner, TierKind::RAM)},
                     m.bytes},
                };
                sim.execute_batch(sim.now(), flows, EventKind::TRANSFER_DONE,
                                  "restore copy-read n" + std::to_string(v));
                if (partner != vp.home) {
                    Flow f{{Endpoint::node_tier(partner, TierKind::RAM),
                            Endpoint::node_tier(vp.home, TierKind::RAM)},
                           m.bytes};
                    sim.execute_batch(sim.now(), std::span<const Flow>(&f, 1),
                                      EventKind::TRANSFER_DONE,
                                      "restore copy-move n" + std::to_string(v));
                }
                rep.bytes_moved += 2 * m.bytes;
                if (obj->materialized()) {
                    std::vector<uint8_t> payload;
                    if (set->strategy == Strategy::BUDDY) {
                        auto reader = ContainerReader::from_bytes(*obj->data);
                        payload = reader.read_chunk(0);
                    } else {
                        payload = *obj->data;
                    }
                    if (crc32c(payload) != m.crc)
                        throw CrcMismatch("partner copy fails checksum for node " +
                                          std::to_string(v));
                    restored = StoredObject::from_bytes(
                        std::make_shared<std::vector<uint8_t>>(std::move(payload)));
                } else {
                    restored = StoredObject::sized(m.bytes, m.crc);
                }
                break;
            }
            case RecoverySource::XOR_RECONSTRUCT: {
                std::vector<uint32_t> members = detail::group_members(*set, m.group);
                uint32_t k = static_cast<uint32_t>(members.size());
                uint64_t block_len = 0;
                for (uint32_t node : members)
                    block_len = std::max(block_len, set->members.at(node).bytes);
                uint32_t victim_pos = static_cast<uint32_t>(
                    std::find(members.begin(), members.end(), v) - members.begin());

                // Survivors re-read their payloads and ship them to the home node.
                std::vector<Flow> rereads, ships;
                for (uint32_t node : members) {
                    if (node == v) continue;
                    if (!sim.node_alive(node)) throw PlanStale("group member lost");
                    rereads.push_back({{Endpoint::node_tier(node, TierKind::NVME),
                                        Endpoint::node_tier(node, TierKind::RAM)},
                                       block_len});
                    ships.push_back({{Endpoint::node_tier(node, TierKind::RAM),
                                      Endpoint::node_tier(vp.home, TierKind::RAM)},
                                     block_len});
                }
                sim.execute_batch(sim.now(), rereads, EventKind::TRANSFER_DONE,
                                  "restore xor-read n" + std::to_string(v));
                sim.execute_batch(sim.now(), ships, EventKind::TRANSFER_DONE,
                                  "restore xor-gather n" + std::to_string(v));
                rep.bytes_moved += (k - 1) * block_len;

                auto nam_ref = detail::parse_nam_parity(m.parity_loc);
                std::vector<std::vector<uint8_t>> survivor_payloads;
                bool materialized = true;
                for (uint32_t node : members) {
                    if (node == v) continue;
                    const StoredObject* obj =
                        sim.store(node, TierKind::NVME)
                            .get(CheckpointEngine::payload_key(set->set_id, node));
                    if (obj == nullptr) throw PlanStale("survivor payload vanished");
                    if (obj->materialized()) {
                        survivor_payloads.push_back(*obj->data);
                        survivor_payloads.back().resize(block_len, 0);
                    } else {
                        materialized = false;
                    }
                }

                if (nam_ref) {
                    // Parity pulled from the NAM region.
                    sim.nam(nam_ref->nam_id).register_client(vp.home);
                    auto [parity, note] =
                        sim.nam_get(nam_ref->nam_id, vp.home, nam_ref->offset, nam_ref->len);
                    rep.bytes_moved += nam_ref->len;
                    double fold = (k - 1) * static_cast<double>(block_len) /
                                  cluster.spec().node_xor_throughput;
                    sim.run_until(sim.now() + fold);
                    if (materialized) {
                        std::vector<uint8_t> payload = reconstruct_xor(
                            k, survivor_payloads, parity, m.bytes, m.crc);
                        restored = StoredObject::from_bytes(
                            std::make_shared<std::vector<uint8_t>>(std::move(payload)));
                    } else {
                        restored = StoredObject::sized(m.bytes, m.crc);
                    }
                } else {
                    // Striped parity: surviving stripe holders ship their chunks.
                    StripedGroupLayout layout;
                    layout.k = k;
                    layout.block_len = block_len;
                    layout.chunk_len = (block_len + (k - 1) - 1) / (k - 1);
                    std::vector<Flow> stripe_ships;
                    std::vector<std::vector<uint8_t>> stripes(k);
                    for (uint32_t pos = 0; pos < k; ++pos) {
                        if (pos == victim_pos) continue;
                        uint32_t holder = members[pos];
                        const StoredObject* sobj =
                            sim.store(holder, TierKind::NVME)
                                .get(CheckpointEngine::stripe_key(set->set_id, m.group, pos));
                        if (sobj == nullptr) throw PlanStale("parity stripe vanished");
                        stripe_ships.push_back({{Endpoint::node_tier(holder, TierKind::RAM),
                                                 Endpoint::node_tier(vp.home, TierKind::RAM)},
                                                layout.chunk_len});
                        if (sobj->materialized())
                            stripes[pos] = *sobj->data;
                        else
                            materialized = false;
                    }
                    sim.execute_batch(sim.now(), stripe_ships, EventKind::TRANSFER_DONE,
                                      "restore stripe-gather n" + std::to_string(v));
                    rep.bytes_moved += (k - 1) * layout.chunk_len;
                    double fold = (k - 1) * static_cast<double>(layout.chunk_len) /
                                  cluster.spec().node_xor_throughput;
                    sim.run_until(sim.now() + fold);
                    if (materialized) {
                        std::vector<std::span<const uint8_t>> blocks(k), parity(k);
                        size_t si = 0;
                        for (uint32_t pos = 0; pos < k; ++pos) {
                            if (pos == victim_pos) continue;
                            blocks[pos] = survivor_payloads[si++];
                            parity[pos] = stripes[pos];
                        }
                        std::vector<uint8_t> padded = reconstruct_striped_member(
                            layout, victim_pos, blocks, parity);
                        padded.resize(m.bytes);
                        if (crc32c(padded) != m.crc)
                            throw CrcMismatch("striped reconstruction fails checksum for node " +
                                              std::to_string(v));
                        restored = StoredObject::from_bytes(
                            std::make_shared<std::vector<uint8_t>>(std::move(padded)));
                    } else {
                        restored = StoredObject::sized(m.bytes, m.crc);
                    }
                }
                break;
            }
            case RecoverySource::GLOBAL_FS: {
                const StoredObject* obj = sim.global_store().get(pkey);
                if (obj == nullptr) throw PlanStale("global copy vanished");
                Flow f{{Endpoint::global_fs(), Endpoint::node_tier(vp.home, TierKind::RAM)},
                       obj->bytes};
                sim.execute_batch(sim.now(), std::span<const Flow>(&f, 1),
                                  EventKind::TRANSFER_DONE,
                                  "restore global n" + std::to_string(v));
                rep.bytes_moved += obj->bytes;
                if (obj->materialized() && crc32c(*obj->data) != m.crc)
                    throw CrcMismatch("global copy fails checksum for node " + std::to_string(v));
                restored = *obj;
                break;
            }
        }

        // The restored payload lands in the home node's RAM and is re-seated
        // on its cache tier so a later transient failure stays recoverable.
        sim.store(vp.home, TierKind::RAM).put(pkey, restored);
        if (vp.source != RecoverySource::LOCAL) {
            Flow f{{Endpoint::node_tier(vp.home, TierKind::RAM),
                    Endpoint::node_tier(vp.home, TierKind::NVME)},
                   restored.bytes};
            sim.execute_batch(sim.now(), std::span<const Flow>(&f, 1), EventKind::WRITE_DONE,
                              "restore reseat n" + std::to_string(v));
            sim.store(vp.home, TierKind::NVME).put(pkey, restored);
        }
        rep.homes[v] = vp.home;
    }

    rep.recovery_seconds = sim.now() - start;
    return rep;
}

}  // namespace deepckpt
