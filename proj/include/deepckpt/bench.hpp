#pragma once

#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "deepckpt/ckpt.hpp"
#include "deepckpt/cluster.hpp"
#include "deepckpt/config.hpp"
#include "deepckpt/recovery.hpp"
#include "deepckpt/simnet.hpp"
#include "deepckpt/taskres.hpp"

namespace deepckpt {

// ---------------------------------------------------------------------------
// Scenario description
// ---------------------------------------------------------------------------

struct Workload {
    uint64_t iterations = 100;
    double seconds_per_iteration = 0.0;  // 0 = calibrate to the 8% overhead target
    uint64_t bytes_per_checkpoint = 0;   // per node
    uint64_t checkpoint_interval = 10;
};

struct Scenario {
    std::string name = "custom";
    uint32_t nodes = 16;
    bool on_booster = false;  // participants taken from the booster partition
    Strategy strategy = Strategy::PARTNER;
    Workload workload;
    std::optional<uint64_t> fail_at;  // iteration during which the failure strikes
    FailureKind fail_kind = FailureKind::NODE_CRASH;
    std::optional<FlushMode> flush;
    uint32_t repetitions = 1;
    uint64_t seed = 1;
    uint64_t materialize_limit = 64ull << 20;
    CkptKnobs knobs;

    void validate(const ClusterState& cluster) const {
        if (nodes == 0) throw ScenarioError("nodes must be >= 1");
        uint32_t pool = on_booster ? cluster.booster_nodes() : cluster.node_count();
        if (nodes > pool)
            throw ScenarioError("scenario wants " + std::to_string(nodes) + " nodes, machine has " +
                                std::to_string(pool));
        if (workload.iterations == 0) throw ScenarioError("iterations must be >= 1");
        if (workload.checkpoint_interval == 0) throw ScenarioError("interval must be >= 1");
        if (workload.bytes_per_checkpoint == 0) throw ScenarioError("bytes per checkpoint must be > 0");
        if (fail_at && (*fail_at == 0 || *fail_at > workload.iterations))
            throw ScenarioError("fail-at outside the iteration range");
        if (workload.seconds_per_iteration < 0) throw ScenarioError("negative iteration time");
    }
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricsRow {
    std::string scenario;
    std::string strategy;
    uint32_t nodes = 0;
    uint32_t run = 0;
    double total_s = 0;
    double ckpt_overhead_s = 0;
    double recovery_s = 0;
    uint64_t bytes_local = 0;
    uint64_t bytes_remote = 0;
    uint64_t bytes_global = 0;
    uint64_t bytes_nam = 0;
    double savings_pct = 0;
};

struct MetricsTable {
    std::vector<MetricsRow> rows;

    std::string to_csv() const {
        std::string out =
            "scenario,strategy,nodes,run,total_s,ckpt_overhead_s,recovery_s,"
            "bytes_local,bytes_remote,bytes_global,bytes_nam,savings_pct\n";
        char buf[160];
        for (const auto& r : rows) {
            std::snprintf(buf, sizeof(buf), "%u,%u,%.6f,%.6f,%.6f,", r.nodes, r.run, r.total_s,
                          r.ckpt_overhead_s, r.recovery_s);
            out += r.scenario + ',' + r.strategy + ',' + buf;
            std::snprintf(buf, sizeof(buf), "%llu,%llu,%llu,%llu,%.3f\n",
                          static_cast<unsigned long long>(r.bytes_local),
                          static_cast<unsigned long long>(r.bytes_remote),
                          static_cast<unsigned long long>(r.bytes_global),
                          static_cast<unsigned long long>(r.bytes_nam), r.savings_pct);
            out += buf;
        }
        return out;
    }

    const MetricsRow* find(const std::string& scenario) const {
        for (const auto& r : rows)
            if (r.scenario == scenario) return &r;
        return nullptr;
    }
};

struct ScenarioResult {
    MetricsTable metrics;
    std::string event_log_csv;  // per-run sections, deterministic
    bool infeasible_recovery = false;
};

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

struct CalibrationReport {
    std::string target;
    double solved_value = 0;  // seconds per iteration for overhead targets
    double achieved_pct = 0;
    bool in_band = false;
    std::string overrides;  // config-file text
    std::string message;
};

// Iteration time that makes `n_cp` checkpoints cost `pct` percent of the run.
inline double solve_iteration_time(double t_cp, uint64_t iterations, uint64_t interval,
                                   double pct) {
    if (pct <= 0.0) throw Infeasible("checkpoint overhead cannot reach " + std::to_string(pct) +
                                     "% while a checkpoint costs positive time");
    double n_cp = static_cast<double>(iterations / interval);
    if (n_cp == 0) throw Infeasible("no checkpoints in the workload");
    return n_cp * t_cp * 100.0 / (pct * static_cast<double>(iterations));
}

inline CalibrationReport calibrate(const std::string& target, const ClusterState& cluster,
                                   const CkptKnobs& knobs = {}) {
    CalibrationReport rep;
    rep.target = target;

    auto parse_pct = [](const std::string& s) {
        std::string v = s;
        if (!v.empty() && v.back() == '%') v.pop_back();
        return std::stod(v);
    };

    if (target.rfind("scr-overhead=", 0) == 0) {
        double pct = parse_pct(target.substr(13));
        StrategyTiming t = price_strategy(cluster, Strategy::PARTNER, 16, 8000000000ull, knobs);
        double t_iter = solve_iteration_time(t.per_node_overhead, 100, 10, pct);
        rep.solved_value = t_iter;
        rep.achieved_pct = 10.0 * t.per_node_overhead / (100.0 * t_iter) * 100.0;
        rep.in_band = std::abs(rep.achieved_pct - pct) < 1e-9;
        char buf[256];
        std::snprintf(buf, sizeof(buf), "workload.seconds_per_iteration = %.9f\n", t_iter);
        rep.overrides = buf;
        std::snprintf(buf, sizeof(buf),
                      "checkpoint epoch %.6f s, iteration time %.6f s gives %.4f%% overhead",
                      t.per_node_overhead, t_iter, rep.achieved_pct);
        rep.message = buf;
        return rep;
    }

    if (target.rfind("nam-xor-saving", 0) == 0) {
        StrategyTiming dist = price_strategy(cluster, Strategy::DIST_XOR, 8, 2000000000ull, knobs);
        StrategyTiming nam = price_strategy(cluster, Strategy::NAM_XOR, 8, 2000000000ull, knobs);
        rep.achieved_pct =
            (dist.per_node_overhead - nam.per_node_overhead) / dist.per_node_overhead * 100.0;
        rep.in_band = rep.achieved_pct >= 50.0 && rep.achieved_pct <= 65.0;
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "NAM XOR saves %.2f%% of the XOR checkpoint time (%s the 50-65%% band)",
                      rep.achieved_pct, rep.in_band ? "inside" : "outside");
        rep.message = buf;
        return rep;
    }

    throw Infeasible("unknown calibration target: " + target);
}

// ---------------------------------------------------------------------------
// The workload loop
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<uint32_t> pick_participants(const ClusterState& c, const Scenario& s) {
    std::vector<uint32_t> out;
    uint32_t first = s.on_booster ? c.cluster_nodes() : 0;
    for (uint32_t i = 0; i < s.nodes; ++i) out.push_back(first + i);
    return out;
}

inline std::vector<uint32_t> pick_spares(const ClusterState& c,
                                         const std::vector<uint32_t>& participants) {
    std::vector<uint32_t> out;
    std::set<uint32_t> used(participants.begin(), participants.end());
    for (uint32_t n = 0; n < c.node_count(); ++n)
        if (!used.count(n)) out.push_back(n);
    return out;
}

inline std::shared_ptr<std::vector<uint8_t>> seeded_payload(uint64_t bytes, uint64_t seed) {
    auto out = std::make_shared<std::vector<uint8_t>>(bytes);
    std::mt19937_64 rng(seed);
    size_t i = 0;
    for (; i + 8 <= out->size(); i += 8) {
        uint64_t v = rng();
        __builtin_memcpy(out->data() + i, &v, 8);
    }
    for (; i < out->size(); ++i) (*out)[i] = static_cast<uint8_t>(rng());
    return out;
}

}  // namespace detail

struct WorkloadRun {
    double total_s = 0;
    double ckpt_overhead_s = 0;
    double recovery_s = 0;
    SimEngine::ByteCounters bytes;
    bool infeasible = false;
    uint64_t checkpoints_written = 0;
    uint64_t failures_recovered = 0;
    std::string event_log_csv;
};

// One simulated application run: compute phases, checkpoint cadence, an
// optional injected failure with recovery, optional flushes. Deterministic.
inline WorkloadRun run_workload(const ClusterState& cluster, const Scenario& s,
                                bool with_checkpoints, bool with_failure) {
    SimEngine sim(cluster);
    CheckpointEngine engine(sim, s.knobs);

    std::vector<uint32_t> participants = detail::pick_participants(cluster, s);
    std::vector<uint32_t> spares = detail::pick_spares(cluster, participants);
    const Workload& w = s.workload;
    const bool materialize = w.bytes_per_checkpoint <= s.materialize_limit;

    WorkloadRun run;
    bool failure_pending = with_failure && s.fail_at.has_value();

    uint64_t step = 1;
    while (step <= w.iterations) {
        if (failure_pending && step == *s.fail_at) {
            // the failure strikes mid-iteration: the partial work is lost
            sim.run_until(sim.now() + 0.5 * w.seconds_per_iteration);
            uint32_t victim = participants.front();
            inject_failure(sim, {sim.now(), s.fail_kind, {victim}});
            failure_pending = false;

            if (!with_checkpoints) {
                // no checkpoints: restart from scratch and run through
                if (s.fail_kind == FailureKind::NODE_CRASH) {
                    if (spares.empty()) throw ScenarioError("no spare to continue on");
                    participants.front() = spares.front();
                    spares.erase(spares.begin());
                    std::sort(participants.begin(), participants.end());
                }
                step = 1;
                continue;
            }

            RecoveryPlan plan = plan_recovery(engine.db(), sim, {victim}, spares);
            if (!plan.feasible) {
                run.infeasible = true;
                break;
            }
            RestartReport rep = restart(sim, engine, plan);
            run.recovery_s += rep.recovery_seconds;
            ++run.failures_recovered;

            if (s.fail_kind == FailureKind::NODE_CRASH) {
                uint32_t home = rep.homes.at(victim);
                for (auto& p : participants)
                    if (p == victim) p = home;
                std::sort(participants.begin(), participants.end());
                spares.erase(std::remove(spares.begin(), spares.end(), home), spares.end());
            }
            step = rep.restored_step + 1;
            continue;
        }

        sim.run_until(sim.now() + w.seconds_per_iteration);

        if (with_checkpoints && need_checkpoint(step, w.checkpoint_interval)) {
            std::vector<NodePayload> payloads;
            for (uint32_t node : participants) {
                NodePayload p;
                p.node = node;
                p.bytes = w.bytes_per_checkpoint;
                if (materialize)
                    p.data = detail::seeded_payload(
                        w.bytes_per_checkpoint,
                        s.seed * 1000003 + step * 131 + node);
                payloads.push_back(std::move(p));
            }
            WriteResult res =
                engine.write_checkpoint(step, std::move(payloads), s.strategy,
                                        /*run_to_valid=*/false);
            run.ckpt_overhead_s += res.epoch_overhead;
            ++run.checkpoints_written;
            if (s.flush) {
                FlushResult fr = engine.flush_to_global(res.set_id, *s.flush);
                run.ckpt_overhead_s += fr.app_seconds;
            }
        }
        ++step;
    }

    // let trailing asynchronous work (offloads, flushes) settle in the log
    sim.run_all();
    run.total_s = sim.now();
    run.bytes = sim.counters();
    run.event_log_csv = sim.export_log_csv();
    return run;
}

// ---------------------------------------------------------------------------
// Named scenarios
// ---------------------------------------------------------------------------

inline Scenario scenario_xpic_scr() {
    Scenario s;
    s.name = "xpic-scr";
    s.nodes = 16;
    s.strategy = Strategy::PARTNER;
    s.workload.iterations = 100;
    s.workload.checkpoint_interval = 10;
    s.workload.bytes_per_checkpoint = 8000000000ull;
    s.workload.seconds_per_iteration = 0.0;  // calibrated at run time
    s.fail_at = 60;
    s.fail_kind = FailureKind::NODE_CRASH;
    return s;
}

inline Scenario scenario_xor_vs_nam() {
    Scenario s;
    s.name = "xor-vs-nam";
    s.nodes = 8;
    s.on_booster = true;
    s.strategy = Strategy::DIST_XOR;
    s.workload.iterations = 100;
    s.workload.checkpoint_interval = 10;
    s.workload.bytes_per_checkpoint = 2000000000ull;
    s.workload.seconds_per_iteration = 1.0;
    s.knobs.group_size = 8;
    return s;
}

inline Scenario scenario_weak_scale_io() {
    Scenario s;
    s.name = "weak-scale-io";
    s.nodes = 16;
    s.strategy = Strategy::SINGLE;
    s.workload.iterations = 1;
    s.workload.checkpoint_interval = 1;
    s.workload.bytes_per_checkpoint = 10000000000ull;
    s.workload.seconds_per_iteration = 1.0;
    return s;
}

inline Scenario scenario_fwi_resil() {
    Scenario s;
    s.name = "fwi-resil";
    s.nodes = 8;
    s.on_booster = true;
    s.strategy = Strategy::SINGLE;
    s.workload.iterations = 40;
    s.workload.checkpoint_interval = 40;
    s.workload.bytes_per_checkpoint = 1000000000ull / 8;  // 1 GB processed per node
    s.workload.seconds_per_iteration = 2.0;               // task cost
    s.fail_at = 38;  // near the end of the run
    return s;
}

inline std::optional<Scenario> named_scenario(const std::string& name) {
    if (name == "xpic-scr") return scenario_xpic_scr();
    if (name == "xor-vs-nam") return scenario_xor_vs_nam();
    if (name == "weak-scale-io") return scenario_weak_scale_io();
    if (name == "fwi-resil") return scenario_fwi_resil();
    return std::nullopt;
}

inline Scenario scenario_from_config(const KvConfig& cfg) {
    Scenario base;
    std::string name = cfg.get_string("scenario.name", "custom");
    if (auto named = named_scenario(name)) base = *named;
    base.name = name;
    base.nodes = cfg.get_u32("scenario.nodes", base.nodes);
    base.on_booster = cfg.get_bool("scenario.on_booster", base.on_booster);
    if (cfg.has("scenario.strategy")) {
        auto strat = strategy_from_name(cfg.get_string("scenario.strategy", ""));
        if (!strat) throw ScenarioError("unknown strategy " + cfg.get_string("scenario.strategy", ""));
        base.strategy = *strat;
    }
    base.workload.iterations = cfg.get_u64("workload.iterations", base.workload.iterations);
    base.workload.seconds_per_iteration =
        cfg.get_double("workload.seconds_per_iteration", base.workload.seconds_per_iteration);
    base.workload.bytes_per_checkpoint =
        cfg.get_u64("workload.bytes_per_checkpoint", base.workload.bytes_per_checkpoint);
    base.workload.checkpoint_interval =
        cfg.get_u64("workload.checkpoint_interval", base.workload.checkpoint_interval);
    if (cfg.has("scenario.fail_at")) base.fail_at = cfg.get_u64("scenario.fail_at", 0);
    if (cfg.has("scenario.fail_kind")) {
        std::string k = cfg.get_string("scenario.fail_kind", "crash");
        if (k == "crash") base.fail_kind = FailureKind::NODE_CRASH;
        else if (k == "transient") base.fail_kind = FailureKind::PROCESS_TRANSIENT;
        else throw ScenarioError("unknown fail kind " + k);
    }
    if (cfg.has("scenario.flush")) {
        std::string f = cfg.get_string("scenario.flush", "");
        if (f == "sync") base.flush = FlushMode::SYNC;
        else if (f == "async") base.flush = FlushMode::ASYNC;
        else if (f == "none") base.flush.reset();
        else throw ScenarioError("unknown flush mode " + f);
    }
    base.repetitions = cfg.get_u32("scenario.repetitions", base.repetitions);
    base.seed = cfg.get_u64("scenario.seed", base.seed);
    base.knobs.group_size = cfg.get_u32("ckpt.group_size", base.knobs.group_size);
    base.knobs.partner_hop = cfg.get_u32("ckpt.partner_hop", base.knobs.partner_hop);
    return base;
}

// ---------------------------------------------------------------------------
// Scenario runners
// ---------------------------------------------------------------------------

namespace detail {

inline Scenario resolve_iteration_time(Scenario s, const ClusterState& cluster) {
    if (s.workload.seconds_per_iteration == 0.0) {
        StrategyTiming t = price_strategy(cluster, s.strategy, s.nodes,
                                          s.workload.bytes_per_checkpoint, s.knobs);
        s.workload.seconds_per_iteration = solve_iteration_time(
            t.per_node_overhead, s.workload.iterations, s.workload.checkpoint_interval, 8.0);
    }
    return s;
}

inline MetricsRow base_row(const Scenario& s, const std::string& variant, uint32_t rep,
                           const WorkloadRun& run) {
    MetricsRow r;
    r.scenario = s.name + "[" + variant + "]";
    r.strategy = strategy_name(s.strategy);
    r.nodes = s.nodes;
    r.run = rep;
    r.total_s = run.total_s;
    r.ckpt_overhead_s = run.ckpt_overhead_s;
    r.recovery_s = run.recovery_s;
    r.bytes_local = run.bytes.local;
    r.bytes_remote = run.bytes.remote;
    r.bytes_global = run.bytes.global;
    r.bytes_nam = run.bytes.nam;
    return r;
}

}  // namespace detail

// Four bars: {without, with} checkpoints x {without, with} the injected error.
inline ScenarioResult run_scenario_four_bars(const ClusterState& cluster, Scenario s) {
    s = detail::resolve_iteration_time(s, cluster);
    s.validate(cluster);
    ScenarioResult out;
    for (uint32_t rep = 0; rep < s.repetitions; ++rep) {
        struct Variant {
            const char* label;
            bool cp, err;
        };
        const Variant variants[] = {{"nocp,noerr", false, false},
                                    {"cp,noerr", true, false},
                                    {"nocp,err", false, true},
                                    {"cp,err", true, true}};
        double t_nocp_err = 0, t_cp_err = 0;
        for (const Variant& v : variants) {
            WorkloadRun run = run_workload(cluster, s, v.cp, v.err);
            out.infeasible_recovery = out.infeasible_recovery || run.infeasible;
            MetricsRow row = detail::base_row(s, v.label, rep, run);
            if (!v.cp) row.strategy = "none";
            if (v.err && !v.cp) t_nocp_err = run.total_s;
            if (v.err && v.cp) {
                t_cp_err = run.total_s;
                if (t_nocp_err > 0)
                    row.savings_pct = (t_nocp_err - t_cp_err) / t_nocp_err * 100.0;
            }
            out.metrics.rows.push_back(row);
            out.event_log_csv += "# run " + row.scenario + " rep " + std::to_string(rep) + "\n" +
                                 run.event_log_csv;
        }
    }
    return out;
}

// Paired runs of the two XOR strategies over the same workload.
inline ScenarioResult run_scenario_xor_pair(const ClusterState& cluster, Scenario s) {
    s = detail::resolve_iteration_time(s, cluster);
    s.validate(cluster);
    ScenarioResult out;
    for (uint32_t rep = 0; rep < s.repetitions; ++rep) {
        Scenario dist = s;
        dist.strategy = Strategy::DIST_XOR;
        WorkloadRun dist_run = run_workload(cluster, dist, true, s.fail_at.has_value());
        out.metrics.rows.push_back(detail::base_row(dist, "distxor", rep, dist_run));
        out.event_log_csv += "# run " + s.name + "[distxor] rep " + std::to_string(rep) + "\n" +
                             dist_run.event_log_csv;

        Scenario nam = s;
        nam.strategy = Strategy::NAM_XOR;
        WorkloadRun nam_run = run_workload(cluster, nam, true, s.fail_at.has_value());
        MetricsRow row = detail::base_row(nam, "namxor", rep, nam_run);
        if (dist_run.ckpt_overhead_s > 0)
            row.savings_pct = (dist_run.ckpt_overhead_s - nam_run.ckpt_overhead_s) /
                              dist_run.ckpt_overhead_s * 100.0;
        out.metrics.rows.push_back(row);
        out.event_log_csv += "# run " + s.name + "[namxor] rep " + std::to_string(rep) + "\n" +
                             nam_run.event_log_csv;
    }
    return out;
}

// Per-node write time, local cache tier vs the global file system, N scaling.
inline ScenarioResult run_scenario_weak_scale(const ClusterState& cluster, Scenario s) {
    s.validate(cluster);
    ScenarioResult out;
    const uint64_t bytes = s.workload.bytes_per_checkpoint;
    for (uint32_t n : {2u, 4u, 8u, 16u}) {
        if (n > s.nodes) break;
        for (bool local : {true, false}) {
            SimEngine sim(cluster);
            std::vector<Flow> flows;
            for (uint32_t i = 0; i < n; ++i) {
                Endpoint dst = local ? Endpoint::node_tier(i, TierKind::NVME)
                                     : Endpoint::global_fs();
                flows.push_back({{Endpoint::node_tier(i, TierKind::RAM), dst}, bytes});
            }
            std::vector<double> times = sim.execute_batch(
                0.0, flows, EventKind::WRITE_DONE, local ? "write local" : "write global");
            double per_node = times[0] + (local ? 0.0 : cluster.spec().global_fs_file_create_cost);

            MetricsRow row;
            row.scenario = s.name + std::string(local ? "[local]" : "[global]");
            row.strategy = local ? "local" : "global";
            row.nodes = n;
            row.run = 0;
            row.total_s = per_node;
            row.bytes_local = local ? sim.counters().local : 0;
            row.bytes_global = sim.counters().global;
            out.metrics.rows.push_back(row);
            out.event_log_csv += "# run " + row.scenario + " n " + std::to_string(n) + "\n" +
                                 sim.export_log_csv();
        }
    }
    return out;
}

// Offload resiliency: failure-free, naive whole-application restart, and
// resilient per-task restart, plus the persistent-log overhead leg.
inline ScenarioResult run_scenario_offload(const ClusterState& cluster, Scenario s,
                                           const std::string& workdir) {
    s.validate(cluster);
    if (cluster.booster_nodes() < s.nodes)
        throw ScenarioError("offload scenario needs " + std::to_string(s.nodes) + " booster nodes");
    ScenarioResult out;

    TaskGraph g;
    for (uint64_t i = 1; i <= s.workload.iterations; ++i) {
        TaskSpec t;
        t.id = i;
        t.target = TaskTarget::OFFLOAD;
        t.work_cost = s.workload.seconds_per_iteration;
        g.add(t);
    }

    auto clean = run_offload_resilient(g, default_task_fn, {}, s.nodes, std::nullopt);
    MetricsRow base;
    base.scenario = s.name + "[nofail]";
    base.strategy = "offload";
    base.nodes = s.nodes;
    base.total_s = clean.wall_seconds;
    out.metrics.rows.push_back(base);

    // the failure strikes near the end of the run
    double fail_time = s.fail_at
                           ? *s.fail_at * s.workload.seconds_per_iteration / s.nodes
                           : clean.wall_seconds * 0.95;
    fail_time = std::min(fail_time, clean.wall_seconds * 0.95);

    MetricsRow naive;
    naive.scenario = s.name + "[naive]";
    naive.strategy = "restart";
    naive.nodes = s.nodes;
    naive.total_s = fail_time + clean.wall_seconds;  // lose everything, run again
    out.metrics.rows.push_back(naive);

    auto resil = run_offload_resilient(g, default_task_fn, {}, s.nodes,
                                       OffloadFailure{fail_time, s.nodes / 2});
    if (resil.env != clean.env) throw ScenarioError("resilient outputs diverged");
    MetricsRow rrow;
    rrow.scenario = s.name + "[resilient]";
    rrow.strategy = "offload";
    rrow.nodes = s.nodes;
    rrow.total_s = resil.wall_seconds;
    rrow.recovery_s = resil.wall_seconds - clean.wall_seconds;
    rrow.savings_pct = (naive.total_s - resil.wall_seconds) / naive.total_s * 100.0;
    out.metrics.rows.push_back(rrow);

    // persistent-log overhead on the failure-free run
    std::string dir = workdir.empty() ? "." : workdir;
    TaskLog log(dir + "/fwi_tasklog");
    PersistentStore store(dir + "/fwi_taskstore");
    auto persist = run_graph_persistent(g, default_task_fn, {}, log, store);
    MetricsRow lrow;
    lrow.scenario = s.name + "[logging]";
    lrow.strategy = "persistent";
    lrow.nodes = s.nodes;
    lrow.total_s = persist.work_seconds + persist.persist_seconds;
    lrow.ckpt_overhead_s = persist.persist_seconds;
    lrow.savings_pct = persist.persist_seconds / persist.work_seconds * 100.0;
    out.metrics.rows.push_back(lrow);
    std::remove((dir + "/fwi_tasklog").c_str());
    std::filesystem::remove_all(dir + "/fwi_taskstore");
    return out;
}

// Entry point: dispatches named scenarios, single-run custom scenarios
// otherwise. Exit semantics for the CLI: infeasible recovery is in-band.
inline ScenarioResult run_scenario(const ClusterState& cluster, const Scenario& s,
                                   const std::string& workdir = ".") {
    if (s.name == "xpic-scr") return run_scenario_four_bars(cluster, s);
    if (s.name == "xor-vs-nam") return run_scenario_xor_pair(cluster, s);
    if (s.name == "weak-scale-io") return run_scenario_weak_scale(cluster, s);
    if (s.name == "fwi-resil") return run_scenario_offload(cluster, s, workdir);

    Scenario resolved = detail::resolve_iteration_time(s, cluster);
    resolved.validate(cluster);
    ScenarioResult out;
    for (uint32_t rep = 0; rep < resolved.repetitions; ++rep) {
        WorkloadRun run = run_workload(cluster, resolved, true, resolved.fail_at.has_value());
        out.infeasible_recovery = out.infeasible_recovery || run.infeasible;
        out.metrics.rows.push_back(detail::base_row(resolved, "run", rep, run));
        out.event_log_csv += "# run " + resolved.name + " rep " + std::to_string(rep) + "\n" +
                             run.event_log_csv;
    }
    return out;
}

}  // namespace deepckpt
