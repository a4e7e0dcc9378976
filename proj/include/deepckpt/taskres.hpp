#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "deepckpt/crc32c.hpp"
#include "deepckpt/errors.hpp"

namespace deepckpt {

// ---------------------------------------------------------------------------
// Task graphs
// ---------------------------------------------------------------------------

enum class TaskTarget { LOCAL, OFFLOAD };

struct TaskSpec {
    uint64_t id = 0;
    std::set<uint64_t> deps;
    TaskTarget target = TaskTarget::LOCAL;
    double work_cost = 0.0;

    // Every task produces one named region; it consumes the regions produced
    // by its dependencies.
    std::string output_name() const { return "t" + std::to_string(id) + ".out"; }
};

class TaskGraph {
public:
    void add(TaskSpec t) {
        if (tasks_.count(t.id)) throw Error("duplicate task id " + std::to_string(t.id));
        tasks_[t.id] = std::move(t);
    }

    const std::map<uint64_t, TaskSpec>& tasks() const { return tasks_; }
    size_t size() const { return tasks_.size(); }

    // Kahn's algorithm; ready tasks drain in ascending id order. Throws on
    // cycles or dangling dependencies.
    std::vector<uint64_t> topo_order() const {
        std::map<uint64_t, size_t> indeg;
        std::map<uint64_t, std::vector<uint64_t>> consumers;
        for (const auto& [id, t] : tasks_) {
            indeg[id] = t.deps.size();
            for (uint64_t d : t.deps) {
                if (!tasks_.count(d))
                    throw Error("task " + std::to_string(id) + " depends on unknown task " +
                                std::to_string(d));
                consumers[d].push_back(id);
            }
        }
        std::set<uint64_t> ready;
        for (const auto& [id, n] : indeg)
            if (n == 0) ready.insert(id);
        std::vector<uint64_t> order;
        while (!ready.empty()) {
            uint64_t id = *ready.begin();
            ready.erase(ready.begin());
            order.push_back(id);
            for (uint64_t c : consumers[id])
                if (--indeg[c] == 0) ready.insert(c);
        }
        if (order.size() != tasks_.size()) throw Error("task graph has a cycle");
        return order;
    }

    // Text format: `task <id> deps=<csv> cost=<s> target=<local|boost>`.
    static TaskGraph parse(const std::string& text) {
        TaskGraph g;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            std::istringstream ls(line);
            std::string word;
            if (!(ls >> word)) continue;
            if (word != "task")
                throw Error("line " + std::to_string(lineno) + ": expected 'task'");
            TaskSpec t;
            if (!(ls >> t.id)) throw Error("line " + std::to_string(lineno) + ": missing id");
            std::string tok;
            while (ls >> tok) {
                auto eq = tok.find('=');
                if (eq == std::string::npos)
                    throw Error("line " + std::to_string(lineno) + ": bad token " + tok);
                std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
                if (key == "deps") {
                    std::istringstream ds(value);
                    std::string d;
                    while (std::getline(ds, d, ','))
                        if (!d.empty()) t.deps.insert(std::stoull(d));
                } else if (key == "cost") {
                    t.work_cost = std::stod(value);
                } else if (key == "target") {
                    if (value == "local") t.target = TaskTarget::LOCAL;
                    else if (value == "boost") t.target = TaskTarget::OFFLOAD;
                    else throw Error("line " + std::to_string(lineno) + ": bad target " + value);
                } else {
                    throw Error("line " + std::to_string(lineno) + ": unknown key " + key);
                }
            }
            g.add(std::move(t));
        }
        return g;
    }

    std::string serialize() const {
        std::string out;
        for (const auto& [id, t] : tasks_) {
            out += "task " + std::to_string(id) + " deps=";
            bool first = true;
            for (uint64_t d : t.deps) {
                if (!first) out += ',';
                out += std::to_string(d);
                first = false;
            }
            char cost[32];
            std::snprintf(cost, sizeof(cost), "%g", t.work_cost);
            out += std::string(" cost=") + cost + " target=" +
                   (t.target == TaskTarget::OFFLOAD ? "boost" : "local") + "\n";
        }
        return out;
    }

private:
    std::map<uint64_t, TaskSpec> tasks_;
};

using DataMap = std::map<std::string, std::vector<uint8_t>>;

// Deterministic task body used by the synthetic workloads: expands a seed
// derived from the task id and its input bytes into the output region.
inline DataMap default_task_fn(const TaskSpec& t, const DataMap& inputs) {
    uint32_t in_crc = 0;
    for (const auto& [name, data] : inputs) {
        in_crc = crc32c_update(in_crc == 0 ? 0 : in_crc, name.data(), name.size());
        in_crc = crc32c_update(in_crc, data.data(), data.size());
    }
    uint64_t state = (t.id + 1) * 0x9E3779B97F4A7C15ull ^ in_crc;
    std::vector<uint8_t> out(256 + (t.id % 7) * 64);
    for (size_t i = 0; i < out.size(); ++i) {
        state += 0x9E3779B97F4A7C15ull;
        uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        out[i] = static_cast<uint8_t>(z ^ (z >> 31));
    }
    DataMap res;
    res[t.output_name()] = std::move(out);
    return res;
}

using TaskFn = DataMap (*)(const TaskSpec&, const DataMap&);

inline DataMap gather_inputs(const TaskSpec& t, const DataMap& env) {
    DataMap in;
    for (uint64_t d : t.deps) {
        std::string name = "t" + std::to_string(d) + ".out";
        auto it = env.find(name);
        if (it == env.end()) throw Error("missing input " + name);
        in[name] = it->second;
    }
    return in;
}

inline uint32_t digest(const DataMap& regions) {
    uint32_t crc = 0;
    for (const auto& [name, data] : regions) {
        crc = crc32c_update(crc, name.data(), name.size());
        crc = crc32c_update(crc, data.data(), data.size());
    }
    return crc;
}

// ---------------------------------------------------------------------------
// Failure injection (deterministic by (task, attempt))
// ---------------------------------------------------------------------------

struct TaskFailurePolicy {
    std::set<std::pair<uint64_t, uint32_t>> fail_points;  // (task id, attempt)

    bool should_fail(uint64_t task, uint32_t attempt) const {
        return fail_points.count({task, attempt}) != 0;
    }
};

// ---------------------------------------------------------------------------
// Lightweight in-memory task checkpointing
// ---------------------------------------------------------------------------

// Tracks live snapshot bytes; zero when no task is in flight.
struct SnapshotStats {
    uint64_t live_bytes = 0;
    uint64_t peak_bytes = 0;

    void hold(uint64_t b) {
        live_bytes += b;
        peak_bytes = std::max(peak_bytes, live_bytes);
    }
    void evict(uint64_t b) { live_bytes -= b; }
};

struct LightweightResult {
    DataMap outputs;
    uint32_t executions = 0;
};

// Snapshots the task's inputs to memory before it starts; a failed attempt
// restores the inputs and re-executes. The snapshot is evicted on success.
inline LightweightResult run_task_lightweight(const TaskSpec& task, TaskFn fn, DataMap& env,
                                              uint32_t max_retries,
                                              const TaskFailurePolicy& policy,
                                              SnapshotStats& stats) {
    DataMap inputs = gather_inputs(task, env);
    uint64_t snapshot_bytes = 0;
    for (const auto& [name, data] : inputs) snapshot_bytes += data.size();
    DataMap snapshot = inputs;
    stats.hold(snapshot_bytes);

    LightweightResult res;
    for (uint32_t attempt = 1; attempt <= max_retries + 1; ++attempt) {
        ++res.executions;
        if (policy.should_fail(task.id, attempt)) {
            inputs = snapshot;  // roll back to the checkpointed inputs
            continue;
        }
        res.outputs = fn(task, inputs);
        for (auto& [name, data] : res.outputs) env[name] = data;
        stats.evict(snapshot_bytes);
        return res;
    }
    stats.evict(snapshot_bytes);
    throw RetriesExhausted("task " + std::to_string(task.id) + " failed " +
                           std::to_string(max_retries + 1) + " times");
}

// ---------------------------------------------------------------------------
// Persistent task log + output store
// ---------------------------------------------------------------------------

// On disk: newline-delimited `task=<id> in=<hex> out=<hex> status=<DONE|FAILED>`.
class TaskLog {
public:
    struct Record {
        uint32_t in_crc = 0;
        uint32_t out_crc = 0;
        bool done = false;
    };

    explicit TaskLog(std::string path) : path_(std::move(path)) {
        std::ifstream f(path_);
        if (!f) return;
        std::string line;
        while (std::getline(f, line)) {
            // unparseable tail lines (torn writes) are dropped: the affected
            // tasks simply re-execute
            auto rec = parse_line(line);
            if (rec) records_[rec->first] = rec->second;
        }
    }

    const std::string& path() const { return path_; }

    std::optional<Record> lookup(uint64_t task) const {
        auto it = records_.find(task);
        if (it == records_.end()) return std::nullopt;
        return it->second;
    }

    void append(uint64_t task, uint32_t in_crc, uint32_t out_crc, bool done) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "task=%llu in=%08x out=%08x status=%s\n",
                      static_cast<unsigned long long>(task), in_crc, out_crc,
                      done ? "DONE" : "FAILED");
        std::ofstream f(path_, std::ios::app);
        if (!f) throw IoError("cannot append to " + path_);
        f << buf;
        records_[task] = {in_crc, out_crc, done};
    }

    size_t size() const { return records_.size(); }

private:
    static std::optional<std::pair<uint64_t, Record>> parse_line(const std::string& line) {
        unsigned long long task;
        unsigned in_crc, out_crc;
        char status[16];
        if (std::sscanf(line.c_str(), "task=%llu in=%x out=%x status=%15s", &task, &in_crc,
                        &out_crc, status) != 4)
            return std::nullopt;
        Record r{static_cast<uint32_t>(in_crc), static_cast<uint32_t>(out_crc),
                 std::string(status) == "DONE"};
        return std::make_pair(static_cast<uint64_t>(task), r);
    }

    std::string path_;
    std::map<uint64_t, Record> records_;
};

// Holds completed tasks' output regions next to the log.
class PersistentStore {
public:
    explicit PersistentStore(std::string dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    void save(uint64_t task, const DataMap& outputs) {
        std::ofstream f(file_for(task), std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot create output file for task " + std::to_string(task));
        uint32_t count = static_cast<uint32_t>(outputs.size());
        f.write(reinterpret_cast<const char*>(&count), 4);
        for (const auto& [name, data] : outputs) {
            uint32_t nl = static_cast<uint32_t>(name.size());
            uint64_t dl = data.size();
            f.write(reinterpret_cast<const char*>(&nl), 4);
            f.write(name.data(), nl);
            f.write(reinterpret_cast<const char*>(&dl), 8);
            f.write(reinterpret_cast<const char*>(data.data()),
                    static_cast<std::streamsize>(dl));
        }
    }

    std::optional<DataMap> load(uint64_t task) const {
        std::ifstream f(file_for(task), std::ios::binary);
        if (!f) return std::nullopt;
        uint32_t count = 0;
        if (!f.read(reinterpret_cast<char*>(&count), 4)) return std::nullopt;
        DataMap out;
        for (uint32_t i = 0; i < count; ++i) {
            uint32_t nl = 0;
            uint64_t dl = 0;
            if (!f.read(reinterpret_cast<char*>(&nl), 4)) return std::nullopt;
            std::string name(nl, '\0');
            if (!f.read(name.data(), nl)) return std::nullopt;
            if (!f.read(reinterpret_cast<char*>(&dl), 8)) return std::nullopt;
            std::vector<uint8_t> data(dl);
            if (!f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(dl)))
                return std::nullopt;
            out[name] = std::move(data);
        }
        return out;
    }

    std::string file_for(uint64_t task) const {
        return dir_ + "/task_" + std::to_string(task) + ".bin";
    }

private:
    std::string dir_;
};

// ---------------------------------------------------------------------------
// Persistent fast-forward replay
// ---------------------------------------------------------------------------

struct TaskresKnobs {
    double persist_bw = 1.08e9;       // bytes/s for persisting task outputs
    double persist_latency = 2e-5;    // per record
    double heartbeat = 0.1;           // offload failure detection interval
};

struct PersistentRunResult {
    DataMap env;                       // all produced regions
    std::vector<uint64_t> executed;    // tasks actually run this invocation
    std::vector<uint64_t> fast_forwarded;
    double work_seconds = 0;           // simulated task work
    double persist_seconds = 0;        // simulated logging/persistence overhead
    bool crashed = false;
};

// Runs the graph appending completed tasks to the persistent log. On a
// re-invocation with the same log, tasks recorded DONE whose input digests
// match are fast-forwarded (outputs restored from the store, no execution);
// a record or stored output that fails its digest check forces conservative
// re-execution of that task.
inline PersistentRunResult run_graph_persistent(const TaskGraph& graph, TaskFn fn,
                                                DataMap initial, TaskLog& log,
                                                PersistentStore& store,
                                                std::optional<uint64_t> crash_after = {},
                                                const TaskresKnobs& knobs = {}) {
    PersistentRunResult res;
    res.env = std::move(initial);

    for (uint64_t id : graph.topo_order()) {
        const TaskSpec& t = graph.tasks().at(id);
        DataMap inputs = gather_inputs(t, res.env);
        uint32_t in_crc = digest(inputs);

        auto rec = log.lookup(id);
        bool fast_forward = false;
        if (rec && rec->done && rec->in_crc == in_crc) {
            auto stored = store.load(id);
            if (stored && digest(*stored) == rec->out_crc) {
                for (auto& [name, data] : *stored) res.env[name] = std::move(data);
                res.fast_forwarded.push_back(id);
                fast_forward = true;
            }
        }
        if (!fast_forward) {
            DataMap outputs = fn(t, inputs);
            uint64_t out_bytes = 0;
            for (const auto& [name, data] : outputs) out_bytes += data.size();
            store.save(id, outputs);
            log.append(id, in_crc, digest(outputs), true);
            res.persist_seconds += 2 * knobs.persist_latency +
                                   static_cast<double>(out_bytes) / knobs.persist_bw;
            res.work_seconds += t.work_cost;
            for (auto& [name, data] : outputs) res.env[name] = std::move(data);
            res.executed.push_back(id);
        }
        if (crash_after && *crash_after == id) {
            res.crashed = true;
            return res;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Resilient offload
// ---------------------------------------------------------------------------

struct OffloadFailure {
    double time = 0.0;
    uint32_t node = 0;  // index into the worker pool
};

struct OffloadReport {
    DataMap env;
    double wall_seconds = 0;
    std::vector<uint64_t> reexecuted;  // tasks killed on the failed worker
    double detected_at = 0;
    uint32_t executions = 0;
};

// List-schedules the graph's tasks over a pool of workers (one task per
// worker at a time; ready tasks start lowest-id-first on the earliest-free
// worker). A worker failure kills its running task; the loss is detected one
// heartbeat later and only the killed and not-yet-started tasks move to the
// survivors. Completed work is never repeated.
inline OffloadReport run_offload_resilient(const TaskGraph& graph, TaskFn fn, DataMap initial,
                                           uint32_t n_workers,
                                           std::optional<OffloadFailure> failure,
                                           const TaskresKnobs& knobs = {}) {
    if (n_workers == 0) throw NoSurvivors("empty worker pool");
    if (failure && failure->node >= n_workers)
        throw UnknownNode("worker " + std::to_string(failure->node));

    OffloadReport rep;
    rep.env = std::move(initial);

    struct Running {
        uint64_t task;
        double end;
    };
    std::vector<double> free_at(n_workers, 0.0);
    std::vector<bool> alive(n_workers, true);
    std::map<uint32_t, Running> running;  // worker -> task
    std::set<uint64_t> ready, done;
    std::map<uint64_t, size_t> waiting;  // unmet dependency count

    for (const auto& [id, t] : graph.tasks()) {
        waiting[id] = t.deps.size();
        if (t.deps.empty()) ready.insert(id);
    }

    double now = 0.0;
    bool failure_pending = failure.has_value();
    double detect_at = -1.0;
    std::set<uint64_t> lost;  // killed tasks awaiting detection

    auto complete = [&](uint64_t id) {
        const TaskSpec& t = graph.tasks().at(id);
        DataMap outputs = fn(t, gather_inputs(t, rep.env));
        for (auto& [name, data] : outputs) rep.env[name] = std::move(data);
        done.insert(id);
        ++rep.executions;
        for (const auto& [cid, ct] : graph.tasks())
            if (ct.deps.count(id) && --waiting[cid] == 0) ready.insert(cid);
    };

    while (done.size() < graph.size()) {
        // start ready tasks on idle alive workers, lowest task id first
        while (!ready.empty()) {
            uint32_t best_w = UINT32_MAX;
            for (uint32_t w = 0; w < n_workers; ++w) {
                if (!alive[w] || running.count(w)) continue;
                if (best_w == UINT32_MAX || free_at[w] < free_at[best_w]) best_w = w;
            }
            if (best_w == UINT32_MAX) break;
            uint64_t id = *ready.begin();
            ready.erase(ready.begin());
            double start = std::max(now, free_at[best_w]);
            running[best_w] = {id, start + graph.tasks().at(id).work_cost};
        }

        if (running.empty() && ready.empty() && !lost.empty() && detect_at < 0) {
            // nothing in flight and losses undetectable: no survivors took over
            bool any_alive = false;
            for (uint32_t w = 0; w < n_workers; ++w) any_alive = any_alive || alive[w];
            if (!any_alive) throw NoSurvivors("all workers dead");
        }

        // next event: earliest completion, the failure, or the detection
        double next = -1.0;
        for (const auto& [w, r] : running)
            if (next < 0 || r.end < next) next = r.end;
        if (failure_pending && (next < 0 || failure->time < next)) next = failure->time;
        if (detect_at >= 0 && (next < 0 || detect_at < next)) next = detect_at;
        if (next < 0) {
            if (!lost.empty() || !ready.empty())
                throw NoSurvivors("tasks remain but no worker can run them");
            throw Error("scheduler stalled");
        }
        now = std::max(now, next);

        if (failure_pending && failure->time <= now) {
            failure_pending = false;
            alive[failure->node] = false;
            auto it = running.find(failure->node);
            if (it != running.end()) {
                lost.insert(it->second.task);
                rep.reexecuted.push_back(it->second.task);
                running.erase(it);
            }
            detect_at = failure->time + knobs.heartbeat;
            rep.detected_at = detect_at;
            bool any_alive = false;
            for (uint32_t w = 0; w < n_workers; ++w) any_alive = any_alive || alive[w];
            if (!any_alive && done.size() < graph.size())
                throw NoSurvivors("all workers dead");
            continue;
        }
        if (detect_at >= 0 && detect_at <= now) {
            detect_at = -1.0;
            for (uint64_t id : lost) ready.insert(id);
            lost.clear();
            continue;
        }

        // completions at `now`, in worker order for determinism
        for (uint32_t w = 0; w < n_workers; ++w) {
            auto it = running.find(w);
            if (it == running.end() || it->second.end > now) continue;
            uint64_t id = it->second.task;
            free_at[w] = it->second.end;
            running.erase(it);
            complete(id);
        }
    }

    rep.wall_seconds = now;
    for (double f : free_at) rep.wall_seconds = std::max(rep.wall_seconds, f);
    return rep;
}

}  // namespace deepckpt
