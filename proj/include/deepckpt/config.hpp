#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "deepckpt/cluster.hpp"
#include "deepckpt/errors.hpp"

namespace deepckpt {

// Flat key-value configuration: one `section.key = value` per line, `#`
// starts a comment. Bandwidths are bytes/s, latencies seconds, capacities
// bytes.
class KvConfig {
public:
    KvConfig() = default;

    static KvConfig parse(const std::string& text) {
        KvConfig cfg;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(trimmed.substr(0, eq));
            std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ConfigError("line " + std::to_string(lineno) + ": empty key");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    static KvConfig load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw ConfigError("cannot open " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& def) const {
        auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }

    double get_double(const std::string& key, double def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        try {
            size_t pos = 0;
            double v = std::stod(it->second, &pos);
            if (pos != it->second.size())
                throw ConfigError(key + ": trailing characters in '" + it->second + "'");
            return v;
        } catch (const std::invalid_argument&) {
            throw ConfigError(key + ": not a number: '" + it->second + "'");
        } catch (const std::out_of_range&) {
            throw ConfigError(key + ": out of range: '" + it->second + "'");
        }
    }

    uint64_t get_u64(const std::string& key, uint64_t def) const {
        if (!has(key)) return def;
        double v = get_double(key, 0.0);
        if (v < 0 || std::floor(v) != v)
            throw ConfigError(key + ": expected a non-negative integer");
        return static_cast<uint64_t>(v);
    }

    uint32_t get_u32(const std::string& key, uint32_t def) const {
        return static_cast<uint32_t>(get_u64(key, def));
    }

    bool get_bool(const std::string& key, bool def) const {
        if (!has(key)) return def;
        std::string v = get_string(key, "");
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError(key + ": expected a boolean, got '" + v + "'");
    }

    const std::map<std::string, std::string>& values() const { return values_; }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

private:
    static std::string trim(const std::string& s) {
        size_t b = 0, e = s.size();
        while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
        while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
        return s.substr(b, e - b);
    }

    std::map<std::string, std::string> values_;
};

// Default machine: the 16+8 node prototype. Link speed 100 Gbit/s, MPI
// latency midpoint 1.5 us, 400 GB NVMe per node, two 2 GB NAM devices, and a
// 57 TB global file system served at 2 GB/s aggregate. NVMe bandwidths are
// datacenter-SSD class figures; RAM is 75x NVMe and HDD is NVMe/4.5. All
// values are overridable through the config file.
inline ClusterSpec default_cluster_spec() {
    ClusterSpec s;
    s.cluster_nodes = 16;
    s.booster_nodes = 8;

    TierSpec ram;
    ram.kind = TierKind::RAM;
    ram.capacity = 128e9;
    ram.write_bw = 81.0e9;     // 75x NVMe write
    ram.read_bw = 202.5e9;     // 75x NVMe read
    ram.access_latency = 1e-7;

    TierSpec nvme;
    nvme.kind = TierKind::NVME;
    nvme.capacity = 400e9;
    nvme.write_bw = 1.08e9;
    nvme.read_bw = 2.7e9;
    nvme.access_latency = 2e-5;

    TierSpec hdd;
    hdd.kind = TierKind::HDD;
    hdd.capacity = 2e12;
    hdd.write_bw = 0.24e9;     // NVMe / 4.5
    hdd.read_bw = 0.6e9;
    hdd.access_latency = 5e-3;

    s.tiers_per_node = {ram, nvme, hdd};

    s.network.link_bw = 12.5e9;  // 100 Gbit/s
    s.network.base_latency = 1.5e-6;
    s.network.bisection_limit = 150e9;

    NamSpec nam;
    nam.capacity = 2e9;
    nam.link_bw = 12.5e9;
    nam.xor_throughput = 12.5e9;  // parity engine keeps up with the wire
    nam.ring_buffers = 8;
    nam.buffer_size = 1 << 20;
    s.nam_devices = {nam, nam};

    s.global_fs.kind = TierKind::GLOBAL_FS;
    s.global_fs.capacity = 57e12;
    s.global_fs.write_bw = 2.0e9;
    s.global_fs.read_bw = 2.0e9;
    s.global_fs.access_latency = 5e-4;

    s.global_fs_file_create_cost = 5e-3;
    s.node_xor_throughput = 1.2e9;
    return s;
}

inline ClusterSpec cluster_spec_from_config(const KvConfig& cfg) {
    ClusterSpec d = default_cluster_spec();
    ClusterSpec s;
    s.cluster_nodes = cfg.get_u32("cluster.nodes", d.cluster_nodes);
    s.booster_nodes = cfg.get_u32("booster.nodes", d.booster_nodes);

    auto tier = [&](const std::string& sec, const TierSpec& def) {
        TierSpec t = def;
        t.capacity = cfg.get_u64(sec + ".capacity", def.capacity);
        t.write_bw = cfg.get_double(sec + ".write_bw", def.write_bw);
        t.read_bw = cfg.get_double(sec + ".read_bw", def.read_bw);
        t.access_latency = cfg.get_double(sec + ".access_latency", def.access_latency);
        return t;
    };
    s.tiers_per_node = {tier("ram", d.tiers_per_node[0]), tier("nvme", d.tiers_per_node[1]),
                        tier("hdd", d.tiers_per_node[2])};

    s.network.link_bw = cfg.get_double("network.link_bw", d.network.link_bw);
    s.network.base_latency = cfg.get_double("network.base_latency", d.network.base_latency);
    s.network.bisection_limit =
        cfg.get_double("network.bisection_limit", d.network.bisection_limit);

    uint32_t nam_count = cfg.get_u32("nam.count", static_cast<uint32_t>(d.nam_devices.size()));
    NamSpec nam = d.nam_devices[0];
    nam.capacity = cfg.get_u64("nam.capacity", nam.capacity);
    nam.link_bw = cfg.get_double("nam.link_bw", nam.link_bw);
    nam.xor_throughput = cfg.get_double("nam.xor_throughput", nam.xor_throughput);
    nam.ring_buffers = cfg.get_u32("nam.ring_buffers", nam.ring_buffers);
    nam.buffer_size = cfg.get_u64("nam.buffer_size", nam.buffer_size);
    s.nam_devices.assign(nam_count, nam);

    s.global_fs = tier("global_fs", d.global_fs);
    s.global_fs.kind = TierKind::GLOBAL_FS;
    s.global_fs_file_create_cost =
        cfg.get_double("global_fs.file_create_cost", d.global_fs_file_create_cost);
    s.node_xor_throughput = cfg.get_double("node.xor_throughput", d.node_xor_throughput);
    return s;
}

}  // namespace deepckpt
