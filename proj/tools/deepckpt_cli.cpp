#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "deepckpt/deepckpt.hpp"

using namespace deepckpt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInfeasible = 2;

ClusterState load_cluster(const std::string& config_path) {
    if (config_path.empty()) return build_cluster(default_cluster_spec());
    return build_cluster(cluster_spec_from_config(KvConfig::load(config_path)));
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot create " + path);
    f << content;
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    return std::vector<uint8_t>((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
}

struct RunOptions {
    std::string scenario;
    std::string config;
    std::string strategy;
    std::string fail_kind;
    std::string out;
    std::string events;
    int64_t nodes = -1;
    int64_t cp_interval = -1;
    int64_t fail_at = -1;
    int64_t iterations = -1;
    double iter_seconds = -1;
    double bytes = -1;
};

int cmd_run(const RunOptions& opt) {
    ClusterState cluster = load_cluster(opt.config);

    Scenario scenario;
    if (auto named = named_scenario(opt.scenario)) {
        scenario = *named;
    } else if (std::filesystem::exists(opt.scenario)) {
        scenario = scenario_from_config(KvConfig::load(opt.scenario));
    } else {
        std::cerr << "unknown scenario '" << opt.scenario
                  << "' (not a built-in name or a readable file)\n";
        return kExitUsage;
    }
    if (!opt.config.empty()) {
        // workload keys may live in the machine config (calibrate writes them there)
        KvConfig cfg = KvConfig::load(opt.config);
        if (cfg.has("workload.seconds_per_iteration"))
            scenario.workload.seconds_per_iteration =
                cfg.get_double("workload.seconds_per_iteration", 0.0);
    }

    if (!opt.strategy.empty()) {
        auto s = strategy_from_name(opt.strategy);
        if (!s) {
            std::cerr << "unknown strategy '" << opt.strategy << "'\n";
            return kExitUsage;
        }
        scenario.strategy = *s;
    }
    if (opt.nodes >= 0) scenario.nodes = static_cast<uint32_t>(opt.nodes);
    if (opt.cp_interval >= 0)
        scenario.workload.checkpoint_interval = static_cast<uint64_t>(opt.cp_interval);
    if (opt.iterations >= 0) scenario.workload.iterations = static_cast<uint64_t>(opt.iterations);
    if (opt.iter_seconds >= 0) scenario.workload.seconds_per_iteration = opt.iter_seconds;
    if (opt.bytes >= 0) scenario.workload.bytes_per_checkpoint = static_cast<uint64_t>(opt.bytes);
    if (opt.fail_at >= 0) scenario.fail_at = static_cast<uint64_t>(opt.fail_at);
    if (!opt.fail_kind.empty()) {
        if (opt.fail_kind == "crash") scenario.fail_kind = FailureKind::NODE_CRASH;
        else if (opt.fail_kind == "transient") scenario.fail_kind = FailureKind::PROCESS_TRANSIENT;
        else {
            std::cerr << "unknown failure kind '" << opt.fail_kind << "'\n";
            return kExitUsage;
        }
    }

    ScenarioResult res = run_scenario(cluster, scenario,
                                      std::filesystem::temp_directory_path().string());
    if (opt.out.empty())
        std::cout << res.metrics.to_csv();
    else
        write_file(opt.out, res.metrics.to_csv());
    if (!opt.events.empty()) write_file(opt.events, res.event_log_csv);

    if (res.infeasible_recovery) {
        std::cerr << "recovery infeasible: no checkpoint set can restore the failed nodes\n";
        return kExitInfeasible;
    }
    return kExitOk;
}

int cmd_calibrate(const std::string& target, const std::string& config,
                  const std::string& out) {
    ClusterState cluster = load_cluster(config);
    CalibrationReport rep = calibrate(target, cluster);
    std::cout << rep.message << "\n";
    if (!out.empty() && !rep.overrides.empty()) {
        std::string text = "# calibration overrides for target " + rep.target + "\n";
        if (!config.empty()) {
            std::ifstream f(config, std::ios::binary);
            std::ostringstream ss;
            ss << f.rdbuf();
            text = ss.str() + "\n" + text;
        }
        write_file(out, text + rep.overrides);
        std::cout << "wrote " << out << "\n";
    }
    return kExitOk;
}

int cmd_agg_pack(const std::string& container, const std::vector<std::string>& files,
                 uint32_t align) {
    std::vector<std::vector<uint8_t>> payloads;
    std::vector<uint64_t> sizes;
    for (const auto& f : files) {
        payloads.push_back(read_file(f));
        sizes.push_back(payloads.back().size());
    }
    ContainerWriter w(static_cast<uint32_t>(files.size()), sizes, align);
    for (uint32_t r = 0; r < files.size(); ++r) w.write_chunk(r, payloads[r]);
    w.save(container);
    std::cout << "packed " << files.size() << " ranks, " << w.total_size() << " bytes\n";
    return kExitOk;
}

int cmd_agg_unpack(const std::string& container, const std::string& outdir) {
    ContainerReader reader = ContainerReader::open(container);
    std::filesystem::create_directories(outdir);
    for (uint32_t r = 0; r < reader.header().n_ranks; ++r) {
        std::vector<uint8_t> data = reader.read_chunk(r);
        std::string path = outdir + "/rank" + std::to_string(r) + ".bin";
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot create " + path);
        f.write(reinterpret_cast<const char*>(data.data()),
                static_cast<std::streamsize>(data.size()));
    }
    std::cout << "unpacked " << reader.header().n_ranks << " ranks into " << outdir << "\n";
    return kExitOk;
}

int cmd_agg_inspect(const std::string& container) {
    ContainerReport rep = ContainerReader::open(container).inspect();
    std::cout << "ranks: " << rep.n_ranks << "\nstored bytes: " << rep.total_bytes
              << "\nfile size: " << rep.file_size << "\n";
    std::cout << "rank      offset      length    crc32c  state\n";
    char buf[96];
    for (const auto& c : rep.chunks) {
        std::snprintf(buf, sizeof(buf), "%4u %11llu %11llu  %08x  %s\n", c.entry.rank,
                      static_cast<unsigned long long>(c.entry.offset),
                      static_cast<unsigned long long>(c.entry.length), c.entry.crc32c,
                      c.state == ChunkState::VALID ? "VALID" : "CORRUPT");
        std::cout << buf;
    }
    return kExitOk;
}

int cmd_agg_verify(const std::string& container) {
    ContainerReport rep = ContainerReader::open(container).inspect();
    for (const auto& c : rep.chunks) {
        if (c.state != ChunkState::VALID) {
            std::cerr << "rank " << c.entry.rank << " CORRUPT at offset " << c.entry.offset
                      << "\n";
            return kExitInfeasible;
        }
    }
    std::cout << "OK: " << rep.n_ranks << " chunks valid\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deepckpt: multi-level checkpoint/restart simulator"};
    app.require_subcommand(1);

    RunOptions run_opt;
    CLI::App* run = app.add_subcommand("run", "run a scenario and emit metrics CSV");
    run->add_option("--scenario", run_opt.scenario,
                    "built-in name (xpic-scr, xor-vs-nam, weak-scale-io, fwi-resil) or a "
                    "scenario file")
        ->required();
    run->add_option("--config", run_opt.config, "machine config file");
    run->add_option("--strategy", run_opt.strategy,
                    "single|partner|buddy|distxor|namxor");
    run->add_option("--nodes", run_opt.nodes, "participating node count");
    run->add_option("--cp-interval", run_opt.cp_interval, "checkpoint every K iterations");
    run->add_option("--iterations", run_opt.iterations, "iterations per run");
    run->add_option("--iter-seconds", run_opt.iter_seconds, "seconds per iteration");
    run->add_option("--bytes", run_opt.bytes, "checkpoint bytes per node");
    run->add_option("--fail-at", run_opt.fail_at, "iteration during which the failure strikes");
    run->add_option("--fail-kind", run_opt.fail_kind, "crash|transient");
    run->add_option("--out", run_opt.out, "metrics CSV path (default: stdout)");
    run->add_option("--events", run_opt.events, "event log CSV path");

    std::string cal_target, cal_config, cal_out;
    CLI::App* cal = app.add_subcommand("calibrate", "solve workload parameters for a target");
    cal->add_option("--target", cal_target, "e.g. scr-overhead=8% or nam-xor-saving")
        ->required();
    cal->add_option("--config", cal_config, "machine config file");
    cal->add_option("--out", cal_out, "write the override config here");

    CLI::App* agg = app.add_subcommand("agg", "aggregation container utilities");
    agg->require_subcommand(1);

    std::string pack_container, unpack_container, unpack_outdir, inspect_container,
        verify_container;
    std::vector<std::string> pack_files;
    uint32_t pack_align = kDefaultBlockAlign;
    CLI::App* pack = agg->add_subcommand("pack", "pack rank files into one container");
    pack->add_option("container", pack_container)->required();
    pack->add_option("files", pack_files, "one input file per rank")->required();
    pack->add_option("--align", pack_align, "block alignment (power of two >= 512)");

    CLI::App* unpack = agg->add_subcommand("unpack", "extract every rank chunk");
    unpack->add_option("container", unpack_container)->required();
    unpack->add_option("outdir", unpack_outdir)->required();

    CLI::App* ins = agg->add_subcommand("inspect", "print the chunk table and checksums");
    ins->add_option("container", inspect_container)->required();

    CLI::App* ver = agg->add_subcommand("verify", "exit non-zero when any chunk is corrupt");
    ver->add_option("container", verify_container)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (run->parsed()) return cmd_run(run_opt);
        if (cal->parsed()) return cmd_calibrate(cal_target, cal_config, cal_out);
        if (pack->parsed()) return cmd_agg_pack(pack_container, pack_files, pack_align);
        if (unpack->parsed()) return cmd_agg_unpack(unpack_container, unpack_outdir);
        if (ins->parsed()) return cmd_agg_inspect(inspect_container);
        if (ver->parsed()) return cmd_agg_verify(verify_container);
    } catch (const Infeasible& e) {
        std::cerr << e.what() << "\n";
        return kExitInfeasible;
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
