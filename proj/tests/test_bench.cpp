#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "deepckpt/bench.hpp"

using namespace deepckpt;

namespace {

ClusterState default_cluster() { return build_cluster(default_cluster_spec()); }

double row_total(const ScenarioResult& r, const std::string& scenario) {
    const MetricsRow* row = r.metrics.find(scenario);
    REQUIRE(row != nullptr);
    return row->total_s;
}

}  // namespace

TEST_CASE("calibration solves the iteration time from the checkpoint cost") {
    ClusterState c = default_cluster();
    CalibrationReport rep = calibrate("scr-overhead=8%", c);

    StrategyTiming t = price_strategy(c, Strategy::PARTNER, 16, 8000000000ull, CkptKnobs{});
    // 10 checkpoints at 8% of 100 iterations: t_iter = 1.25 * t_cp
    CHECK(rep.solved_value == Catch::Approx(1.25 * t.per_node_overhead).epsilon(1e-12));
    CHECK(rep.achieved_pct == Catch::Approx(8.0).margin(1e-9));
    CHECK(rep.overrides.find("workload.seconds_per_iteration") != std::string::npos);

    CHECK_THROWS_AS(calibrate("scr-overhead=0%", c), Infeasible);
    CHECK_THROWS_AS(calibrate("warp-drive=9", c), Infeasible);
}

TEST_CASE("calibration reports the NAM XOR saving and its band") {
    CalibrationReport rep = calibrate("nam-xor-saving", default_cluster());
    CHECK(rep.achieved_pct > 40.0);
    CHECK(rep.achieved_pct < 70.0);
    CHECK(rep.in_band);  // defaults sit inside the 50-65% window
}

TEST_CASE("xpic-scr emits four bars with the documented shape") {
    ClusterState c = default_cluster();
    ScenarioResult res = run_scenario(c, scenario_xpic_scr());
    REQUIRE(res.metrics.rows.size() == 4);
    CHECK_FALSE(res.infeasible_recovery);

    double base = row_total(res, "xpic-scr[nocp,noerr]");
    double cp = row_total(res, "xpic-scr[cp,noerr]");
    double nocp_err = row_total(res, "xpic-scr[nocp,err]");
    double cp_err = row_total(res, "xpic-scr[cp,err]");

    // baseline sanity: the untouched run is the fastest bar
    CHECK(base < cp);
    CHECK(base < nocp_err);
    CHECK(base < cp_err);

    // calibrated checkpoint overhead: 8% +- 0.5 points
    double overhead_pct = (cp - base) / base * 100.0;
    CHECK(overhead_pct > 7.5);
    CHECK(overhead_pct < 8.5);

    // failure-case savings within the documented band
    const MetricsRow* err_row = res.metrics.find("xpic-scr[cp,err]");
    CHECK(err_row->savings_pct >= 13.0);
    CHECK(err_row->savings_pct <= 33.0);
    CHECK((nocp_err - cp_err) / nocp_err * 100.0 == Catch::Approx(err_row->savings_pct));
    CHECK(err_row->recovery_s > 0);
}

TEST_CASE("xor-vs-nam pairs the strategies and lands the saving in the band") {
    ClusterState c = default_cluster();
    ScenarioResult res = run_scenario(c, scenario_xor_vs_nam());
    REQUIRE(res.metrics.rows.size() == 2);

    const MetricsRow* dist = res.metrics.find("xor-vs-nam[distxor]");
    const MetricsRow* nam = res.metrics.find("xor-vs-nam[namxor]");
    REQUIRE(dist != nullptr);
    REQUIRE(nam != nullptr);
    CHECK(nam->ckpt_overhead_s < dist->ckpt_overhead_s);
    CHECK(nam->savings_pct >= 40.0);
    CHECK(nam->savings_pct <= 70.0);
    CHECK(nam->bytes_nam > 0);
    CHECK(dist->bytes_nam == 0);
}

TEST_CASE("weak-scale-io: local time is flat, global time grows, 16-node gap >= 3x") {
    ClusterState c = default_cluster();
    ScenarioResult res = run_scenario(c, scenario_weak_scale_io());

    std::vector<double> local, global;
    for (const auto& row : res.metrics.rows) {
        if (row.strategy == "local") local.push_back(row.total_s);
        if (row.strategy == "global") global.push_back(row.total_s);
    }
    REQUIRE(local.size() == 4);
    REQUIRE(global.size() == 4);

    for (double t : local)
        CHECK(std::abs(t - local[0]) / local[0] < 0.01);
    for (size_t i = 1; i < global.size(); ++i) CHECK(global[i] > global[i - 1]);
    CHECK(global[3] / local[3] >= 3.0);
}

TEST_CASE("fwi-resil: resilient beats naive restart and logging stays under 1%") {
    ClusterState c = default_cluster();
    auto tmp = std::filesystem::temp_directory_path() / "bench_fwi";
    std::filesystem::create_directories(tmp);
    ScenarioResult res = run_scenario(c, scenario_fwi_resil(), tmp.string());

    double nofail = row_total(res, "fwi-resil[nofail]");
    double naive = row_total(res, "fwi-resil[naive]");
    double resil = row_total(res, "fwi-resil[resilient]");

    CHECK(resil <= 1.25 * nofail);
    CHECK(naive / nofail > 1.8);
    CHECK(naive / nofail < 2.2);
    CHECK(resil < naive);

    const MetricsRow* logging = res.metrics.find("fwi-resil[logging]");
    REQUIRE(logging != nullptr);
    CHECK(logging->savings_pct < 1.0);  // persist overhead as a percentage of work
    std::filesystem::remove_all(tmp);
}

TEST_CASE("scenario runs are reproducible byte for byte") {
    ClusterState c = default_cluster();
    ScenarioResult a = run_scenario(c, scenario_xor_vs_nam());
    ScenarioResult b = run_scenario(c, scenario_xor_vs_nam());
    CHECK(a.metrics.to_csv() == b.metrics.to_csv());
    CHECK(a.event_log_csv == b.event_log_csv);
}

TEST_CASE("checkpointed failed runs never lose more than the checkpoint overhead") {
    ClusterState c = default_cluster();
    for (uint64_t fail_at : {15ull, 55ull, 95ull}) {
        Scenario s = scenario_xpic_scr();
        s.fail_at = fail_at;
        ScenarioResult res = run_scenario_four_bars(c, s);
        double nocp_err = row_total(res, "xpic-scr[nocp,err]");
        double cp_err = row_total(res, "xpic-scr[cp,err]");
        const MetricsRow* cp_row = res.metrics.find("xpic-scr[cp,err]");
        CHECK(cp_err <= nocp_err + cp_row->ckpt_overhead_s + cp_row->recovery_s);
    }
}

TEST_CASE("custom scenarios run through the generic loop") {
    ClusterState c = default_cluster();
    Scenario s;
    s.name = "mini";
    s.nodes = 4;
    s.strategy = Strategy::BUDDY;
    s.workload.iterations = 20;
    s.workload.checkpoint_interval = 5;
    s.workload.bytes_per_checkpoint = 1 << 20;  // materialized
    s.workload.seconds_per_iteration = 1.0;
    s.fail_at = 12;
    s.fail_kind = FailureKind::PROCESS_TRANSIENT;

    ScenarioResult res = run_scenario(c, s);
    REQUIRE(res.metrics.rows.size() == 1);
    CHECK_FALSE(res.infeasible_recovery);
    const MetricsRow& row = res.metrics.rows[0];
    CHECK(row.recovery_s > 0);
    CHECK(row.total_s > 20.0);
    CHECK(row.bytes_local > 0);
}

TEST_CASE("a crash without redundancy is reported infeasible in-band") {
    ClusterState c = default_cluster();
    Scenario s;
    s.name = "fragile";
    s.nodes = 4;
    s.strategy = Strategy::SINGLE;
    s.workload.iterations = 20;
    s.workload.checkpoint_interval = 5;
    s.workload.bytes_per_checkpoint = 1 << 20;
    s.workload.seconds_per_iteration = 1.0;
    s.fail_at = 12;
    s.fail_kind = FailureKind::NODE_CRASH;

    ScenarioResult res = run_scenario(c, s);
    CHECK(res.infeasible_recovery);
}

TEST_CASE("scenario files parse over the named defaults") {
    KvConfig cfg = KvConfig::parse(
        "scenario.name = xpic-scr\n"
        "scenario.nodes = 8\n"
        "scenario.strategy = buddy\n"
        "workload.iterations = 50\n"
        "scenario.fail_kind = transient\n");
    Scenario s = scenario_from_config(cfg);
    CHECK(s.name == "xpic-scr");
    CHECK(s.nodes == 8);
    CHECK(s.strategy == Strategy::BUDDY);
    CHECK(s.workload.iterations == 50);
    CHECK(s.workload.bytes_per_checkpoint == 8000000000ull);  // inherited
    CHECK(s.fail_kind == FailureKind::PROCESS_TRANSIENT);

    CHECK_THROWS_AS(scenario_from_config(KvConfig::parse("scenario.strategy = raid6\n")),
                    ScenarioError);

    Scenario bad = scenario_xpic_scr();
    bad.nodes = 200;
    CHECK_THROWS_AS(bad.validate(default_cluster()), ScenarioError);
}
