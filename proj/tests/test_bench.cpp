#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "cbfmpc/bench.hpp"
#include "test_support.hpp"

using namespace cbfmpc;

namespace {

EpisodeLog outcome_log(Outcome o, double t = 10.0) {
    EpisodeLog log;
    log.model = "di";
    log.outcome = o;
    if (o == Outcome::Success) log.navigation_time = t;
    log.failure_count = 0;
    log.solver_calls = 10;
    log.total_solve_ms = 50.0;
    return log;
}

}  // namespace

TEST_CASE("outcome counting yields the documented rates") {
    std::vector<EpisodeLog> logs{outcome_log(Outcome::Success, 8.0),
                                 outcome_log(Outcome::Collision),
                                 outcome_log(Outcome::Success, 12.0),
                                 outcome_log(Outcome::Timeout)};
    auto s = summarize_episodes(logs, ControllerKind::ScmpcCbfGcbf, 0.1);
    CHECK(s.success_rate == Catch::Approx(0.5));
    CHECK(s.collision_rate == Catch::Approx(0.25));
    CHECK(s.timeout_rate == Catch::Approx(0.25));
    CHECK(s.success_rate + s.collision_rate + s.timeout_rate == Catch::Approx(1.0).margin(1e-12));
    CHECK(s.mean_nav_time == Catch::Approx(10.0));  // over successes only
    CHECK(s.mean_solve_ms == Catch::Approx(5.0));
}

TEST_CASE("ORCA rows leave the solver columns empty") {
    std::vector<EpisodeLog> logs{outcome_log(Outcome::Success)};
    logs[0].solver_calls = 0;
    logs[0].total_solve_ms = 0;
    auto s = summarize_episodes(logs, ControllerKind::Orca, std::nullopt);
    CHECK(std::isnan(s.mean_failures));
    CHECK(std::isnan(s.mean_solve_ms));
    std::string table = format_table({s}, TableFormat::Csv);
    CHECK(table.find("orca,-,1.000,0.000,10.00,-,-,0.000,1") != std::string::npos);
}

TEST_CASE("table formatting is pinned") {
    BenchmarkSummary s;
    s.controller = ControllerKind::ScmpcCbfGcbf;
    s.gamma = 0.08;
    s.success_rate = 0.996;
    s.collision_rate = 0.004;
    s.timeout_rate = 0.0;
    s.mean_nav_time = 14.349;
    s.mean_failures = 0.374;
    s.mean_solve_ms = 55.081;
    s.n_episodes = 500;
    std::string csv = format_table({s}, TableFormat::Csv);
    CHECK(csv.find("# schema: bench-table/1") == 0);
    CHECK(csv.find("Controller,gamma,S,C,T,FS,ST,timeout_rate,n") != std::string::npos);
    CHECK(csv.find("ours,0.08,0.996,0.004,14.35,0.374,55.08,0.000,500") != std::string::npos);
    CHECK_THROWS_AS(format_table({}, TableFormat::Csv), ConfigError);
}

TEST_CASE("table rows are ordered by controller then gamma") {
    std::vector<BenchmarkSummary> summaries;
    for (double g : {0.12, 0.08, 0.10}) {
        BenchmarkSummary s;
        s.controller = ControllerKind::ScmpcCbfGcbf;
        s.gamma = g;
        s.n_episodes = 1;
        summaries.push_back(s);
    }
    BenchmarkSummary orca;
    orca.controller = ControllerKind::Orca;
    orca.n_episodes = 1;
    summaries.push_back(orca);
    std::string csv = format_table(summaries, TableFormat::Csv);
    auto p_orca = csv.find("orca");
    auto p08 = csv.find("ours,0.08");
    auto p10 = csv.find("ours,0.10");
    auto p12 = csv.find("ours,0.12");
    REQUIRE(p_orca != std::string::npos);
    CHECK(p_orca < p08);
    CHECK(p08 < p10);
    CHECK(p10 < p12);
}

TEST_CASE("paired benchmark shares scenarios and reproduces itself") {
    RunConfig rc;
    rc.model = ModelKind::DoubleIntegrator;
    rc.controllers = {ControllerKind::Orca, ControllerKind::ScmpcCbfGcbf};
    rc.gammas = {0.1};
    rc.episodes = 4;
    rc.base_seed = 11;
    auto s1 = run_benchmark(rc);
    auto s2 = run_benchmark(rc);
    REQUIRE(s1.size() == 2);  // orca (no gamma) + ours at one gamma
    for (std::size_t i = 0; i < s1.size(); ++i) {
        CHECK(s1[i].scenario_set_hash == s2[i].scenario_set_hash);
        CHECK(s1[i].success_rate == s2[i].success_rate);
        CHECK(s1[i].collision_rate == s2[i].collision_rate);
        CHECK((s1[i].mean_failures == s2[i].mean_failures ||
               (std::isnan(s1[i].mean_failures) && std::isnan(s2[i].mean_failures))));
        CHECK(s1[i].n_episodes == s2[i].n_episodes);
    }
    CHECK(s1[0].scenario_set_hash == s1[1].scenario_set_hash);  // paired cells
}

TEST_CASE("sweep emits one row per controller-gamma cell") {
    RunConfig rc;
    rc.model = ModelKind::DoubleIntegrator;
    rc.controllers = {ControllerKind::MpcDcbf, ControllerKind::ScmpcCbfGcbf};
    rc.episodes = 2;
    rc.base_seed = 21;
    auto rows = gamma_sweep(rc, {0.08, 0.10, 0.12});
    CHECK(rows.size() == 6);
    std::string trends = trend_report(rows);
    CHECK(trends.find("mpc-dcbf:") != std::string::npos);
    CHECK(trends.find("ours:") != std::string::npos);
    CHECK(trends.find("Wilson") != std::string::npos);
}

TEST_CASE("summaries recompute exactly from persisted logs") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "cbfmpc_test_bench";
    fs::remove_all(dir);

    RunConfig rc;
    rc.model = ModelKind::DoubleIntegrator;
    rc.controllers = {ControllerKind::ScmpcCbfGcbf};
    rc.gammas = {0.1};
    rc.episodes = 3;
    rc.base_seed = 31;
    rc.out_dir = dir.string();
    auto summaries = run_benchmark(rc);
    REQUIRE(summaries.size() == 1);

    std::vector<std::string> paths;
    for (int e = 0; e < rc.episodes; ++e)
        paths.push_back((dir / "di_ours_0.10" / ("ep_" + std::to_string(rc.base_seed + e) +
                                                 ".jsonl"))
                            .string());
    auto recomputed = recompute_summary(paths, ControllerKind::ScmpcCbfGcbf, 0.1);
    recomputed.scenario_set_hash = summaries[0].scenario_set_hash;
    CHECK(format_table({recomputed}, TableFormat::Csv) ==
          format_table({summaries[0]}, TableFormat::Csv));
    fs::remove_all(dir);
}

TEST_CASE("penalty campaign reports the maximum and a safety margin") {
    RunConfig rc;
    rc.model = ModelKind::DoubleIntegrator;
    rc.alpha_samples = 8;
    rc.base_seed = 5;
    PenaltyReport report = penalty_campaign(rc, 0.1);
    CHECK(report.estimate.recommended_alpha > 0.0);
    CHECK(report.estimate.recommended_alpha >=
          report.estimate.max_multiplier_norm * rc.alpha_safety_factor - 1e-12);
    CHECK(static_cast<int>(report.estimate.sample_norms.size()) +
              report.estimate.skipped_infeasible ==
          8);
    std::string text = penalty_report_text(report);
    CHECK(text.find("recommended alpha") != std::string::npos);
    RunConfig bad = rc;
    bad.alpha_samples = 0;
    CHECK_THROWS_AS(penalty_campaign(bad, 0.1), ConfigError);
}

TEST_CASE("wilson interval brackets the point estimate") {
    auto [lo, hi] = wilson_interval(0.9, 100);
    CHECK(lo < 0.9);
    CHECK(hi > 0.9);
    CHECK(lo > 0.8);
    CHECK(hi < 0.97);
    auto [l0, h0] = wilson_interval(0.0, 50);
    CHECK(l0 < 1e-12);
    CHECK(h0 > 0.0);
}
