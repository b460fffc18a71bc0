#ifndef CBFMPC_BENCH_HPP
#define CBFMPC_BENCH_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cbfmpc/common.hpp"
#include "cbfmpc/log_io.hpp"
#include "cbfmpc/sim.hpp"
#include "cbfmpc/solver.hpp"

namespace cbfmpc {

inline constexpr const char* kBenchTableSchema = "bench-table/1";

/// One (controller, gamma) table row.
struct BenchmarkSummary {
    ControllerKind controller = ControllerKind::ScmpcCbfGcbf;
    std::string model = "di";
    std::optional<double> gamma;
    double eta = 0.3;
    double alpha = 0.0;
    double success_rate = 0.0;
    double collision_rate = 0.0;
    double timeout_rate = 0.0;
    double mean_nav_time = std::numeric_limits<double>::quiet_NaN();  // T over successes
    double mean_failures = std::numeric_limits<double>::quiet_NaN();  // FS
    double mean_solve_ms = std::numeric_limits<double>::quiet_NaN();  // ST
    long solver_calls = 0;
    int n_episodes = 0;
    std::uint64_t scenario_set_hash = 0;
};

struct RunConfig {
    ModelKind model = ModelKind::DoubleIntegrator;
    std::vector<ControllerKind> controllers;  // empty = all applicable
    std::vector<double> gammas{0.08, 0.10, 0.12};
    double eta = 0.3;
    double alpha = 1000.0;
    bool estimate_alpha = false;
    int alpha_samples = 25;
    double alpha_safety_factor = 2.0;
    int horizon = 8;
    int episodes = 100;
    std::uint64_t base_seed = 1;
    int n_pedestrians = 5;
    ScenarioParams scenario;
    int threads = 0;  // 0 = hardware concurrency
    std::string out_dir;

    std::vector<ControllerKind> effective_controllers() const {
        if (!controllers.empty()) return controllers;
        std::vector<ControllerKind> all{ControllerKind::Orca, ControllerKind::MpcDc,
                                        ControllerKind::MpcDcbf, ControllerKind::ScmpcCbf,
                                        ControllerKind::ScmpcCbfGcbf};
        if (model == ModelKind::Unicycle) all.erase(all.begin());  // VO needs holonomic motion
        return all;
    }

    void validate() const {
        if (episodes < 1) throw ConfigError("episodes must be >= 1");
        if (n_pedestrians < 0) throw ConfigError("pedestrians must be >= 0");
        for (double g : gammas)
            if (!(g > 0.0 && g <= 1.0)) throw ConfigError("gamma values must lie in (0, 1]");
        if (horizon < 1) throw ConfigError("horizon must be >= 1");
    }
};

namespace bench_detail {

/// Episodes distributed over a small worker pool; results land in seed
/// order, so aggregation is independent of scheduling.
inline std::vector<EpisodeLog> run_episodes(const std::vector<Scenario>& scenarios,
                                            const ControllerConfig& cc, int threads) {
    const int n = static_cast<int>(scenarios.size());
    std::vector<EpisodeLog> logs(n);
    int n_threads = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
    n_threads = std::clamp(n_threads, 1, n);
    if (n_threads == 1) {
        for (int i = 0; i < n; ++i) logs[i] = run_episode(scenarios[i], cc);
        return logs;
    }
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1))
            logs[i] = run_episode(scenarios[i], cc);
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    return logs;
}

inline std::uint64_t combined_scenario_hash(const std::vector<Scenario>& scenarios) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& sc : scenarios) {
        std::uint64_t x = scenario_hash(sc);
        for (int i = 0; i < 8; ++i) {
            h ^= (x >> (8 * i)) & 0xffu;
            h *= 1099511628211ull;
        }
    }
    return h;
}

inline std::string gamma_tag(const std::optional<double>& gamma) {
    if (!gamma) return "none";
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", *gamma);
    return buf;
}

}  // namespace bench_detail

/// Aggregates per-episode outcomes into one table row. T averages over
/// Success episodes only; ST averages over actual solver calls (brake steps
/// contribute the failed solve's time).
inline BenchmarkSummary summarize_episodes(const std::vector<EpisodeLog>& logs,
                                           ControllerKind controller,
                                           std::optional<double> gamma) {
    BenchmarkSummary s;
    s.controller = controller;
    s.gamma = gamma;
    s.n_episodes = static_cast<int>(logs.size());
    if (logs.empty()) throw ConfigError("cannot summarize zero episodes");
    s.model = logs.front().model;
    s.eta = logs.front().eta;
    s.alpha = logs.front().alpha;

    int success = 0, collision = 0, timeout = 0;
    double nav_sum = 0.0, failures = 0.0, solve_ms = 0.0;
    long calls = 0;
    for (const auto& log : logs) {
        switch (log.outcome) {
            case Outcome::Success:
                ++success;
                nav_sum += log.navigation_time;
                break;
            case Outcome::Collision: ++collision; break;
            case Outcome::Timeout: ++timeout; break;
        }
        failures += log.failure_count;
        solve_ms += log.total_solve_ms;
        calls += log.solver_calls;
    }
    const double n = static_cast<double>(logs.size());
    s.success_rate = success / n;
    s.collision_rate = collision / n;
    s.timeout_rate = timeout / n;
    s.mean_nav_time = success > 0 ? nav_sum / success
                                  : std::numeric_limits<double>::quiet_NaN();
    s.mean_failures = controller == ControllerKind::Orca
                          ? std::numeric_limits<double>::quiet_NaN()
                          : failures / n;
    s.mean_solve_ms =
        calls > 0 ? solve_ms / calls : std::numeric_limits<double>::quiet_NaN();
    s.solver_calls = calls;
    return s;
}

/// Remark-style penalty-weight selection over the scenario distribution.
struct PenaltyReport {
    PenaltyEstimate estimate;
    double gamma = 0.1;
    int n_samples = 0;
    std::vector<int> histogram;  // 10 bins over [0, max]
    double bin_width = 0.0;
};

inline PenaltyReport penalty_campaign(const RunConfig& config, double gamma) {
    if (config.alpha_samples < 1) throw ConfigError("alpha_samples must be >= 1");
    SystemModel model = config.model == ModelKind::DoubleIntegrator
                            ? SystemModel::double_integrator(config.scenario.dt)
                            : SystemModel::unicycle(config.scenario.dt);
    OcpSpec spec = OcpSpec::defaults_for(model, Formulation::MpcDcbf);
    spec.horizon = config.horizon;
    spec.goal = config.scenario.robot_goal;
    spec.barrier.gamma = gamma;
    spec.barrier.eta = config.eta;

    // Initial states drawn from the crossing distribution: robot anywhere in
    // the workspace, pedestrians on their circle start points moving toward
    // their goals at preferred speed.
    auto sampler = [&config, &model](int i) {
        Scenario sc = generate_scenario(config.base_seed + 7777 + i, config.n_pedestrians,
                                        config.scenario);
        Rng rng(sc.seed ^ 0x9e3779b97f4a7c15ull);
        State x(model.state_dim());
        x(0) = rng.uniform(-4.0, 4.0);
        x(1) = rng.uniform(-4.0, 4.0);
        if (model.kind == ModelKind::DoubleIntegrator) {
            x(2) = rng.uniform(-1.0, 1.0);
            x(3) = rng.uniform(-1.0, 1.0);
        } else {
            x(2) = rng.uniform(-kPi, kPi);
        }
        std::vector<ObstacleTrack> tracks;
        for (int p = 0; p < sc.n_pedestrians(); ++p) {
            Vector2d dir = sc.pedestrian_goals[p] - sc.pedestrian_starts[p];
            double dist = dir.norm();
            tracks.push_back({sc.pedestrian_starts[p],
                              dist > 1e-9 ? Vector2d(dir / dist) : Vector2d(0, 0),
                              sc.params.pedestrian_radius});
        }
        return std::make_pair(x, tracks);
    };

    PenaltyReport report;
    report.gamma = gamma;
    report.n_samples = config.alpha_samples;
    report.estimate = estimate_penalty_weight(spec, model, sampler, config.alpha_samples,
                                              config.alpha_safety_factor);
    report.histogram.assign(10, 0);
    double max = report.estimate.max_multiplier_norm;
    report.bin_width = max > 0 ? max / 10.0 : 1.0;
    for (double v : report.estimate.sample_norms) {
        int bin = std::min(9, static_cast<int>(v / report.bin_width));
        report.histogram[bin] += 1;
    }
    return report;
}

inline std::string penalty_report_text(const PenaltyReport& r) {
    std::ostringstream out;
    out << "penalty-weight estimation (gamma " << bench_detail::gamma_tag(r.gamma) << ", "
        << r.n_samples << " samples)\n";
    out << "  feasible samples: " << r.estimate.sample_norms.size()
        << ", skipped infeasible: " << r.estimate.skipped_infeasible << "\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "  max ||lambda*||_inf: %.4f\n",
                  r.estimate.max_multiplier_norm);
    out << buf;
    std::snprintf(buf, sizeof(buf), "  recommended alpha:   %.4f%s\n",
                  r.estimate.recommended_alpha,
                  r.estimate.floored ? "  (floored: no active CBF rows)" : "");
    out << buf;
    out << "  histogram of per-sample norms:\n";
    for (int b = 0; b < 10; ++b) {
        std::snprintf(buf, sizeof(buf), "    [%7.3f, %7.3f) %s\n", b * r.bin_width,
                      (b + 1) * r.bin_width, std::string(r.histogram[b], '#').c_str());
        out << buf;
    }
    return out.str();
}

/**
 * Runs the paired benchmark: every (controller, gamma) cell sees the
 * identical scenario set seeded base_seed..base_seed+n-1. Episode logs are
 * persisted (with timings) under out_dir when it is set.
 */
inline std::vector<BenchmarkSummary> run_benchmark(const RunConfig& config) {
    config.validate();
    std::vector<Scenario> scenarios;
    scenarios.reserve(config.episodes);
    for (int e = 0; e < config.episodes; ++e)
        scenarios.push_back(generate_scenario(config.base_seed + e, config.n_pedestrians,
                                              config.scenario));
    const std::uint64_t set_hash = bench_detail::combined_scenario_hash(scenarios);

    std::vector<BenchmarkSummary> summaries;
    for (ControllerKind controller : config.effective_controllers()) {
        std::vector<std::optional<double>> cell_gammas;
        if (controller_uses_gamma(controller))
            for (double g : config.gammas) cell_gammas.emplace_back(g);
        else
            cell_gammas.emplace_back(std::nullopt);

        for (const auto& gamma : cell_gammas) {
            ControllerConfig cc =
                ControllerConfig::make(controller, config.model, gamma.value_or(0.1));
            cc.eta = config.eta;
            cc.horizon = config.horizon;
            cc.alpha = config.alpha;
            if (config.estimate_alpha && controller_uses_gamma(controller) &&
                controller != ControllerKind::MpcDcbf)
                cc.alpha = penalty_campaign(config, *gamma).estimate.recommended_alpha;

            std::vector<EpisodeLog> logs =
                bench_detail::run_episodes(scenarios, cc, config.threads);
            BenchmarkSummary s = summarize_episodes(logs, controller, gamma);
            s.scenario_set_hash = set_hash;
            summaries.push_back(s);

            if (!config.out_dir.empty()) {
                namespace fs = std::filesystem;
                fs::path dir = fs::path(config.out_dir) /
                               (s.model + "_" + controller_name(controller) + "_" +
                                bench_detail::gamma_tag(gamma));
                std::error_code ec;
                fs::create_directories(dir, ec);
                if (ec) throw IoError("cannot create '" + dir.string() + "'");
                for (int e = 0; e < config.episodes; ++e)
                    write_episode_log(logs[e],
                                      (dir / ("ep_" + std::to_string(scenarios[e].seed) +
                                              ".jsonl"))
                                          .string(),
                                      /*include_timings=*/true);
            }
        }
    }
    return summaries;
}

/// The gamma grid of the quantitative comparison; identical to
/// run_benchmark with the grid pinned to the requested values.
inline std::vector<BenchmarkSummary> gamma_sweep(RunConfig config,
                                                 std::vector<double> gammas = {0.08, 0.10,
                                                                               0.12}) {
    config.gammas = std::move(gammas);
    return run_benchmark(config);
}

/// Rebuilds one cell's summary from its persisted episode logs. Outcome,
/// failure counts and solver statistics are recomputed from the step
/// records and cross-checked against the trailer.
inline BenchmarkSummary recompute_summary(const std::vector<std::string>& log_paths,
                                          ControllerKind controller,
                                          std::optional<double> gamma) {
    std::vector<EpisodeLog> logs;
    for (const auto& path : log_paths) {
        EpisodeLog log = read_episode_log(path);
        // Re-derive everything the summary needs from the raw step stream.
        int failures = 0, calls = 0;
        double solve_ms = 0.0;
        for (const auto& rec : log.steps) {
            if (rec.brake) ++failures;
            if (rec.status != StepStatus::None) {
                ++calls;
                solve_ms += rec.solve_time_ms;
            }
        }
        const StepRecord& last = log.steps.back();
        Outcome outcome = Outcome::Timeout;
        if (last.h_min < 0.0)
            outcome = Outcome::Collision;
        else if ((last.robot_state.head<2>() - log.robot_goal).norm() <= log.goal_tolerance)
            outcome = Outcome::Success;
        if (failures != log.failure_count || calls != log.solver_calls ||
            outcome != log.outcome)
            throw IoError("trailer does not match step records in '" + path + "'");
        log.total_solve_ms = solve_ms;
        logs.push_back(std::move(log));
    }
    return summarize_episodes(logs, controller, gamma);
}

enum class TableFormat { Csv, Aligned };

namespace bench_detail {

inline std::string cell(double v, int decimals) {
    if (!std::isfinite(v)) return "-";
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

}  // namespace bench_detail

/// Table emission with the standard benchmark column set. Rates carry 3
/// decimals, times 2; non-optimizing controllers get empty FS/ST cells.
inline std::string format_table(std::vector<BenchmarkSummary> summaries, TableFormat format) {
    if (summaries.empty()) throw ConfigError("emit_table requires at least one summary");
    std::stable_sort(summaries.begin(), summaries.end(),
                     [](const BenchmarkSummary& a, const BenchmarkSummary& b) {
                         if (a.controller != b.controller)
                             return static_cast<int>(a.controller) <
                                    static_cast<int>(b.controller);
                         return a.gamma.value_or(-1.0) < b.gamma.value_or(-1.0);
                     });
    const char* headers[] = {"Controller", "gamma", "S",  "C", "T",
                             "FS",         "ST",    "timeout_rate", "n"};
    std::vector<std::vector<std::string>> rows;
    for (const auto& s : summaries) {
        rows.push_back({controller_name(s.controller),
                        s.gamma ? bench_detail::cell(*s.gamma, 2) : "-",
                        bench_detail::cell(s.success_rate, 3),
                        bench_detail::cell(s.collision_rate, 3),
                        bench_detail::cell(s.mean_nav_time, 2),
                        bench_detail::cell(s.mean_failures, 3),
                        bench_detail::cell(s.mean_solve_ms, 2),
                        bench_detail::cell(s.timeout_rate, 3),
                        std::to_string(s.n_episodes)});
    }
    std::ostringstream out;
    out << "# schema: " << kBenchTableSchema << "\n";
    if (format == TableFormat::Csv) {
        for (int c = 0; c < 9; ++c) out << (c ? "," : "") << headers[c];
        out << "\n";
        for (const auto& row : rows) {
            for (int c = 0; c < 9; ++c) out << (c ? "," : "") << row[c];
            out << "\n";
        }
    } else {
        std::vector<std::size_t> width(9);
        for (int c = 0; c < 9; ++c) width[c] = std::string(headers[c]).size();
        for (const auto& row : rows)
            for (int c = 0; c < 9; ++c) width[c] = std::max(width[c], row[c].size());
        auto emit_row = [&](const std::vector<std::string>& row) {
            for (int c = 0; c < 9; ++c) {
                out << row[c] << std::string(width[c] - row[c].size() + 2, ' ');
            }
            out << "\n";
        };
        emit_row({headers, headers + 9});
        for (const auto& row : rows) emit_row(row);
    }
    return out.str();
}

inline void emit_table(const std::vector<BenchmarkSummary>& summaries, const std::string& path,
                       TableFormat format) {
    auto out = log_detail::open_out(path);
    out << format_table(summaries, format);
}

/// Plot-data emission for one episode (per-agent series + labeled instants).
inline void emit_trajectory_plot_data(const EpisodeLog& log, const std::string& path) {
    write_trajectory_csv(log, path);
}

/// 95% Wilson score interval for a binomial rate.
inline std::pair<double, double> wilson_interval(double p, int n, double z = 1.959963984540054) {
    if (n <= 0) return {0.0, 1.0};
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
    return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

/// Per-controller monotone-trend report (S and T versus gamma) with Wilson
/// intervals, emitted alongside the raw table.
inline std::string trend_report(const std::vector<BenchmarkSummary>& summaries) {
    std::ostringstream out;
    for (ControllerKind k :
         {ControllerKind::Orca, ControllerKind::MpcDc, ControllerKind::MpcDcbf,
          ControllerKind::ScmpcCbf, ControllerKind::ScmpcCbfGcbf}) {
        std::vector<const BenchmarkSummary*> cells;
        for (const auto& s : summaries)
            if (s.controller == k && s.gamma) cells.push_back(&s);
        std::sort(cells.begin(), cells.end(),
                  [](auto* a, auto* b) { return *a->gamma < *b->gamma; });
        if (cells.size() < 2) continue;
        bool s_noninc = true, t_noninc = true, fs_nondec = true;
        for (std::size_t i = 1; i < cells.size(); ++i) {
            s_noninc = s_noninc && cells[i]->success_rate <= cells[i - 1]->success_rate + 1e-12;
            if (std::isfinite(cells[i]->mean_nav_time) &&
                std::isfinite(cells[i - 1]->mean_nav_time))
                t_noninc = t_noninc &&
                           cells[i]->mean_nav_time <= cells[i - 1]->mean_nav_time + 1e-12;
            fs_nondec = fs_nondec &&
                        cells[i]->mean_failures >= cells[i - 1]->mean_failures - 1e-12;
        }
        out << controller_name(k) << ":\n";
        out << "  S nonincreasing with gamma: " << (s_noninc ? "yes" : "no") << "\n";
        out << "  T nonincreasing with gamma: " << (t_noninc ? "yes" : "no") << "\n";
        out << "  FS nondecreasing with gamma: " << (fs_nondec ? "yes" : "no") << "\n";
        for (const auto* c : cells) {
            auto [lo, hi] = wilson_interval(c->success_rate, c->n_episodes);
            char buf[128];
            std::snprintf(buf, sizeof(buf),
                          "  gamma %.2f: S %.3f (95%% Wilson [%.3f, %.3f])\n", *c->gamma,
                          c->success_rate, lo, hi);
            out << buf;
        }
    }
    return out.str();
}

}  // namespace cbfmpc

#endif  // CBFMPC_BENCH_HPP
