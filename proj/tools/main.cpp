// Command-line front end: single episodes with full logs and plot data,
// paired benchmarks with table emission, gamma sweeps, and penalty-weight
// estimation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cbfmpc/bench.hpp"
#include "cbfmpc/log_io.hpp"
#include "cbfmpc/sim.hpp"

namespace {

using namespace cbfmpc;
namespace fs = std::filesystem;

struct Options {
    std::string model = "di";
    std::string controller = "ours";
    std::vector<double> gammas{0.08, 0.10, 0.12};
    double gamma = 0.1;
    double eta = 0.3;
    std::string alpha = "1000";
    int horizon = 8;
    int episodes = 100;
    std::uint64_t seed = 1;
    int pedestrians = 5;
    int alpha_samples = 25;
    double time_limit = 25.0;
    std::string out;
    std::string config_path;
    int threads = 0;
    bool timings = false;
    bool no_logs = false;
    bool controller_from_config = false;
};

ModelKind parse_model(const std::string& name) {
    if (name == "di") return ModelKind::DoubleIntegrator;
    if (name == "unicycle") return ModelKind::Unicycle;
    throw ConfigError("unknown model '" + name + "' (expected di|unicycle)");
}

// Config file mirrors every flag; flags given on the command line override.
void apply_config_file(Options& opt, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    if (j.contains("model")) opt.model = j["model"];
    if (j.contains("controller")) {
        opt.controller = j["controller"];
        opt.controller_from_config = true;
    }
    if (j.contains("gamma")) {
        if (j["gamma"].is_array())
            opt.gammas = j["gamma"].get<std::vector<double>>();
        else {
            opt.gamma = j["gamma"];
            opt.gammas = {opt.gamma};
        }
    }
    if (j.contains("eta")) opt.eta = j["eta"];
    if (j.contains("alpha"))
        opt.alpha = j["alpha"].is_string() ? j["alpha"].get<std::string>()
                                           : std::to_string(j["alpha"].get<double>());
    if (j.contains("horizon")) opt.horizon = j["horizon"];
    if (j.contains("episodes")) opt.episodes = j["episodes"];
    if (j.contains("seed")) opt.seed = j["seed"];
    if (j.contains("pedestrians")) opt.pedestrians = j["pedestrians"];
    if (j.contains("time_limit")) opt.time_limit = j["time_limit"];
    if (j.contains("out")) opt.out = j["out"];
    if (j.contains("threads")) opt.threads = j["threads"];
    if (j.contains("timings")) opt.timings = j["timings"];
}

void add_common_options(CLI::App* cmd, Options& opt) {
    cmd->add_option("--config", opt.config_path, "JSON config file mirroring these flags");
    cmd->add_option("--model", opt.model, "robot model: di|unicycle");
    cmd->add_option("--controller", opt.controller,
                    "controller: orca|mpc-dc|mpc-dcbf|scmpc-cbf|ours");
    cmd->add_option("--eta", opt.eta, "single-step decay coefficient eta");
    cmd->add_option("--alpha", opt.alpha, "penalty weight, or 'estimate'");
    cmd->add_option("--horizon", opt.horizon, "prediction horizon N");
    cmd->add_option("--seed", opt.seed, "base scenario seed");
    cmd->add_option("--pedestrians", opt.pedestrians, "number of pedestrians");
    cmd->add_option("--time-limit", opt.time_limit, "episode time limit [s]");
    cmd->add_option("--out", opt.out, "output directory");
    cmd->add_option("--threads", opt.threads, "worker threads (0 = auto)");
}

double resolve_alpha(const Options& opt, const RunConfig& rc, double gamma) {
    if (opt.alpha == "estimate")
        return penalty_campaign(rc, gamma).estimate.recommended_alpha;
    try {
        return std::stod(opt.alpha);
    } catch (const std::exception&) {
        throw ConfigError("--alpha expects a number or 'estimate', got '" + opt.alpha + "'");
    }
}

RunConfig make_run_config(const Options& opt) {
    RunConfig rc;
    rc.model = parse_model(opt.model);
    rc.gammas = opt.gammas;
    rc.eta = opt.eta;
    rc.horizon = opt.horizon;
    rc.episodes = opt.episodes;
    rc.base_seed = opt.seed;
    rc.n_pedestrians = opt.pedestrians;
    rc.alpha_samples = opt.alpha_samples;
    rc.scenario.time_limit = opt.time_limit;
    rc.threads = opt.threads;
    if (opt.alpha == "estimate") {
        rc.estimate_alpha = true;
    } else {
        rc.alpha = resolve_alpha(opt, rc, opt.gammas.front());
    }
    return rc;
}

int cmd_episode(const Options& opt) {
    ControllerConfig cc =
        ControllerConfig::make(parse_controller(opt.controller), parse_model(opt.model),
                               opt.gamma);
    cc.eta = opt.eta;
    cc.horizon = opt.horizon;
    {
        RunConfig rc = make_run_config(opt);
        cc.alpha = resolve_alpha(opt, rc, opt.gamma);
    }
    ScenarioParams sp;
    sp.time_limit = opt.time_limit;
    Scenario scenario = generate_scenario(opt.seed, opt.pedestrians, sp);
    EpisodeLog log = run_episode(scenario, cc);

    fs::path dir = opt.out.empty() ? fs::path(".") : fs::path(opt.out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "'");
    std::string stem =
        std::string("episode_") + controller_name(cc.kind) + "_" + std::to_string(opt.seed);
    write_episode_log(log, (dir / (stem + ".jsonl")).string(), opt.timings);
    emit_trajectory_plot_data(log, (dir / (stem + "_trajectory.csv")).string());
    write_trajectory_svg(log, (dir / (stem + "_trajectory.svg")).string());

    std::printf("episode seed=%llu controller=%s model=%s outcome=%s",
                static_cast<unsigned long long>(opt.seed), controller_name(cc.kind),
                opt.model.c_str(), outcome_name(log.outcome));
    if (log.outcome == Outcome::Success) std::printf(" T=%.2fs", log.navigation_time);
    std::printf(" failures=%d min_h=%.3f steps=%zu\n", log.failure_count, min_clearance(log),
                log.steps.size());
    std::printf("wrote %s/%s.jsonl (+ trajectory csv/svg)\n", dir.string().c_str(), stem.c_str());
    return 0;
}

int run_and_emit(const Options& opt, RunConfig rc, bool with_trend) {
    if (!opt.out.empty()) {
        std::error_code ec;
        fs::create_directories(opt.out, ec);
        if (ec) throw IoError("cannot create '" + opt.out + "'");
        if (!opt.no_logs) rc.out_dir = (fs::path(opt.out) / "logs").string();
    }
    auto summaries = run_benchmark(rc);
    std::string aligned = format_table(summaries, TableFormat::Aligned);
    std::fputs(aligned.c_str(), stdout);
    std::string trend;
    if (with_trend) {
        trend = trend_report(summaries);
        std::fputs(trend.c_str(), stdout);
    }
    if (!opt.out.empty()) {
        std::string model_tag = opt.model;
        emit_table(summaries, (fs::path(opt.out) / ("table_" + model_tag + ".csv")).string(),
                   TableFormat::Csv);
        emit_table(summaries, (fs::path(opt.out) / ("table_" + model_tag + ".txt")).string(),
                   TableFormat::Aligned);
        if (with_trend) {
            auto out = log_detail::open_out(
                (fs::path(opt.out) / ("trends_" + model_tag + ".txt")).string());
            out << trend;
        }
    }
    return 0;
}

int cmd_bench(const Options& opt, bool controller_given) {
    RunConfig rc = make_run_config(opt);
    if (controller_given) rc.controllers = {parse_controller(opt.controller)};
    return run_and_emit(opt, rc, false);
}

int cmd_sweep(const Options& opt) {
    RunConfig rc = make_run_config(opt);
    return run_and_emit(opt, rc, true);
}

int cmd_estimate_alpha(const Options& opt) {
    RunConfig rc = make_run_config(opt);
    PenaltyReport report = penalty_campaign(rc, opt.gamma);
    std::string text = penalty_report_text(report);
    std::fputs(text.c_str(), stdout);
    if (!opt.out.empty()) {
        std::error_code ec;
        fs::create_directories(opt.out, ec);
        if (ec) throw IoError("cannot create '" + opt.out + "'");
        auto out = log_detail::open_out((fs::path(opt.out) / "alpha_report.txt").string());
        out << text;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Safe crowd-navigation benchmark: MPC with CBF constraints vs ORCA"};
    app.require_subcommand(1);
    Options opt;

    auto* episode = app.add_subcommand("episode", "run one seeded episode, write full logs");
    add_common_options(episode, opt);
    episode->add_option("--gamma", opt.gamma, "CBF decay coefficient");
    episode->add_flag("--timings", opt.timings,
                      "include wall-clock solve times in the log (breaks byte determinism)");

    auto* bench = app.add_subcommand("bench", "run a paired benchmark and emit the table");
    add_common_options(bench, opt);
    bench->add_option("--gamma", opt.gammas, "gamma values (one cell per value)");
    bench->add_option("--episodes", opt.episodes, "episodes per cell");
    bench->add_flag("--no-logs", opt.no_logs, "skip episode log persistence");

    auto* sweep = app.add_subcommand("sweep", "gamma grid over all controllers + trend report");
    add_common_options(sweep, opt);
    sweep->add_option("--gamma", opt.gammas, "gamma grid");
    sweep->add_option("--episodes", opt.episodes, "episodes per cell");
    sweep->add_flag("--no-logs", opt.no_logs, "skip episode log persistence");

    auto* estimate = app.add_subcommand("estimate-alpha", "penalty-weight estimation campaign");
    add_common_options(estimate, opt);
    estimate->add_option("--gamma", opt.gamma, "gamma for the hard problem");
    estimate->add_option("--samples", opt.alpha_samples, "number of sampled states");

    try {
        // Config file values become defaults; explicit flags override them.
        for (int i = 1; i + 1 < argc; ++i)
            if (std::string(argv[i]) == "--config") apply_config_file(opt, argv[i + 1]);
        app.parse(argc, argv);
        if (episode->parsed()) return cmd_episode(opt);
        if (bench->parsed())
            return cmd_bench(opt, bench->count("--controller") > 0 ||
                                      opt.controller_from_config);
        if (sweep->parsed()) return cmd_sweep(opt);
        if (estimate->parsed()) return cmd_estimate_alpha(opt);
        return 2;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const cbfmpc::IoError& e) {
        std::fprintf(stderr, "I/O error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
