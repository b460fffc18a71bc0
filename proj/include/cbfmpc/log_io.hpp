#ifndef CBFMPC_LOG_IO_HPP
#define CBFMPC_LOG_IO_HPP

#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbfmpc/common.hpp"
#include "cbfmpc/sim.hpp"

namespace cbfmpc {

inline constexpr const char* kEpisodeLogSchema = "episode-log/1";
inline constexpr const char* kTrajectorySchema = "trajectory/1";

namespace log_detail {

inline nlohmann::json finite_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

inline double null_or_double(const nlohmann::json& j, double fallback) {
    return j.is_null() ? fallback : j.get<double>();
}

inline std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    return out;
}

}  // namespace log_detail

/**
 * Line-delimited episode log: a header record, one record per step, and a
 * trailer with the outcome and totals. Wall-clock timings are included only
 * on request so that identical runs serialize to identical bytes.
 */
inline void write_episode_log(const EpisodeLog& log, const std::string& path,
                              bool include_timings = false) {
    auto out = log_detail::open_out(path);
    nlohmann::json header{{"schema", kEpisodeLogSchema},
                          {"kind", "header"},
                          {"seed", log.seed},
                          {"controller", log.controller},
                          {"model", log.model},
                          {"gamma", log.gamma},
                          {"eta", log.eta},
                          {"alpha", log.alpha},
                          {"horizon", log.horizon},
                          {"dt", log.dt},
                          {"time_limit", log.time_limit},
                          {"goal_tolerance", log.goal_tolerance},
                          {"robot_radius", log.robot_radius},
                          {"pedestrian_radius", log.pedestrian_radius},
                          {"goal", {log.robot_goal.x(), log.robot_goal.y()}},
                          {"n_pedestrians", log.n_pedestrians},
                          {"timings", include_timings}};
    out << header.dump() << "\n";
    for (const auto& rec : log.steps) {
        nlohmann::json j{{"kind", "step"},
                         {"step", rec.step},
                         {"t", rec.t},
                         {"robot", std::vector<double>(rec.robot_state.begin(),
                                                       rec.robot_state.end())},
                         {"control", {rec.control.x(), rec.control.y()}},
                         {"h_min", log_detail::finite_or_null(rec.h_min)},
                         {"status", step_status_name(rec.status)},
                         {"brake", rec.brake},
                         {"slack_total", rec.slack_total},
                         {"solver_iterations", rec.solver_iterations}};
        auto peds = nlohmann::json::array();
        for (const auto& p : rec.pedestrians) peds.push_back({p(0), p(1), p(2), p(3)});
        j["pedestrians"] = peds;
        if (include_timings) j["solve_ms"] = rec.solve_time_ms;
        out << j.dump() << "\n";
    }
    nlohmann::json trailer{{"kind", "trailer"},
                           {"outcome", outcome_name(log.outcome)},
                           {"navigation_time", log_detail::finite_or_null(log.navigation_time)},
                           {"failure_count", log.failure_count},
                           {"solver_calls", log.solver_calls},
                           {"n_steps", log.steps.size()},
                           {"min_h", log_detail::finite_or_null(min_clearance(log))}};
    if (include_timings) trailer["total_solve_ms"] = log.total_solve_ms;
    out << trailer.dump() << "\n";
}

inline EpisodeLog read_episode_log(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read '" + path + "'");
    EpisodeLog log;
    std::string line;
    bool have_header = false, have_trailer = false;
    const double inf = std::numeric_limits<double>::infinity();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        const std::string kind = j.at("kind");
        if (kind == "header") {
            if (j.at("schema") != kEpisodeLogSchema)
                throw IoError("unexpected schema in '" + path + "'");
            log.seed = j.at("seed");
            log.controller = j.at("controller");
            log.model = j.at("model");
            log.gamma = j.at("gamma");
            log.eta = j.at("eta");
            log.alpha = j.at("alpha");
            log.horizon = j.at("horizon");
            log.dt = j.at("dt");
            log.time_limit = j.at("time_limit");
            log.goal_tolerance = j.at("goal_tolerance");
            log.robot_radius = j.at("robot_radius");
            log.pedestrian_radius = j.at("pedestrian_radius");
            log.robot_goal = Vector2d(j.at("goal")[0], j.at("goal")[1]);
            log.n_pedestrians = j.at("n_pedestrians");
            have_header = true;
        } else if (kind == "step") {
            StepRecord rec;
            rec.step = j.at("step");
            rec.t = j.at("t");
            std::vector<double> rs = j.at("robot");
            rec.robot_state = Eigen::Map<VectorXd>(rs.data(), rs.size());
            rec.control = Vector2d(j.at("control")[0], j.at("control")[1]);
            rec.h_min = log_detail::null_or_double(j.at("h_min"), inf);
            rec.status = parse_step_status(j.at("status"));
            rec.brake = j.at("brake");
            rec.slack_total = j.at("slack_total");
            rec.solver_iterations = j.at("solver_iterations");
            if (j.contains("solve_ms")) rec.solve_time_ms = j.at("solve_ms");
            for (const auto& p : j.at("pedestrians"))
                rec.pedestrians.push_back(Eigen::Vector4d(p[0], p[1], p[2], p[3]));
            log.steps.push_back(rec);
        } else if (kind == "trailer") {
            const std::string oc = j.at("outcome");
            log.outcome = oc == "success"  ? Outcome::Success
                          : oc == "collision" ? Outcome::Collision
                                              : Outcome::Timeout;
            log.navigation_time =
                log_detail::null_or_double(j.at("navigation_time"),
                                           std::numeric_limits<double>::quiet_NaN());
            log.failure_count = j.at("failure_count");
            log.solver_calls = j.at("solver_calls");
            if (j.contains("total_solve_ms")) log.total_solve_ms = j.at("total_solve_ms");
            have_trailer = true;
        }
    }
    if (!have_header || !have_trailer)
        throw IoError("incomplete episode log '" + path + "'");
    return log;
}

namespace log_detail {

inline std::string fmt(double v, int decimals = 6) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

}  // namespace log_detail

/// Per-agent time-stamped position series, with sample instants every 2 s
/// flagged in the `labeled` column.
inline void write_trajectory_csv(const EpisodeLog& log, const std::string& path) {
    if (log.steps.empty()) throw ConfigError("trajectory export requires a non-empty log");
    auto out = log_detail::open_out(path);
    out << "# schema: " << kTrajectorySchema << "\n";
    out << "t,labeled,robot_x,robot_y";
    for (int i = 0; i < log.n_pedestrians; ++i)
        out << ",ped" << i << "_x,ped" << i << "_y";
    out << "\n";
    const int label_every = static_cast<int>(std::lround(2.0 / log.dt));
    for (const auto& rec : log.steps) {
        const bool labeled = label_every > 0 && rec.step % label_every == 0;
        out << log_detail::fmt(rec.t, 2) << "," << (labeled ? 1 : 0) << ","
            << log_detail::fmt(rec.robot_state(0)) << "," << log_detail::fmt(rec.robot_state(1));
        for (const auto& p : rec.pedestrians)
            out << "," << log_detail::fmt(p(0)) << "," << log_detail::fmt(p(1));
        out << "\n";
    }
}

/// Static vector rendering of the episode: polyline paths, agent circles at
/// the 2 s labeled instants, and the goal marker.
inline void write_trajectory_svg(const EpisodeLog& log, const std::string& path) {
    if (log.steps.empty()) throw ConfigError("trajectory export requires a non-empty log");
    auto out = log_detail::open_out(path);
    const double half = 5.5;
    const double scale = 50.0;
    auto px = [&](double x) { return log_detail::fmt((x + half) * scale, 1); };
    auto py = [&](double y) { return log_detail::fmt((half - y) * scale, 1); };
    const int size = static_cast<int>(2 * half * scale);
    const char* ped_colors[] = {"#1f77b4", "#2ca02c", "#9467bd", "#8c564b",
                                "#17becf", "#bcbd22", "#e377c2", "#7f7f7f"};

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
        << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
    out << "<rect width=\"" << size << "\" height=\"" << size << "\" fill=\"white\"/>\n";

    auto polyline = [&](int agent, const char* color) {
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& rec : log.steps) {
            double x = agent < 0 ? rec.robot_state(0) : rec.pedestrians[agent](0);
            double y = agent < 0 ? rec.robot_state(1) : rec.pedestrians[agent](1);
            out << px(x) << "," << py(y) << " ";
        }
        out << "\"/>\n";
    };
    for (int i = 0; i < log.n_pedestrians; ++i) polyline(i, ped_colors[i % 8]);
    polyline(-1, "#d62728");

    const int label_every = static_cast<int>(std::lround(2.0 / log.dt));
    for (const auto& rec : log.steps) {
        if (label_every <= 0 || rec.step % label_every != 0) continue;
        for (int i = 0; i < log.n_pedestrians; ++i)
            out << "<circle cx=\"" << px(rec.pedestrians[i](0)) << "\" cy=\""
                << py(rec.pedestrians[i](1)) << "\" r=\"" << log.pedestrian_radius * scale
                << "\" fill=\"" << ped_colors[i % 8] << "\" fill-opacity=\"0.25\" stroke=\""
                << ped_colors[i % 8] << "\"/>\n";
        out << "<circle cx=\"" << px(rec.robot_state(0)) << "\" cy=\"" << py(rec.robot_state(1))
            << "\" r=\"" << log.robot_radius * scale
            << "\" fill=\"#d62728\" fill-opacity=\"0.3\" stroke=\"#d62728\"/>\n";
        out << "<text x=\"" << px(rec.robot_state(0)) << "\" y=\"" << py(rec.robot_state(1))
            << "\" font-size=\"10\" dx=\"6\" dy=\"-6\">" << log_detail::fmt(rec.t, 0)
            << "s</text>\n";
    }
    out << "<g stroke=\"#d62728\" stroke-width=\"2\"><line x1=\"" << px(log.robot_goal.x() - 0.15)
        << "\" y1=\"" << py(log.robot_goal.y() - 0.15) << "\" x2=\"" << px(log.robot_goal.x() + 0.15)
        << "\" y2=\"" << py(log.robot_goal.y() + 0.15) << "\"/><line x1=\""
        << px(log.robot_goal.x() - 0.15) << "\" y1=\"" << py(log.robot_goal.y() + 0.15)
        << "\" x2=\"" << px(log.robot_goal.x() + 0.15) << "\" y2=\""
        << py(log.robot_goal.y() - 0.15) << "\"/></g>\n";
    out << "</svg>\n";
}

}  // namespace cbfmpc

#endif  // CBFMPC_LOG_IO_HPP
