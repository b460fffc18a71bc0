#ifndef CBFMPC_SIM_HPP
#define CBFMPC_SIM_HPP

#include <cmath>
#include <cstring>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cbfmpc/barrier.hpp"
#include "cbfmpc/common.hpp"
#include "cbfmpc/dynamics.hpp"
#include "cbfmpc/ocp.hpp"
#include "cbfmpc/orca.hpp"
#include "cbfmpc/solver.hpp"

namespace cbfmpc {

struct ScenarioParams {
    double circle_radius = 4.0;
    double workspace_half_extent = 5.0;  // 10m x 10m box
    double dt = 0.2;
    double time_limit = 25.0;
    Vector2d robot_start{0.0, -4.0};
    Vector2d robot_goal{0.0, 4.0};
    double robot_radius = 0.3;
    double pedestrian_radius = 0.3;
    double goal_tolerance = 0.3;  // one robot radius
    double min_initial_clearance = 0.1;
    double angular_noise = 0.1;   // rad, applied to the antipodal goal
    double radial_noise = 0.2;    // m, applied to both endpoints
    int max_rejections = 1000;
    bool static_pedestrians = false;  // freeze pedestrians at their starts
};

/// Deterministic function of (seed, n_pedestrians, params).
struct Scenario {
    std::uint64_t seed = 0;
    ScenarioParams params;
    std::vector<Vector2d> pedestrian_starts;
    std::vector<Vector2d> pedestrian_goals;

    int n_pedestrians() const { return static_cast<int>(pedestrian_starts.size()); }
};

/// Start/goal pair on the crossing circle: start at `angle`, goal at the
/// antipode, both perturbed by the given noise draws.
inline std::pair<Vector2d, Vector2d> place_pedestrian(double angle, double circle_radius,
                                                      double start_radial_noise = 0.0,
                                                      double goal_angular_noise = 0.0,
                                                      double goal_radial_noise = 0.0) {
    const double rs = circle_radius + start_radial_noise;
    const double ga = angle + kPi + goal_angular_noise;
    const double rg = circle_radius + goal_radial_noise;
    return {Vector2d(rs * std::cos(angle), rs * std::sin(angle)),
            Vector2d(rg * std::cos(ga), rg * std::sin(ga))};
}

inline Scenario generate_scenario(std::uint64_t seed, int n_pedestrians,
                                  ScenarioParams params = {}) {
    if (n_pedestrians < 0) throw ConfigError("n_pedestrians must be >= 0");
    Scenario sc;
    sc.seed = seed;
    sc.params = params;
    Rng rng(seed);
    int rejections = 0;
    while (sc.n_pedestrians() < n_pedestrians) {
        const double angle = rng.uniform(0.0, 2.0 * kPi);
        const double rn_s = rng.uniform(-params.radial_noise, params.radial_noise);
        const double an_g = rng.uniform(-params.angular_noise, params.angular_noise);
        const double rn_g = rng.uniform(-params.radial_noise, params.radial_noise);
        auto [start, goal] = place_pedestrian(angle, params.circle_radius, rn_s, an_g, rn_g);

        bool clear = (start - params.robot_start).norm() - params.pedestrian_radius -
                         params.robot_radius >=
                     params.min_initial_clearance;
        for (const Vector2d& other : sc.pedestrian_starts)
            clear = clear && (start - other).norm() - 2.0 * params.pedestrian_radius >=
                                 params.min_initial_clearance;
        if (!clear) {
            if (++rejections > params.max_rejections)
                throw ScenarioError("could not place pedestrians with the required clearance");
            continue;
        }
        sc.pedestrian_starts.push_back(start);
        sc.pedestrian_goals.push_back(goal);
    }
    return sc;
}

/// FNV-1a over the bit patterns of all scenario coordinates; used to verify
/// that paired benchmark cells really share their scenario set.
inline std::uint64_t scenario_hash(const Scenario& sc) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        for (int i = 0; i < 8; ++i) {
            h ^= (bits >> (8 * i)) & 0xffu;
            h *= 1099511628211ull;
        }
    };
    mix(static_cast<double>(sc.seed));
    for (int i = 0; i < sc.n_pedestrians(); ++i) {
        mix(sc.pedestrian_starts[i].x());
        mix(sc.pedestrian_starts[i].y());
        mix(sc.pedestrian_goals[i].x());
        mix(sc.pedestrian_goals[i].y());
    }
    return h;
}

/**
 * Pedestrian crowd driven by ORCA toward fixed goals. The robot is
 * invisible to the crowd by construction: only pedestrians appear in
 * neighbor lists. Updates are synchronous: all velocities are computed
 * from the same state snapshot, then applied together. Pedestrians that
 * reach their goal hold position as static obstacles.
 */
class Crowd {
public:
    struct Pedestrian {
        Vector2d position;
        Vector2d velocity{0.0, 0.0};
        Vector2d goal;
        bool reached = false;
    };

    Crowd(const std::vector<Vector2d>& starts, const std::vector<Vector2d>& goals,
          const OrcaAgentParams& params, double dt, bool frozen = false)
        : params_(params), dt_(dt), frozen_(frozen) {
        for (std::size_t i = 0; i < starts.size(); ++i)
            pedestrians_.push_back({starts[i], Vector2d::Zero(), goals[i], false});
    }

    const std::vector<Pedestrian>& pedestrians() const { return pedestrians_; }
    int size() const { return static_cast<int>(pedestrians_.size()); }

    std::vector<ObstacleTrack> obstacle_tracks() const {
        std::vector<ObstacleTrack> tracks;
        tracks.reserve(pedestrians_.size());
        for (const auto& p : pedestrians_)
            tracks.push_back({p.position, p.velocity, params_.radius});
        return tracks;
    }

    /// One synchronous step: velocities from the snapshot, then positions.
    void step() {
        if (frozen_) return;
        std::vector<OrcaAgent> snapshot(pedestrians_.size());
        for (std::size_t i = 0; i < pedestrians_.size(); ++i)
            snapshot[i] = {pedestrians_[i].position, pedestrians_[i].velocity, params_.radius};

        std::vector<Vector2d> new_velocities(pedestrians_.size(), Vector2d::Zero());
        for (std::size_t i = 0; i < pedestrians_.size(); ++i) {
            if (pedestrians_[i].reached) continue;
            auto idx = select_neighbors(snapshot[i].position, snapshot, static_cast<int>(i),
                                        params_);
            std::vector<OrcaAgent> neighbors;
            neighbors.reserve(idx.size());
            for (int j : idx) neighbors.push_back(snapshot[j]);
            Vector2d pref = preferred_velocity(pedestrians_[i].position, pedestrians_[i].goal,
                                               params_.preferred_speed, dt_);
            new_velocities[i] = compute_velocity(snapshot[i], neighbors, params_, pref, dt_);
        }
        for (std::size_t i = 0; i < pedestrians_.size(); ++i) {
            if (pedestrians_[i].reached) continue;
            pedestrians_[i].position += dt_ * new_velocities[i];
            pedestrians_[i].velocity = new_velocities[i];
            if ((pedestrians_[i].position - pedestrians_[i].goal).norm() <= 1e-3) {
                pedestrians_[i].reached = true;
                pedestrians_[i].velocity.setZero();
            }
        }
    }

private:
    std::vector<Pedestrian> pedestrians_;
    OrcaAgentParams params_;
    double dt_;
    bool frozen_;
};

enum class ControllerKind { Orca, MpcDc, MpcDcbf, ScmpcCbf, ScmpcCbfGcbf };

inline const char* controller_name(ControllerKind k) {
    switch (k) {
        case ControllerKind::Orca: return "orca";
        case ControllerKind::MpcDc: return "mpc-dc";
        case ControllerKind::MpcDcbf: return "mpc-dcbf";
        case ControllerKind::ScmpcCbf: return "scmpc-cbf";
        case ControllerKind::ScmpcCbfGcbf: return "ours";
    }
    return "?";
}

inline ControllerKind parse_controller(const std::string& name) {
    if (name == "orca") return ControllerKind::Orca;
    if (name == "mpc-dc") return ControllerKind::MpcDc;
    if (name == "mpc-dcbf") return ControllerKind::MpcDcbf;
    if (name == "scmpc-cbf") return ControllerKind::ScmpcCbf;
    if (name == "ours" || name == "scmpc-cbf-gcbf") return ControllerKind::ScmpcCbfGcbf;
    throw ConfigError("unknown controller '" + name + "'");
}

inline bool controller_uses_gamma(ControllerKind k) {
    return k == ControllerKind::MpcDcbf || k == ControllerKind::ScmpcCbf ||
           k == ControllerKind::ScmpcCbfGcbf;
}

inline Formulation controller_formulation(ControllerKind k) {
    switch (k) {
        case ControllerKind::MpcDc: return Formulation::MpcDc;
        case ControllerKind::MpcDcbf: return Formulation::MpcDcbf;
        case ControllerKind::ScmpcCbf: return Formulation::ScmpcCbf;
        case ControllerKind::ScmpcCbfGcbf: return Formulation::ScmpcCbfGcbf;
        case ControllerKind::Orca: break;
    }
    throw ConfigError("ORCA baseline has no optimization formulation");
}

struct ControllerConfig {
    ControllerKind kind = ControllerKind::ScmpcCbfGcbf;
    ModelKind model = ModelKind::DoubleIntegrator;
    double gamma = 0.1;
    double eta = 0.3;
    double alpha = 1000.0;
    int horizon = 8;
    SolverConfig solver;
    OrcaAgentParams orca;

    static ControllerConfig make(ControllerKind kind, ModelKind model, double gamma = 0.1) {
        ControllerConfig cfg;
        cfg.kind = kind;
        cfg.model = model;
        cfg.gamma = gamma;
        if (kind == ControllerKind::Orca && model != ModelKind::DoubleIntegrator)
            throw ConfigError("the ORCA baseline drives a holonomic robot only");
        return cfg;
    }

    SystemModel make_model(double dt) const {
        return model == ModelKind::DoubleIntegrator ? SystemModel::double_integrator(dt)
                                                    : SystemModel::unicycle(dt);
    }

    OcpSpec make_ocp_spec(const SystemModel& m, const Vector2d& goal) const {
        OcpSpec spec = OcpSpec::defaults_for(m, controller_formulation(kind));
        spec.horizon = horizon;
        spec.goal = goal;
        spec.barrier.gamma = gamma;
        spec.barrier.eta = eta;
        spec.penalty_weight = formulation_has_slacks(spec.formulation) ? alpha : 0.0;
        return spec;
    }
};

/// Maximum-deceleration stop. Double integrator: oppose each velocity
/// component at full authority without reversing its sign within the step;
/// unicycle: zero commanded speed, pose unchanged.
inline Control brake_control(const SystemModel& model, const State& x) {
    if (model.kind == ModelKind::Unicycle) return Control(0.0, 0.0);
    Control a;
    for (int c = 0; c < 2; ++c) {
        double v = x(2 + c);
        double a_max = model.input_bounds.upper(c);
        a(c) = std::abs(v) <= a_max * model.dt ? -v / model.dt : (v > 0 ? -a_max : a_max);
    }
    return a;
}

inline State apply_brake(const SystemModel& model, const State& x) {
    if (model.kind == ModelKind::Unicycle) return x;
    State next = model.step(x, brake_control(model, x));
    for (int c = 0; c < 2; ++c)
        if (std::abs(x(2 + c)) <= model.input_bounds.upper(c) * model.dt) next(2 + c) = 0.0;
    return next;
}

/// Outcome of one control decision: either a solved control or the brake.
struct ControlDecision {
    bool brake = false;
    Control u{0.0, 0.0};
    SolveStatus solver_status = SolveStatus::MaxIter;
    int solver_iterations = 0;
    double solve_time_ms = 0.0;
    double slack_total = 0.0;
};

/**
 * Receding-horizon controller: builds the configured formulation at each
 * state, warm-starts it with the shifted previous solution, and maps any
 * unsolved status to the brake.
 */
class MpcAgent {
public:
    MpcAgent(const ControllerConfig& cfg, const SystemModel& model, const Vector2d& goal)
        : cfg_(cfg), model_(model), goal_(goal) {}

    ControlDecision control_step(const State& x, const std::vector<ObstacleTrack>& tracks) {
        OcpSpec spec = cfg_.make_ocp_spec(model_, goal_);
        NlpProblem problem = build_ocp(model_, spec, x, tracks);
        problem.set_initial_guess(initial_guess(spec, model_, problem.num_obstacles(),
                                                previous_ ? &*previous_ : nullptr));
        SolverResult res = solve(problem, cfg_.solver);

        // A failed warm start falls back to one cold-started attempt, then
        // up to two continuation restarts from the stalled iterate (which
        // also reset the Hessian model). Only then does the brake engage.
        if (res.status == SolveStatus::MaxIter && previous_) {
            problem.set_initial_guess(initial_guess(spec, model_, problem.num_obstacles()));
            SolverResult cold = solve(problem, cfg_.solver);
            if (cold.status != SolveStatus::MaxIter ||
                cold.kkt_stationarity < res.kkt_stationarity)
                res = cold;
        }
        for (int restart = 0; restart < 2 && res.status == SolveStatus::MaxIter; ++restart) {
            problem.set_initial_guess(res.z);
            SolverResult cont = solve(problem, cfg_.solver);
            if (cont.status == SolveStatus::MaxIter &&
                cont.kkt_stationarity >= res.kkt_stationarity)
                break;
            res = cont;
        }

        // Unicycle stall escape: with v >= 0 and the goal far off-heading,
        // all-zero controls are a genuine KKT point (turning only pays off
        // beyond the horizon). Reseed once with a turn-toward-goal guess and
        // keep whichever local solution is cheaper.
        if (model_.kind == ModelKind::Unicycle && res.status == SolveStatus::Solved) {
            double u_max = 0.0;
            for (const Control& u : res.controls)
                u_max = std::max(u_max, u.lpNorm<Eigen::Infinity>());
            const Vector2d to_goal = goal_ - Vector2d(x.head<2>());
            const double heading_error =
                normalize_angle(std::atan2(to_goal.y(), to_goal.x()) - x(2));
            if (u_max < 1e-6 && to_goal.norm() > 0.5 && std::abs(heading_error) > 0.3) {
                VectorXd seed = VectorXd::Zero(problem.num_vars());
                const double omega =
                    heading_error > 0 ? model_.input_bounds.upper(1)
                                      : model_.input_bounds.lower(1);
                for (int k = 0; k < spec.horizon; ++k) {
                    seed(2 * k) = 0.5 * model_.input_bounds.upper(0);
                    seed(2 * k + 1) = omega;
                }
                problem.set_initial_guess(seed);
                SolverResult turn = solve(problem, cfg_.solver);
                if (turn.status == SolveStatus::Solved &&
                    problem.cost(turn.z) < problem.cost(res.z) - 1e-9)
                    res = turn;
            }
        }

        ControlDecision decision;
        decision.solver_status = res.status;
        decision.solver_iterations = res.iterations;
        decision.solve_time_ms = res.solve_time_ms;
        if (res.status == SolveStatus::Solved) {
            decision.u = res.controls.front();
            decision.slack_total = res.slacks.sum();
            previous_ = res.controls;
        } else {
            decision.brake = true;
            previous_.reset();
        }
        return decision;
    }

private:
    ControllerConfig cfg_;
    SystemModel model_;
    Vector2d goal_;
    std::optional<std::vector<Control>> previous_;
};

enum class Outcome { Success, Collision, Timeout };

inline const char* outcome_name(Outcome o) {
    switch (o) {
        case Outcome::Success: return "success";
        case Outcome::Collision: return "collision";
        case Outcome::Timeout: return "timeout";
    }
    return "?";
}

enum class StepStatus { None, Solved, Infeasible, MaxIter };

inline const char* step_status_name(StepStatus s) {
    switch (s) {
        case StepStatus::None: return "none";
        case StepStatus::Solved: return "solved";
        case StepStatus::Infeasible: return "infeasible";
        case StepStatus::MaxIter: return "max_iter";
    }
    return "?";
}

inline StepStatus to_step_status(SolveStatus s) {
    switch (s) {
        case SolveStatus::Solved: return StepStatus::Solved;
        case SolveStatus::Infeasible: return StepStatus::Infeasible;
        case SolveStatus::MaxIter: return StepStatus::MaxIter;
    }
    return StepStatus::None;
}

inline StepStatus parse_step_status(const std::string& s) {
    if (s == "none") return StepStatus::None;
    if (s == "solved") return StepStatus::Solved;
    if (s == "infeasible") return StepStatus::Infeasible;
    if (s == "max_iter") return StepStatus::MaxIter;
    throw ConfigError("unknown step status '" + s + "'");
}

struct StepRecord {
    int step = 0;
    double t = 0.0;
    VectorXd robot_state;
    std::vector<Eigen::Vector4d> pedestrians;  // x, y, vx, vy
    Vector2d control{0.0, 0.0};
    double h_min = std::numeric_limits<double>::infinity();
    StepStatus status = StepStatus::None;
    bool brake = false;
    double slack_total = 0.0;
    double solve_time_ms = 0.0;
    int solver_iterations = 0;
};

struct EpisodeLog {
    std::uint64_t seed = 0;
    std::string controller;
    std::string model;
    double gamma = 0.0;
    double eta = 0.0;
    double alpha = 0.0;
    int horizon = 0;
    double dt = 0.2;
    double time_limit = 25.0;
    double goal_tolerance = 0.3;
    double robot_radius = 0.3;
    double pedestrian_radius = 0.3;
    Vector2d robot_goal{0.0, 4.0};
    int n_pedestrians = 0;

    std::vector<StepRecord> steps;
    Outcome outcome = Outcome::Timeout;
    double navigation_time = std::numeric_limits<double>::quiet_NaN();
    int failure_count = 0;
    int solver_calls = 0;
    double total_solve_ms = 0.0;
};

/// Minimum clearance h (epsilon = 0) over all logged steps and pedestrians;
/// +inf for a robot-only episode.
inline double min_clearance(const EpisodeLog& log) {
    if (log.steps.empty()) throw ConfigError("min_clearance requires a non-empty log");
    double m = std::numeric_limits<double>::infinity();
    for (const auto& rec : log.steps) m = std::min(m, rec.h_min);
    return m;
}

inline EpisodeLog run_episode(const Scenario& scenario, const ControllerConfig& cfg) {
    const ScenarioParams& sp = scenario.params;
    SystemModel model = cfg.make_model(sp.dt);

    EpisodeLog log;
    log.seed = scenario.seed;
    log.controller = controller_name(cfg.kind);
    log.model = cfg.model == ModelKind::DoubleIntegrator ? "di" : "unicycle";
    log.gamma = cfg.gamma;
    log.eta = cfg.eta;
    log.alpha = cfg.alpha;
    log.horizon = cfg.horizon;
    log.dt = sp.dt;
    log.time_limit = sp.time_limit;
    log.goal_tolerance = sp.goal_tolerance;
    log.robot_radius = sp.robot_radius;
    log.pedestrian_radius = sp.pedestrian_radius;
    log.robot_goal = sp.robot_goal;
    log.n_pedestrians = scenario.n_pedestrians();

    State x(model.state_dim());
    if (cfg.model == ModelKind::DoubleIntegrator) {
        x << sp.robot_start.x(), sp.robot_start.y(), 0.0, 0.0;
    } else {
        Vector2d to_goal = sp.robot_goal - sp.robot_start;
        x << sp.robot_start.x(), sp.robot_start.y(), std::atan2(to_goal.y(), to_goal.x());
    }

    OrcaAgentParams ped_params = cfg.orca;
    ped_params.radius = sp.pedestrian_radius;
    Crowd crowd(scenario.pedestrian_starts, scenario.pedestrian_goals, ped_params, sp.dt,
                sp.static_pedestrians);
    std::optional<MpcAgent> mpc;
    if (cfg.kind != ControllerKind::Orca) mpc.emplace(cfg, model, sp.robot_goal);

    const double collision_radius = sp.robot_radius + sp.pedestrian_radius;
    Vector2d robot_velocity = Vector2d::Zero();  // ORCA baseline state

    for (int step = 0;; ++step) {
        const double t = step * sp.dt;
        StepRecord rec;
        rec.step = step;
        rec.t = t;
        rec.robot_state = x;
        for (const auto& p : crowd.pedestrians())
            rec.pedestrians.push_back(
                (Eigen::Vector4d() << p.position, p.velocity).finished());
        const Vector2d robot_pos = x.head<2>();
        for (const auto& p : crowd.pedestrians())
            rec.h_min = std::min(rec.h_min, h_value(robot_pos, p.position, collision_radius));

        // Adjudication: collision, then success, then timeout.
        if (rec.h_min < 0.0) {
            log.steps.push_back(rec);
            log.outcome = Outcome::Collision;
            break;
        }
        if ((robot_pos - sp.robot_goal).norm() <= sp.goal_tolerance) {
            log.steps.push_back(rec);
            log.outcome = Outcome::Success;
            log.navigation_time = t;
            break;
        }
        if (t >= sp.time_limit) {
            log.steps.push_back(rec);
            log.outcome = Outcome::Timeout;
            break;
        }

        if (cfg.kind == ControllerKind::Orca) {
            OrcaAgent self{robot_pos, robot_velocity, sp.robot_radius};
            std::vector<OrcaAgent> neighbors;
            for (const auto& p : crowd.pedestrians())
                neighbors.push_back({p.position, p.velocity, sp.pedestrian_radius});
            Vector2d pref = preferred_velocity(robot_pos, sp.robot_goal,
                                               cfg.orca.preferred_speed, sp.dt);
            Vector2d v = compute_velocity(self, neighbors, cfg.orca, pref, sp.dt);
            rec.control = v;
            robot_velocity = v;
            x(0) += sp.dt * v.x();
            x(1) += sp.dt * v.y();
            x(2) = v.x();
            x(3) = v.y();
        } else {
            ControlDecision decision = mpc->control_step(x, crowd.obstacle_tracks());
            rec.status = to_step_status(decision.solver_status);
            rec.brake = decision.brake;
            rec.solve_time_ms = decision.solve_time_ms;
            rec.solver_iterations = decision.solver_iterations;
            rec.slack_total = decision.slack_total;
            log.solver_calls += 1;
            log.total_solve_ms += decision.solve_time_ms;
            if (decision.brake) {
                rec.control = brake_control(model, x);
                x = apply_brake(model, x);
                log.failure_count += 1;
            } else {
                rec.control = decision.u;
                x = model.step(x, decision.u);
            }
        }
        log.steps.push_back(rec);
        crowd.step();
    }
    return log;
}

}  // namespace cbfmpc

#endif  // CBFMPC_SIM_HPP
