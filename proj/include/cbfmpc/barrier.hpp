#ifndef CBFMPC_BARRIER_HPP
#define CBFMPC_BARRIER_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cbfmpc/common.hpp"
#include "cbfmpc/dynamics.hpp"

namespace cbfmpc {

/**
 * Parameters of the distance barrier h(x, o) = |p - p_o| - r_i between the
 * robot and one obstacle.
 *
 * gamma is the per-step decay coefficient of the hard CBF inequality,
 * eta in (gamma, 1] the decay of the single-step generalized constraint, and
 * relative_degree the step delay before controls reach the position output.
 */
struct BarrierSpec {
    double robot_radius = 0.3;
    double margin = 0.0;  // extra safety margin added to the combined radius
    double gamma = 0.1;
    double eta = 0.3;
    int relative_degree = 2;

    /// The eta window only matters when the generalized constraint is in
    /// play; gamma = 1 (plain distance decay) is a valid hard-CBF setting.
    void validate(bool require_eta_above_gamma = true) const {
        if (!(gamma > 0.0 && gamma <= 1.0))
            throw ConfigError("gamma must lie in (0, 1], got " + std::to_string(gamma));
        if (require_eta_above_gamma && !(eta > gamma && eta <= 1.0))
            throw ConfigError("eta must lie in (gamma, 1], got " + std::to_string(eta));
        if (relative_degree < 1) throw ConfigError("relative degree must be >= 1");
        if (margin < 0.0) throw ConfigError("margin must be >= 0");
        if (robot_radius < 0.0) throw ConfigError("robot radius must be >= 0");
    }
};

/// Combined safe radius r_i = r_robot + r_obstacle + margin.
inline double combined_radius(const BarrierSpec& spec, double obstacle_radius) {
    return spec.robot_radius + obstacle_radius + spec.margin;
}

/// Clearance in meters: Euclidean center distance minus the combined radius.
/// Positive iff the pair is strictly inside the safe set.
inline double h_value(const Vector2d& robot_xy, const Vector2d& obstacle_xy, double r_i) {
    return (robot_xy - obstacle_xy).norm() - r_i;
}

/// Gradient of h_value with respect to the robot position. The center
/// distance is clamped below 1e-9 to avoid the singularity at coincidence.
inline Vector2d h_gradient(const Vector2d& robot_xy, const Vector2d& obstacle_xy) {
    Vector2d diff = robot_xy - obstacle_xy;
    double dist = std::max(diff.norm(), 1e-9);
    return diff / dist;
}

/// Hard CBF constraint residual h_next - (1 - gamma) h_curr; >= 0 iff satisfied.
inline double dcbf_residual(double h_next, double h_curr, double gamma) {
    return h_next - (1.0 - gamma) * h_curr;
}

/// Single-step generalized constraint residual h_at_d - (1 - eta)^d h_now.
inline double gcbf_residual(double h_at_d, double h_now, double eta, int d) {
    return h_at_d - std::pow(1.0 - eta, d) * h_now;
}

namespace detail {

/// Sensitivity of h(x_{t+j}) to the first control, by central differences.
inline Vector2d h_control_sensitivity(const SystemModel& model, const State& x0,
                                      std::vector<Control> controls, int j,
                                      const Vector2d& obstacle, double r_i, double fd_step) {
    Vector2d grad;
    for (int c = 0; c < 2; ++c) {
        Control up = controls[0];
        Control um = controls[0];
        up(c) += fd_step;
        um(c) -= fd_step;
        std::vector<Control> seq = controls;
        seq[0] = up;
        double hp = h_value(model.rollout(x0, seq)[j - 1].head<2>(), obstacle, r_i);
        seq[0] = um;
        double hm = h_value(model.rollout(x0, seq)[j - 1].head<2>(), obstacle, r_i);
        grad(c) = (hp - hm) / (2.0 * fd_step);
    }
    return grad;
}

inline State random_state(const SystemModel& model, Rng& rng) {
    State x(model.state_dim());
    x(0) = rng.uniform(-4.0, 4.0);
    x(1) = rng.uniform(-4.0, 4.0);
    if (model.kind == ModelKind::DoubleIntegrator) {
        x(2) = rng.uniform(-1.0, 1.0);
        x(3) = rng.uniform(-1.0, 1.0);
    } else {
        x(2) = rng.uniform(-kPi, kPi);
    }
    return x;
}

}  // namespace detail

/**
 * Numerically verify the relative degree of the position barrier: the
 * smallest j such that h(x_{t+j}) is sensitive to u_t. Samples random
 * states, resamples configurations that land near the measure-zero
 * degeneracy set (e.g. unicycle heading tangent to the obstacle direction),
 * and requires all samples to agree with model.relative_degree.
 */
inline int verify_relative_degree(const SystemModel& model, int n_samples = 100,
                                  std::uint64_t seed = 7) {
    constexpr double kSensitive = 1e-8;
    constexpr double kQuiet = 1e-10;
    const int j_max = std::max(4, model.relative_degree + 1);
    Rng rng(seed);
    int verified = 0;
    for (int s = 0; s < n_samples; ++s) {
        int found = -1;
        for (int attempt = 0; attempt < 64 && found < 0; ++attempt) {
            State x0 = detail::random_state(model, rng);
            double ang = rng.uniform(0.0, 2.0 * kPi);
            double dist = rng.uniform(1.0, 6.0);
            Vector2d obstacle = x0.head<2>() + dist * Vector2d(std::cos(ang), std::sin(ang));
            std::vector<Control> controls(j_max);
            for (auto& u : controls)
                for (int c = 0; c < 2; ++c)
                    u(c) = rng.uniform(model.input_bounds.lower(c), model.input_bounds.upper(c));

            bool degenerate = false;
            int first = -1;
            for (int j = 1; j <= j_max; ++j) {
                double sens = detail::h_control_sensitivity(model, x0, controls, j, obstacle,
                                                            0.6, 1e-5)
                                  .lpNorm<Eigen::Infinity>();
                if (sens > kSensitive) {
                    first = j;
                    break;
                }
                if (sens > kQuiet) {  // borderline: too close to a tangency
                    degenerate = true;
                    break;
                }
            }
            if (!degenerate && first > 0) found = first;
        }
        if (found < 0)
            throw ConfigError("relative-degree probe kept hitting degenerate configurations");
        if (verified == 0)
            verified = found;
        else if (found != verified)
            throw ConfigError("inconsistent relative degree across samples: " +
                              std::to_string(verified) + " vs " + std::to_string(found));
    }
    if (verified != model.relative_degree)
        throw ConfigError("declared relative degree " + std::to_string(model.relative_degree) +
                          " but measured " + std::to_string(verified));
    return verified;
}

}  // namespace cbfmpc

#endif  // CBFMPC_BARRIER_HPP
