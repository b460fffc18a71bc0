#ifndef CBFMPC_DYNAMICS_HPP
#define CBFMPC_DYNAMICS_HPP

#include <cmath>
#include <limits>
#include <vector>

#include "cbfmpc/common.hpp"

namespace cbfmpc {

/// State vector. Double integrator: [x, y, vx, vy]. Unicycle: [x, y, theta].
using State = Eigen::VectorXd;
/// Control vector. Double integrator: [ax, ay]. Unicycle: [v, omega].
using Control = Eigen::Vector2d;

enum class ModelKind { DoubleIntegrator, Unicycle };

/// Discretization of the continuous double-integrator dynamics. The unicycle
/// is always forward Euler.
enum class Discretization { Euler, Zoh };

/// Per-component interval bounds; +-inf marks an unbounded component.
struct Bounds {
    VectorXd lower;
    VectorXd upper;

    static Bounds unbounded(int dim) {
        const double inf = std::numeric_limits<double>::infinity();
        Bounds b;
        b.lower = VectorXd::Constant(dim, -inf);
        b.upper = VectorXd::Constant(dim, inf);
        return b;
    }
};

/// Constant-velocity moving obstacle with a circular footprint.
struct ObstacleTrack {
    Vector2d position{0.0, 0.0};
    Vector2d velocity{0.0, 0.0};
    double radius = 0.3;
};

/// Predicted obstacle state k steps ahead under the constant-velocity model.
inline ObstacleTrack predict_obstacle(const ObstacleTrack& o, int k, double dt) {
    ObstacleTrack out = o;
    out.position = o.position + (k * dt) * o.velocity;
    return out;
}

/**
 * Discrete-time robot motion model x_{k+1} = f(x_k, u_k) with state and
 * input boxes and the relative degree of the position output.
 *
 * Forward Euler is the default for both models; it gives the double
 * integrator relative degree 2 for position constraints. The exact
 * zero-order-hold discretization of the double integrator is available as
 * an alternative (relative degree 1) for sensitivity studies.
 */
struct SystemModel {
    ModelKind kind = ModelKind::DoubleIntegrator;
    Discretization discretization = Discretization::Euler;
    double dt = 0.2;
    Bounds state_bounds;
    Bounds input_bounds;
    int relative_degree = 2;

    static SystemModel double_integrator(double dt = 0.2,
                                         Discretization disc = Discretization::Euler) {
        SystemModel m;
        m.kind = ModelKind::DoubleIntegrator;
        m.discretization = disc;
        m.dt = dt;
        m.state_bounds = Bounds::unbounded(4);
        m.state_bounds.lower.tail<2>() << -1.0, -1.0;
        m.state_bounds.upper.tail<2>() << 1.0, 1.0;
        m.input_bounds.lower = VectorXd::Constant(2, -1.5);
        m.input_bounds.upper = VectorXd::Constant(2, 1.5);
        m.relative_degree = disc == Discretization::Euler ? 2 : 1;
        return m;
    }

    static SystemModel unicycle(double dt = 0.2) {
        SystemModel m;
        m.kind = ModelKind::Unicycle;
        m.dt = dt;
        m.state_bounds = Bounds::unbounded(3);
        m.input_bounds.lower = VectorXd::Zero(2);
        m.input_bounds.upper = VectorXd::Ones(2);
        m.input_bounds.lower(1) = -1.0;
        m.relative_degree = 1;
        return m;
    }

    int state_dim() const { return kind == ModelKind::DoubleIntegrator ? 4 : 3; }
    int input_dim() const { return 2; }

    void check_state(const State& x) const {
        if (x.size() != state_dim())
            throw ConfigError("state dimension " + std::to_string(x.size()) +
                              " does not match model (" + std::to_string(state_dim()) + ")");
    }

    /// One forward step. Inputs are not clamped; bound handling is the
    /// optimizer's job.
    State step(const State& x, const Control& u) const {
        check_state(x);
        State next(state_dim());
        if (kind == ModelKind::DoubleIntegrator) {
            if (discretization == Discretization::Euler) {
                next(0) = x(0) + dt * x(2);
                next(1) = x(1) + dt * x(3);
            } else {
                next(0) = x(0) + dt * x(2) + 0.5 * dt * dt * u(0);
                next(1) = x(1) + dt * x(3) + 0.5 * dt * dt * u(1);
            }
            next(2) = x(2) + dt * u(0);
            next(3) = x(3) + dt * u(1);
        } else {
            next(0) = x(0) + dt * u(0) * std::cos(x(2));
            next(1) = x(1) + dt * u(0) * std::sin(x(2));
            next(2) = normalize_angle(x(2) + dt * u(1));
        }
        return next;
    }

    /// Analytic Jacobians A = df/dx, B = df/du at (x, u).
    void step_jacobians(const State& x, const Control& u, MatrixXd& A, MatrixXd& B) const {
        check_state(x);
        const int n = state_dim();
        A = MatrixXd::Identity(n, n);
        B = MatrixXd::Zero(n, 2);
        if (kind == ModelKind::DoubleIntegrator) {
            A(0, 2) = dt;
            A(1, 3) = dt;
            if (discretization == Discretization::Zoh) {
                B(0, 0) = 0.5 * dt * dt;
                B(1, 1) = 0.5 * dt * dt;
            }
            B(2, 0) = dt;
            B(3, 1) = dt;
        } else {
            const double c = std::cos(x(2));
            const double s = std::sin(x(2));
            A(0, 2) = -dt * u(0) * s;
            A(1, 2) = dt * u(0) * c;
            B(0, 0) = dt * c;
            B(1, 0) = dt * s;
            B(2, 1) = dt;
        }
    }

    /// States x_1..x_N reached from x0 under the given control sequence.
    std::vector<State> rollout(const State& x0, const std::vector<Control>& controls) const {
        if (controls.empty()) throw ConfigError("rollout requires at least one control");
        std::vector<State> states;
        states.reserve(controls.size());
        State x = x0;
        for (const Control& u : controls) {
            x = step(x, u);
            states.push_back(x);
        }
        return states;
    }

    /**
     * Sensitivity of the stacked rollout states [x_1; ...; x_N] with respect
     * to the stacked controls [u_0; ...; u_{N-1}]. Block lower triangular:
     * dx_{k+1}/du_j = A_k ... A_{j+1} B_j for j <= k.
     */
    MatrixXd rollout_jacobian(const State& x0, const std::vector<Control>& controls) const {
        if (controls.empty()) throw ConfigError("rollout_jacobian requires at least one control");
        const int n = state_dim();
        const int m = input_dim();
        const int N = static_cast<int>(controls.size());
        MatrixXd S = MatrixXd::Zero(N * n, N * m);
        MatrixXd A(n, n), B(n, m);
        State x = x0;
        for (int k = 0; k < N; ++k) {
            step_jacobians(x, controls[k], A, B);
            if (k > 0)
                S.block(k * n, 0, n, k * m) = A * S.block((k - 1) * n, 0, n, k * m);
            S.block(k * n, k * m, n, m) = B;
            x = step(x, controls[k]);
        }
        return S;
    }
};

}  // namespace cbfmpc

#endif  // CBFMPC_DYNAMICS_HPP
