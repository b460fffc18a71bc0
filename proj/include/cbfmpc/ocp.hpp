#ifndef CBFMPC_OCP_HPP
#define CBFMPC_OCP_HPP

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cbfmpc/barrier.hpp"
#include "cbfmpc/common.hpp"
#include "cbfmpc/dynamics.hpp"

namespace cbfmpc {

/// The four receding-horizon formulations.
enum class Formulation { MpcDc, MpcDcbf, ScmpcCbf, ScmpcCbfGcbf };

inline bool formulation_has_slacks(Formulation f) {
    return f == Formulation::ScmpcCbf || f == Formulation::ScmpcCbfGcbf;
}

inline const char* formulation_name(Formulation f) {
    switch (f) {
        case Formulation::MpcDc: return "mpc-dc";
        case Formulation::MpcDcbf: return "mpc-dcbf";
        case Formulation::ScmpcCbf: return "scmpc-cbf";
        case Formulation::ScmpcCbfGcbf: return "scmpc-cbf-gcbf";
    }
    return "?";
}

/**
 * Receding-horizon problem description: horizon, diagonal quadratic
 * tracking weights, goal position, formulation and barrier parameters.
 * Velocity/heading components carry zero weight by default so the robot
 * may arrive at speed; success is positional.
 */
struct OcpSpec {
    int horizon = 8;
    VectorXd state_weight;     // diagonal of Q
    VectorXd input_weight;     // diagonal of R
    VectorXd terminal_weight;  // diagonal of Q_f
    Vector2d goal{0.0, 4.0};
    Formulation formulation = Formulation::ScmpcCbfGcbf;
    BarrierSpec barrier;
    double penalty_weight = 0.0;  // alpha, used by the soft formulations

    static OcpSpec defaults_for(const SystemModel& model, Formulation f) {
        OcpSpec spec;
        spec.formulation = f;
        const int n = model.state_dim();
        spec.state_weight = VectorXd::Zero(n);
        spec.state_weight(0) = 1.0;
        spec.state_weight(1) = 1.0;
        spec.input_weight = VectorXd::Constant(model.input_dim(), 0.1);
        spec.terminal_weight = 10.0 * spec.state_weight;
        spec.barrier.relative_degree = model.relative_degree;
        spec.barrier.margin = f == Formulation::MpcDc ? 0.2 : 0.0;
        if (formulation_has_slacks(f)) spec.penalty_weight = 1000.0;
        return spec;
    }

    void validate(const SystemModel& model) const {
        barrier.validate(formulation == Formulation::ScmpcCbfGcbf);
        if (horizon < 1) throw ConfigError("horizon must be >= 1");
        if (state_weight.size() != model.state_dim() ||
            terminal_weight.size() != model.state_dim() ||
            input_weight.size() != model.input_dim())
            throw ConfigError("cost weight dimensions do not match the model");
        if ((state_weight.array() < 0).any() || (terminal_weight.array() < 0).any())
            throw ConfigError("state weights must be nonnegative");
        if ((input_weight.array() <= 0).any())
            throw ConfigError("input weights must be positive");
        if (formulation_has_slacks(formulation) && !(penalty_weight > 0.0))
            throw ConfigError("soft formulations require penalty_weight > 0");
        if (formulation == Formulation::ScmpcCbfGcbf) {
            if (barrier.relative_degree != model.relative_degree)
                throw ConfigError("barrier relative degree disagrees with the model");
            if (horizon < barrier.relative_degree)
                throw ConfigError("horizon must be >= the relative degree");
        }
    }
};

enum class RowKind { InputBound, StateBound, Distance, Dcbf, SoftCbf, SlackNonneg, Gcbf };

/// Identifies one inequality row: its kind, horizon index k, obstacle index
/// i, state/input component, and which side of a box it came from.
struct RowLabel {
    RowKind kind;
    int k = -1;
    int i = -1;
    int component = -1;
    bool upper = false;
};

/**
 * Single-shooting transcription of one receding-horizon problem.
 *
 * Decision vector z = [u_0 .. u_{N-1}, zeta_{0,0} .. zeta_{N-1,No-1}];
 * states are eliminated through the rollout, so the dynamics hold exactly
 * for every z. All constraints are inequality rows c(z) >= 0 with labels.
 * Instances are immutable after construction apart from the initial guess
 * and may be evaluated concurrently.
 */
class NlpProblem {
public:
    NlpProblem(const SystemModel& model, const OcpSpec& spec, const State& x0,
               std::vector<ObstacleTrack> obstacles)
        : model_(model), spec_(spec), x0_(x0), obstacles_(std::move(obstacles)) {
        spec_.validate(model_);
        model_.check_state(x0_);
        const int N = spec_.horizon;
        n_controls_ = N * model_.input_dim();
        n_obstacles_ = static_cast<int>(obstacles_.size());
        n_slacks_ = formulation_has_slacks(spec_.formulation) ? N * n_obstacles_ : 0;

        radii_.reserve(obstacles_.size());
        predictions_.resize(obstacles_.size());
        for (std::size_t i = 0; i < obstacles_.size(); ++i) {
            if (!(obstacles_[i].radius > 0.0))
                throw ConfigError("obstacle radius must be positive");
            radii_.push_back(combined_radius(spec_.barrier, obstacles_[i].radius));
            predictions_[i].resize(N + 1);
            for (int k = 0; k <= N; ++k)
                predictions_[i][k] = predict_obstacle(obstacles_[i], k, model_.dt).position;
        }

        build_labels();
        guess_ = VectorXd::Zero(num_vars());
    }

    int num_vars() const { return n_controls_ + n_slacks_; }
    int num_controls() const { return n_controls_; }
    int num_slacks() const { return n_slacks_; }
    int num_rows() const { return static_cast<int>(labels_.size()); }
    int num_obstacles() const { return n_obstacles_; }
    int horizon() const { return spec_.horizon; }

    const std::vector<RowLabel>& labels() const { return labels_; }
    const SystemModel& model() const { return model_; }
    const OcpSpec& spec() const { return spec_; }
    const State& initial_state() const { return x0_; }
    const std::vector<ObstacleTrack>& obstacles() const { return obstacles_; }

    const VectorXd& initial_guess() const { return guess_; }
    void set_initial_guess(VectorXd z) {
        if (z.size() != num_vars()) throw ConfigError("initial guess dimension mismatch");
        guess_ = std::move(z);
    }

    /// Rows whose violation the solver may relax during restoration: the
    /// hard obstacle rows. Input boxes and self-relaxing soft rows stay hard.
    bool row_is_elastic(int row) const {
        RowKind k = labels_[row].kind;
        return k == RowKind::Distance || k == RowKind::Dcbf || k == RowKind::Gcbf;
    }

    std::vector<Control> controls_from(const VectorXd& z) const {
        const int m = model_.input_dim();
        std::vector<Control> u(spec_.horizon);
        for (int k = 0; k < spec_.horizon; ++k) u[k] = z.segment(k * m, m);
        return u;
    }

    VectorXd slacks_from(const VectorXd& z) const { return z.tail(n_slacks_); }

    std::vector<State> states_from(const VectorXd& z) const {
        return model_.rollout(x0_, controls_from(z));
    }

    double cost(const VectorXd& z) const {
        const auto states = states_from(z);
        const auto controls = controls_from(z);
        const State xg = goal_state();
        double j = quad(x0_ - xg, spec_.state_weight);
        for (int k = 0; k < spec_.horizon; ++k) {
            j += quad(controls[k], spec_.input_weight);
            if (k >= 1) j += quad(states[k - 1] - xg, spec_.state_weight);
        }
        j += quad(states[spec_.horizon - 1] - xg, spec_.terminal_weight);
        j += spec_.penalty_weight * z.tail(n_slacks_).sum();
        return j;
    }

    VectorXd cost_gradient(const VectorXd& z) const {
        const auto states = states_from(z);
        const MatrixXd S = model_.rollout_jacobian(x0_, controls_from(z));
        return cost_gradient_impl(z, states, S);
    }

    /// Gauss-Newton Hessian of the tracking cost (positive semidefinite;
    /// the slack block is zero since the penalty is linear).
    MatrixXd cost_hessian_gn(const VectorXd& z) const {
        const MatrixXd S = model_.rollout_jacobian(x0_, controls_from(z));
        return cost_hessian_impl(S);
    }

    /**
     * Positive-semidefinite Lagrangian Hessian model: the Gauss-Newton cost
     * term plus the retained-PSD part of the CBF constraint curvature,
     * lambda_j (1-gamma) S_k' (d2h/dp2) S_k per CBF row. The concave
     * h_{k+1} contribution is dropped to keep the metric definite. With
     * large multipliers the plain Gauss-Newton model misses this curvature
     * and the SQP iteration crawls.
     */
    MatrixXd lagrangian_hessian_psd(const VectorXd& z, const VectorXd& lambda) const {
        const auto states = states_from(z);
        const MatrixXd S = model_.rollout_jacobian(x0_, controls_from(z));
        MatrixXd H = cost_hessian_impl(S);
        if (lambda.size() != num_rows()) return H;
        const int n = model_.state_dim();
        const double gamma = spec_.barrier.gamma;
        for (int row = 0; row < num_rows(); ++row) {
            const RowLabel& lb = labels_[row];
            if (lb.kind != RowKind::Dcbf && lb.kind != RowKind::SoftCbf) continue;
            double w = lambda(row) * (1.0 - gamma);
            if (w <= 0.0 || lb.k == 0) continue;
            Vector2d diff = position_at(lb.k, states) - predictions_[lb.i][lb.k];
            double dist = std::max(diff.norm(), 1e-9);
            Vector2d u = diff / dist;
            Eigen::Matrix2d curv =
                (Eigen::Matrix2d::Identity() - u * u.transpose()) / dist;
            const auto Sp = S.middleRows((lb.k - 1) * n, 2);
            H.topLeftCorner(n_controls_, n_controls_) += w * Sp.transpose() * curv * Sp;
        }
        return H;
    }

    VectorXd constraints(const VectorXd& z) const {
        return constraints_impl(z, states_from(z));
    }

    MatrixXd constraint_jacobian(const VectorXd& z) const {
        const auto states = states_from(z);
        const MatrixXd S = model_.rollout_jacobian(x0_, controls_from(z));
        return jacobian_impl(z, states, S);
    }

    /// One-pass evaluation of everything the SQP iteration needs.
    struct Evaluation {
        double cost = 0.0;
        VectorXd gradient;
        MatrixXd hessian;
        VectorXd c;
        MatrixXd jacobian;
    };

    Evaluation evaluate(const VectorXd& z) const {
        Evaluation ev;
        const auto states = states_from(z);
        const MatrixXd S = model_.rollout_jacobian(x0_, controls_from(z));
        ev.cost = cost(z);
        ev.gradient = cost_gradient_impl(z, states, S);
        ev.hessian = cost_hessian_impl(S);
        ev.c = constraints_impl(z, states);
        ev.jacobian = jacobian_impl(z, states, S);
        return ev;
    }

private:
    double quad(const VectorXd& v, const VectorXd& w) const {
        return (w.array() * v.array().square()).sum();
    }

    State goal_state() const {
        State xg = State::Zero(model_.state_dim());
        xg.head<2>() = spec_.goal;
        return xg;
    }

    /// Robot position at horizon index k (k = 0 is the fixed current state).
    Vector2d position_at(int k, const std::vector<State>& states) const {
        return k == 0 ? Vector2d(x0_.head<2>()) : Vector2d(states[k - 1].head<2>());
    }

    double h_at(int k, int i, const std::vector<State>& states) const {
        return h_value(position_at(k, states), predictions_[i][k], radii_[i]);
    }

    void build_labels() {
        const int N = spec_.horizon;
        const int m = model_.input_dim();
        const int n = model_.state_dim();
        for (int k = 0; k < N; ++k)
            for (int j = 0; j < m; ++j) {
                labels_.push_back({RowKind::InputBound, k, -1, j, false});
                labels_.push_back({RowKind::InputBound, k, -1, j, true});
            }
        for (int k = 1; k <= N; ++k)
            for (int j = 0; j < n; ++j) {
                if (std::isfinite(model_.state_bounds.lower(j)))
                    labels_.push_back({RowKind::StateBound, k, -1, j, false});
                if (std::isfinite(model_.state_bounds.upper(j)))
                    labels_.push_back({RowKind::StateBound, k, -1, j, true});
            }
        switch (spec_.formulation) {
            case Formulation::MpcDc:
                for (int k = 0; k < N; ++k)
                    for (int i = 0; i < n_obstacles_; ++i)
                        labels_.push_back({RowKind::Distance, k, i, -1, false});
                break;
            case Formulation::MpcDcbf:
                for (int k = 0; k < N; ++k)
                    for (int i = 0; i < n_obstacles_; ++i)
                        labels_.push_back({RowKind::Dcbf, k, i, -1, false});
                break;
            case Formulation::ScmpcCbf:
            case Formulation::ScmpcCbfGcbf:
                for (int k = 0; k < N; ++k)
                    for (int i = 0; i < n_obstacles_; ++i)
                        labels_.push_back({RowKind::SoftCbf, k, i, -1, false});
                for (int k = 0; k < N; ++k)
                    for (int i = 0; i < n_obstacles_; ++i)
                        labels_.push_back({RowKind::SlackNonneg, k, i, -1, false});
                if (spec_.formulation == Formulation::ScmpcCbfGcbf)
                    for (int i = 0; i < n_obstacles_; ++i)
                        labels_.push_back({RowKind::Gcbf, -1, i, -1, false});
                break;
        }
    }

    int slack_index(int k, int i) const { return n_controls_ + k * n_obstacles_ + i; }

    VectorXd constraints_impl(const VectorXd& z, const std::vector<State>& states) const {
        VectorXd c(num_rows());
        const int m = model_.input_dim();
        const double gamma = spec_.barrier.gamma;
        const double eta = spec_.barrier.eta;
        const int d = spec_.barrier.relative_degree;
        for (int row = 0; row < num_rows(); ++row) {
            const RowLabel& lb = labels_[row];
            switch (lb.kind) {
                case RowKind::InputBound: {
                    double u = z(lb.k * m + lb.component);
                    c(row) = lb.upper ? model_.input_bounds.upper(lb.component) - u
                                      : u - model_.input_bounds.lower(lb.component);
                    break;
                }
                case RowKind::StateBound: {
                    double x = states[lb.k - 1](lb.component);
                    c(row) = lb.upper ? model_.state_bounds.upper(lb.component) - x
                                      : x - model_.state_bounds.lower(lb.component);
                    break;
                }
                case RowKind::Distance:
                    c(row) = h_at(lb.k, lb.i, states);
                    break;
                case RowKind::Dcbf:
                    c(row) = dcbf_residual(h_at(lb.k + 1, lb.i, states),
                                           h_at(lb.k, lb.i, states), gamma);
                    break;
                case RowKind::SoftCbf:
                    c(row) = z(slack_index(lb.k, lb.i)) +
                             dcbf_residual(h_at(lb.k + 1, lb.i, states),
                                           h_at(lb.k, lb.i, states), gamma);
                    break;
                case RowKind::SlackNonneg:
                    c(row) = z(slack_index(lb.k, lb.i));
                    break;
                case RowKind::Gcbf:
                    c(row) = gcbf_residual(h_at(d, lb.i, states), h_at(0, lb.i, states), eta, d);
                    break;
            }
        }
        return c;
    }

    // Accumulates coeff * dh(x_k)/dU into the control part of row `row` of
    // J (no-op for k = 0, where the state is fixed).
    void add_h_gradient(MatrixXd& J, int row, int k, int i, double coeff,
                        const std::vector<State>& states, const MatrixXd& S) const {
        if (k == 0) return;
        const int n = model_.state_dim();
        Vector2d g = coeff * h_gradient(position_at(k, states), predictions_[i][k]);
        J.block(row, 0, 1, n_controls_) += g.transpose() * S.middleRows((k - 1) * n, 2);
    }

    MatrixXd jacobian_impl(const VectorXd& z, const std::vector<State>& states,
                           const MatrixXd& S) const {
        (void)z;
        MatrixXd J = MatrixXd::Zero(num_rows(), num_vars());
        const int m = model_.input_dim();
        const int n = model_.state_dim();
        const double gamma = spec_.barrier.gamma;
        const double eta = spec_.barrier.eta;
        const int d = spec_.barrier.relative_degree;
        for (int row = 0; row < num_rows(); ++row) {
            const RowLabel& lb = labels_[row];
            switch (lb.kind) {
                case RowKind::InputBound:
                    J(row, lb.k * m + lb.component) = lb.upper ? -1.0 : 1.0;
                    break;
                case RowKind::StateBound: {
                    double sign = lb.upper ? -1.0 : 1.0;
                    J.block(row, 0, 1, n_controls_) =
                        sign * S.row((lb.k - 1) * n + lb.component);
                    break;
                }
                case RowKind::Distance:
                    add_h_gradient(J, row, lb.k, lb.i, 1.0, states, S);
                    break;
                case RowKind::Dcbf:
                    add_h_gradient(J, row, lb.k + 1, lb.i, 1.0, states, S);
                    add_h_gradient(J, row, lb.k, lb.i, -(1.0 - gamma), states, S);
                    break;
                case RowKind::SoftCbf:
                    add_h_gradient(J, row, lb.k + 1, lb.i, 1.0, states, S);
                    add_h_gradient(J, row, lb.k, lb.i, -(1.0 - gamma), states, S);
                    J(row, slack_index(lb.k, lb.i)) = 1.0;
                    break;
                case RowKind::SlackNonneg:
                    J(row, slack_index(lb.k, lb.i)) = 1.0;
                    break;
                case RowKind::Gcbf:
                    add_h_gradient(J, row, d, lb.i, 1.0, states, S);
                    // h at k = 0 is constant; no gradient term.
                    (void)eta;
                    break;
            }
        }
        return J;
    }

    VectorXd cost_gradient_impl(const VectorXd& z, const std::vector<State>& states,
                                const MatrixXd& S) const {
        const int N = spec_.horizon;
        const int m = model_.input_dim();
        const int n = model_.state_dim();
        const State xg = goal_state();
        VectorXd grad = VectorXd::Zero(num_vars());
        for (int k = 1; k <= N; ++k) {
            const VectorXd& w = k == N ? spec_.terminal_weight : spec_.state_weight;
            VectorXd wx = 2.0 * (w.array() * (states[k - 1] - xg).array()).matrix();
            grad.head(n_controls_) += S.middleRows((k - 1) * n, n).transpose() * wx;
        }
        for (int k = 0; k < N; ++k)
            grad.segment(k * m, m) +=
                2.0 * (spec_.input_weight.array() * z.segment(k * m, m).array()).matrix();
        grad.tail(n_slacks_).setConstant(spec_.penalty_weight);
        return grad;
    }

    MatrixXd cost_hessian_impl(const MatrixXd& S) const {
        const int N = spec_.horizon;
        const int m = model_.input_dim();
        const int n = model_.state_dim();
        MatrixXd H = MatrixXd::Zero(num_vars(), num_vars());
        for (int k = 1; k <= N; ++k) {
            const VectorXd& w = k == N ? spec_.terminal_weight : spec_.state_weight;
            const auto Sk = S.middleRows((k - 1) * n, n);
            H.topLeftCorner(n_controls_, n_controls_) +=
                2.0 * Sk.transpose() * w.asDiagonal() * Sk;
        }
        for (int k = 0; k < N; ++k)
            for (int j = 0; j < m; ++j)
                H(k * m + j, k * m + j) += 2.0 * spec_.input_weight(j);
        return H;
    }

    SystemModel model_;
    OcpSpec spec_;
    State x0_;
    std::vector<ObstacleTrack> obstacles_;
    std::vector<double> radii_;
    std::vector<std::vector<Vector2d>> predictions_;  // [obstacle][k], k = 0..N
    std::vector<RowLabel> labels_;
    int n_controls_ = 0;
    int n_slacks_ = 0;
    int n_obstacles_ = 0;
    VectorXd guess_;
};

inline NlpProblem build_mpc_dc(const SystemModel& model, const OcpSpec& spec, const State& x0,
                               const std::vector<ObstacleTrack>& obstacles) {
    if (spec.formulation != Formulation::MpcDc)
        throw ConfigError("build_mpc_dc requires formulation MpcDc");
    return NlpProblem(model, spec, x0, obstacles);
}

inline NlpProblem build_mpc_dcbf(const SystemModel& model, const OcpSpec& spec, const State& x0,
                                 const std::vector<ObstacleTrack>& obstacles) {
    if (spec.formulation != Formulation::MpcDcbf)
        throw ConfigError("build_mpc_dcbf requires formulation MpcDcbf");
    return NlpProblem(model, spec, x0, obstacles);
}

inline NlpProblem build_scmpc_cbf(const SystemModel& model, const OcpSpec& spec, const State& x0,
                                  const std::vector<ObstacleTrack>& obstacles) {
    if (spec.formulation != Formulation::ScmpcCbf)
        throw ConfigError("build_scmpc_cbf requires formulation ScmpcCbf");
    return NlpProblem(model, spec, x0, obstacles);
}

inline NlpProblem build_scmpc_cbf_gcbf(const SystemModel& model, const OcpSpec& spec,
                                       const State& x0,
                                       const std::vector<ObstacleTrack>& obstacles) {
    if (spec.formulation != Formulation::ScmpcCbfGcbf)
        throw ConfigError("build_scmpc_cbf_gcbf requires formulation ScmpcCbfGcbf");
    return NlpProblem(model, spec, x0, obstacles);
}

inline NlpProblem build_ocp(const SystemModel& model, const OcpSpec& spec, const State& x0,
                            const std::vector<ObstacleTrack>& obstacles) {
    switch (spec.formulation) {
        case Formulation::MpcDc: return build_mpc_dc(model, spec, x0, obstacles);
        case Formulation::MpcDcbf: return build_mpc_dcbf(model, spec, x0, obstacles);
        case Formulation::ScmpcCbf: return build_scmpc_cbf(model, spec, x0, obstacles);
        case Formulation::ScmpcCbfGcbf: return build_scmpc_cbf_gcbf(model, spec, x0, obstacles);
    }
    throw ConfigError("unknown formulation");
}

/// Warm-start vector: the previous optimal controls shifted one step with
/// the last control repeated; slacks start at zero. Without a previous
/// solution everything is zero.
inline VectorXd initial_guess(const OcpSpec& spec, const SystemModel& model, int n_obstacles,
                              const std::vector<Control>* previous = nullptr) {
    const int m = model.input_dim();
    const int n_slacks =
        formulation_has_slacks(spec.formulation) ? spec.horizon * n_obstacles : 0;
    VectorXd z = VectorXd::Zero(spec.horizon * m + n_slacks);
    if (previous != nullptr && !previous->empty()) {
        const int last = static_cast<int>(previous->size()) - 1;
        for (int k = 0; k < spec.horizon; ++k)
            z.segment(k * m, m) = (*previous)[std::min(k + 1, last)];
    }
    return z;
}

}  // namespace cbfmpc

#endif  // CBFMPC_OCP_HPP
