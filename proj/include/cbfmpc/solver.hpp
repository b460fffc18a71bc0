#ifndef CBFMPC_SOLVER_HPP
#define CBFMPC_SOLVER_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <functional>
#include <utility>
#include <vector>

#include "cbfmpc/common.hpp"
#include "cbfmpc/ocp.hpp"
#include "cbfmpc/qp.hpp"

namespace cbfmpc {

/// Anything the SQP iteration needs from a problem. NlpProblem models this;
/// small synthetic problems in tests do as well.
template <typename P>
concept OptimizationProblem = requires(const P& p, const VectorXd& z, int row) {
    { p.num_vars() } -> std::convertible_to<int>;
    { p.num_rows() } -> std::convertible_to<int>;
    { p.initial_guess() } -> std::convertible_to<VectorXd>;
    { p.cost(z) } -> std::convertible_to<double>;
    { p.cost_gradient(z) } -> std::convertible_to<VectorXd>;
    { p.cost_hessian_gn(z) } -> std::convertible_to<MatrixXd>;
    { p.constraints(z) } -> std::convertible_to<VectorXd>;
    { p.constraint_jacobian(z) } -> std::convertible_to<MatrixXd>;
    { p.row_is_elastic(row) } -> std::convertible_to<bool>;
};

struct SolverConfig {
    int max_iterations = 100;
    double stationarity_tol = 1e-6;
    double feasibility_tol = 1e-6;
    double complementarity_tol = 1e-6;
    double hessian_regularization = 1e-6;
    // L1-merit backtracking line search.
    double armijo_coefficient = 1e-4;
    double backtrack_ratio = 0.5;
    int max_backtracks = 40;
    // Infeasibility is declared after this many consecutive stalled
    // restoration iterations with linearized violation above tolerance.
    int infeasible_streak_limit = 5;
    double elastic_penalty = 1e4;
    bool keep_trace = false;

    void validate() const {
        if (stationarity_tol <= 0 || feasibility_tol <= 0 || complementarity_tol <= 0)
            throw ConfigError("solver tolerances must be positive");
        if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
    }
};

enum class SolveStatus { Solved, Infeasible, MaxIter };

inline const char* status_name(SolveStatus s) {
    switch (s) {
        case SolveStatus::Solved: return "solved";
        case SolveStatus::Infeasible: return "infeasible";
        case SolveStatus::MaxIter: return "max_iter";
    }
    return "?";
}

struct IterationTrace {
    int iteration = 0;
    double cost = 0.0;
    double merit_before = 0.0;
    double merit_after = 0.0;
    double merit_penalty = 0.0;
    double step_length = 0.0;
    double violation = 0.0;
    bool elastic = false;
    int qp_iterations = 0;
};

struct KktReport {
    double stationarity = 0.0;
    double primal_feasibility = 0.0;
    double dual_feasibility = 0.0;
    double complementarity = 0.0;

    bool passes(const SolverConfig& cfg) const {
        return stationarity <= cfg.stationarity_tol &&
               primal_feasibility <= cfg.feasibility_tol &&
               dual_feasibility <= cfg.feasibility_tol &&
               complementarity <= cfg.complementarity_tol;
    }
};

struct SolverResult {
    SolveStatus status = SolveStatus::MaxIter;
    VectorXd z;
    std::vector<Control> controls;  // populated when the problem exposes controls_from
    VectorXd slacks;                // empty for hard formulations
    VectorXd multipliers;           // one per constraint row; >= 0
    double kkt_stationarity = 0.0;
    double kkt_feasibility = 0.0;
    double kkt_complementarity = 0.0;
    int iterations = 0;
    double solve_time_ms = 0.0;
    std::string diagnostic;
    std::vector<IterationTrace> trace;
};

namespace detail {

inline double total_violation(const VectorXd& c) {
    return (-c.array()).max(0.0).sum();
}

/// Residuals of the KKT system with convention c(z) >= 0, L = f - lambda' c,
/// lambda >= 0.
inline KktReport kkt_from_parts(const VectorXd& grad, const VectorXd& c, const MatrixXd& jac,
                                const VectorXd& lambda) {
    KktReport rep;
    VectorXd stat = grad - jac.transpose() * lambda;
    rep.stationarity = stat.size() > 0 ? stat.lpNorm<Eigen::Infinity>() : 0.0;
    rep.primal_feasibility = c.size() > 0 ? std::max(0.0, -c.minCoeff()) : 0.0;
    rep.dual_feasibility = lambda.size() > 0 ? std::max(0.0, -lambda.minCoeff()) : 0.0;
    rep.complementarity =
        c.size() > 0 ? (lambda.array() * c.array()).abs().maxCoeff() : 0.0;
    return rep;
}

}  // namespace detail

/// Stationarity, primal/dual feasibility and complementarity of a candidate
/// point. This is the certificate checked before any result is declared
/// Solved.
template <OptimizationProblem P>
KktReport kkt_check(const P& problem, const VectorXd& z, const VectorXd& lambda) {
    if (z.size() != problem.num_vars() || lambda.size() != problem.num_rows())
        throw ConfigError("kkt_check dimension mismatch");
    return detail::kkt_from_parts(problem.cost_gradient(z), problem.constraints(z),
                                  problem.constraint_jacobian(z), lambda);
}

/**
 * SQP solver: Gauss-Newton Hessian, convex QP subproblems solved by a dual
 * active-set method, L1-merit backtracking line search, and an elastic
 * restoration phase that relaxes the hard obstacle rows to measure the
 * minimal linearized violation. A result is Solved only once the full KKT
 * residual set is below tolerance; Infeasible is declared when restoration
 * stalls with violation above feasibility_tol for infeasible_streak_limit
 * consecutive iterations.
 */
template <OptimizationProblem P>
SolverResult solve(const P& problem, const SolverConfig& config = {}) {
    config.validate();
    const auto t_start = std::chrono::steady_clock::now();
    const int nz = problem.num_vars();
    const int m_rows = problem.num_rows();

    SolverResult result;
    VectorXd z = problem.initial_guess();
    if (z.size() != nz) throw ConfigError("initial guess dimension mismatch");
    VectorXd lambda = VectorXd::Zero(m_rows);

    std::vector<int> elastic_rows;
    for (int r = 0; r < m_rows; ++r)
        if (problem.row_is_elastic(r)) elastic_rows.push_back(r);

    double mu = 10.0;
    int streak = 0;
    double prev_violation = std::numeric_limits<double>::infinity();

    auto finish = [&](SolveStatus status, int iters) {
        result.status = status;
        result.z = z;
        result.multipliers = lambda;
        result.iterations = iters;
        KktReport rep = kkt_check(problem, z, lambda);
        result.kkt_stationarity = rep.stationarity;
        result.kkt_feasibility = rep.primal_feasibility;
        result.kkt_complementarity = rep.complementarity;
        if constexpr (requires { problem.controls_from(z); }) {
            result.controls = problem.controls_from(z);
            result.slacks = problem.slacks_from(z);
        }
        result.solve_time_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start)
                .count();
        return result;
    };

    // Lagrangian Hessian approximation: start from the Gauss-Newton model
    // and maintain it with Powell-damped BFGS updates. Gauss-Newton alone
    // misses the residual-times-dynamics-curvature term, which makes the
    // iteration non-contracting on nonlinear models far from the goal.
    MatrixXd bfgs;
    bool have_bfgs = false;
    bool last_elastic = false;
    VectorXd z_prev, grad_prev;
    MatrixXd jac_prev;

    for (int iter = 1; iter <= config.max_iterations; ++iter) {
        double cost = problem.cost(z);
        VectorXd grad = problem.cost_gradient(z);
        VectorXd c = problem.constraints(z);
        MatrixXd jac = problem.constraint_jacobian(z);

        if (!std::isfinite(cost) || !grad.allFinite() || !c.allFinite() || !jac.allFinite()) {
            result.diagnostic = "non-finite evaluation";
            return finish(SolveStatus::MaxIter, iter);
        }

        KktReport rep = detail::kkt_from_parts(grad, c, jac, lambda);
        if (!rep.passes(config) && rep.stationarity <= config.stationarity_tol &&
            rep.primal_feasibility <= config.feasibility_tol) {
            // Multiplier repair. Parallel rows (a slack bound and its soft
            // row share the gradient e_zeta) let the QP park weight on the
            // geometrically inactive twin: stationarity is unaffected but
            // complementarity cannot certify. Refit the multipliers over
            // the geometrically active rows by least squares, tightening
            // the activity cut until the certificate passes.
            for (double act_tol : {1e-10, 1e-9, 1e-8, 1e-7}) {
                std::vector<int> act;
                for (int r = 0; r < m_rows; ++r)
                    if (c(r) <= act_tol) act.push_back(r);
                VectorXd lam2 = VectorXd::Zero(m_rows);
                bool ok = true;
                if (!act.empty()) {
                    MatrixXd At(nz, act.size());
                    for (std::size_t i = 0; i < act.size(); ++i)
                        At.col(i) = jac.row(act[i]).transpose();
                    VectorXd y = At.colPivHouseholderQr().solve(grad);
                    ok = (y.array() >= -1e-8).all();
                    for (std::size_t i = 0; i < act.size() && ok; ++i)
                        lam2(act[i]) = std::max(y(i), 0.0);
                }
                if (!ok) continue;
                KktReport rep2 = detail::kkt_from_parts(grad, c, jac, lam2);
                if (rep2.passes(config)) {
                    lambda = lam2;
                    rep = rep2;
                    break;
                }
            }
        }
        if (rep.passes(config)) return finish(SolveStatus::Solved, iter - 1);

        auto model_hessian = [&] {
            MatrixXd h;
            if constexpr (requires { problem.lagrangian_hessian_psd(z, lambda); })
                h = problem.lagrangian_hessian_psd(z, lambda);
            else
                h = problem.cost_hessian_gn(z);
            h.diagonal().array() += config.hessian_regularization;
            return h;
        };
        if (!have_bfgs) {
            bfgs = model_hessian();
            have_bfgs = true;
        } else if (!last_elastic) {
            // Damped BFGS step using the multipliers of the new iterate.
            // Restoration iterations are skipped: their capped elastic
            // multipliers are not dual estimates of this problem.
            VectorXd s = z - z_prev;
            double s_norm = s.lpNorm<Eigen::Infinity>();
            if (s_norm > 1e-13) {
                VectorXd y = (grad - jac.transpose() * lambda) -
                             (grad_prev - jac_prev.transpose() * lambda);
                VectorXd Bs = bfgs * s;
                double sBs = s.dot(Bs);
                double sy = s.dot(y);
                if (sBs > 1e-12 * s.squaredNorm()) {
                    if (sy < 0.2 * sBs) {
                        double theta = 0.8 * sBs / (sBs - sy);
                        y = theta * y + (1.0 - theta) * Bs;
                        sy = s.dot(y);
                    }
                    // Cap the injected curvature so one extreme multiplier
                    // swing cannot corrode the factorization.
                    if (sy >= 0.1 * sBs && y.squaredNorm() / sy < 1e6)
                        bfgs += (y * y.transpose()) / sy - (Bs * Bs.transpose()) / sBs;
                }
            }
        }
        z_prev = z;
        grad_prev = grad;
        jac_prev = jac;
        // Heal numerically corroded updates before any QP sees the matrix.
        if (!bfgs.allFinite() || Eigen::LLT<MatrixXd>(bfgs).info() != Eigen::Success)
            bfgs = model_hessian();
        MatrixXd hess = bfgs;

        // Hard QP on the linearized constraints: min 1/2 p'Hp + g'p,
        // jac p + c >= 0.
        QpResult qp = solve_qp(hess, grad, jac, -c);
        VectorXd p;
        VectorXd lambda_qp = VectorXd::Zero(m_rows);
        double viol_lin = 0.0;
        bool elastic_mode = false;

        if (qp.status == QpStatus::Optimal) {
            p = qp.x;
            lambda_qp = qp.lambda;
        } else {
            // Elastic restoration QP: slacks on the hard obstacle rows
            // absorb the inconsistency and measure its size.
            elastic_mode = true;
            const int ne = static_cast<int>(elastic_rows.size());
            const double sigma = config.elastic_penalty;
            MatrixXd He = MatrixXd::Zero(nz + ne, nz + ne);
            He.topLeftCorner(nz, nz) = hess;
            He.bottomRightCorner(ne, ne).diagonal().setConstant(sigma);
            VectorXd ge(nz + ne);
            ge << grad, VectorXd::Constant(ne, sigma);
            MatrixXd Ae = MatrixXd::Zero(m_rows + ne, nz + ne);
            Ae.topLeftCorner(m_rows, nz) = jac;
            for (int e = 0; e < ne; ++e) {
                Ae(elastic_rows[e], nz + e) = 1.0;
                Ae(m_rows + e, nz + e) = 1.0;  // s >= 0
            }
            VectorXd be(m_rows + ne);
            be << -c, VectorXd::Zero(ne);
            QpResult qpe = solve_qp(He, ge, Ae, be);
            if (qpe.status == QpStatus::Infeasible) {
                // Even with the obstacle rows fully relaxed there is no
                // consistent step; the remaining hard rows are contradictory.
                result.diagnostic = "elastic subproblem infeasible";
                return finish(SolveStatus::Infeasible, iter);
            }
            if (qpe.status != QpStatus::Optimal) {
                result.diagnostic = "QP iteration limit";
                return finish(SolveStatus::MaxIter, iter);
            }
            p = qpe.x.head(nz);
            viol_lin = qpe.x.tail(ne).cwiseMax(0.0).sum();
            lambda_qp = qpe.lambda.head(m_rows);
        }

        const double viol0 = detail::total_violation(c);

        // Local phase: micro corrections are below the merit's noise floor;
        // take them outright with the fresh multipliers. Total drift over a
        // whole solve is bounded by max_iterations * 1e-5.
        if (!elastic_mode && p.lpNorm<Eigen::Infinity>() <= 1e-5) {
            z += p;
            lambda = lambda_qp;
            last_elastic = false;
            continue;
        }

        // Merit penalty must dominate the multipliers for p to be a descent
        // direction of the L1 merit.
        double lam_inf = lambda_qp.size() > 0 ? lambda_qp.lpNorm<Eigen::Infinity>() : 0.0;
        mu = std::max(mu, 1.5 * lam_inf + 1.0);

        double directional = grad.dot(p) - mu * (viol0 - viol_lin);
        if (directional >= 0.0) {
            if (elastic_mode && viol_lin > config.feasibility_tol) {
                lambda = lambda_qp;
                if (++streak >= config.infeasible_streak_limit) {
                    result.diagnostic = "restoration stationary with violation";
                    return finish(SolveStatus::Infeasible, iter);
                }
                continue;
            }
            mu *= 10.0;
            directional = grad.dot(p) - mu * (viol0 - viol_lin);
            if (directional >= 0.0) {
                lambda = lambda_qp;
                result.diagnostic = "no descent direction";
                return finish(SolveStatus::MaxIter, iter);
            }
        }

        const double merit0 = cost + mu * viol0;
        // Merit comparisons are meaningless below the evaluation roundoff,
        // and near the solution the quadratic model mismatch makes the exact
        // Armijo test reject productive micro steps; the allowance decays
        // quadratically with the step so global convergence is unaffected.
        const double merit_noise =
            1e-12 * (1.0 + std::abs(merit0)) + std::min(1e-8, 50.0 * p.squaredNorm());
        double alpha = 1.0;
        bool accepted = false;
        double merit_try = 0.0;
        VectorXd z_try;
        for (int bt = 0; bt <= config.max_backtracks; ++bt) {
            z_try = z + alpha * p;
            double cost_try = problem.cost(z_try);
            VectorXd c_try = problem.constraints(z_try);
            double viol_try = detail::total_violation(c_try);
            merit_try = cost_try + mu * viol_try;
            if (std::isfinite(merit_try) &&
                merit_try <=
                    merit0 + config.armijo_coefficient * alpha * directional + merit_noise) {
                accepted = true;
                break;
            }
            if (bt == 0 && viol_try > viol0 + 1e-12 && c_try.allFinite()) {
                // Second-order correction: the full step was rejected because
                // constraint curvature pushed the violation up. Re-solve the
                // QP with the constraints re-evaluated at z + p.
                QpResult qp_soc = solve_qp(hess, grad, jac, jac * p - c_try);
                if (qp_soc.status == QpStatus::Optimal) {
                    VectorXd z_soc = z + qp_soc.x;
                    double cost_soc = problem.cost(z_soc);
                    double viol_soc = detail::total_violation(problem.constraints(z_soc));
                    double merit_soc = cost_soc + mu * viol_soc;
                    if (std::isfinite(merit_soc) &&
                        merit_soc <= merit0 + config.armijo_coefficient * directional +
                                         merit_noise) {
                        z_try = z_soc;
                        merit_try = merit_soc;
                        lambda_qp = qp_soc.lambda;
                        accepted = true;
                        break;
                    }
                }
            }
            alpha *= config.backtrack_ratio;
        }
        if (!accepted) {
            result.diagnostic = "line search failed";
            return finish(SolveStatus::MaxIter, iter);
        }

        z = z_try;
        lambda = alpha >= 1.0 ? lambda_qp
                              : VectorXd((1.0 - alpha) * lambda + alpha * lambda_qp);

        double viol_new = detail::total_violation(problem.constraints(z));
        if (elastic_mode && viol_lin > config.feasibility_tol) {
            bool stalled = viol_new >= prev_violation * (1.0 - 1e-3) - 1e-12;
            streak = stalled ? streak + 1 : 1;
            if (streak >= config.infeasible_streak_limit) {
                result.diagnostic = "persistent restoration violation";
                return finish(SolveStatus::Infeasible, iter);
            }
        } else {
            streak = 0;
        }
        prev_violation = viol_new;

        last_elastic = elastic_mode;
        if (config.keep_trace) {
            IterationTrace tr;
            tr.iteration = iter;
            tr.cost = cost;
            tr.merit_before = merit0;
            tr.merit_after = merit_try;
            tr.merit_penalty = mu;
            tr.step_length = alpha;
            tr.violation = viol_new;
            tr.elastic = elastic_mode;
            tr.qp_iterations = qp.iterations;
            result.trace.push_back(tr);
        }
    }
    result.diagnostic = "iteration limit";
    return finish(SolveStatus::MaxIter, config.max_iterations);
}

/// Per-sample statistics from the penalty-weight estimation campaign.
struct PenaltyEstimate {
    double recommended_alpha = 0.0;
    double max_multiplier_norm = 0.0;
    std::vector<double> sample_norms;  // ||lambda*||_inf over CBF rows, feasible samples
    int skipped_infeasible = 0;
    bool floored = false;
};

/// Aggregation rule: safety_factor times the largest per-sample multiplier
/// infinity norm, floored at alpha_floor when no constraint was active.
inline PenaltyEstimate aggregate_penalty_samples(const std::vector<double>& sample_norms,
                                                 double safety_factor, int skipped,
                                                 double alpha_floor = 1.0) {
    PenaltyEstimate est;
    est.sample_norms = sample_norms;
    est.skipped_infeasible = skipped;
    for (double v : sample_norms) est.max_multiplier_norm = std::max(est.max_multiplier_norm, v);
    est.recommended_alpha = safety_factor * est.max_multiplier_norm;
    if (est.recommended_alpha < alpha_floor) {
        est.recommended_alpha = alpha_floor;
        est.floored = true;
    }
    return est;
}

/// Samples initial conditions, solves the hard CBF problem on each, records
/// the infinity norm of the CBF-row multipliers (the dual norm of the L1
/// slack penalty), and recommends safety_factor times the maximum.
inline PenaltyEstimate estimate_penalty_weight(
    const OcpSpec& spec, const SystemModel& model,
    const std::function<std::pair<State, std::vector<ObstacleTrack>>(int)>& scenario_sampler,
    int n_samples, double safety_factor, const SolverConfig& config = {}) {
    if (n_samples < 1) throw ConfigError("estimate_penalty_weight requires n_samples >= 1");
    OcpSpec hard = spec;
    hard.formulation = Formulation::MpcDcbf;
    hard.penalty_weight = 0.0;
    std::vector<double> norms;
    int skipped = 0;
    for (int s = 0; s < n_samples; ++s) {
        auto [x0, obstacles] = scenario_sampler(s);
        NlpProblem problem = build_mpc_dcbf(model, hard, x0, obstacles);
        SolverResult res = solve(problem, config);
        if (res.status != SolveStatus::Solved) {
            ++skipped;
            continue;
        }
        double norm = 0.0;
        for (int r = 0; r < problem.num_rows(); ++r)
            if (problem.labels()[r].kind == RowKind::Dcbf)
                norm = std::max(norm, res.multipliers(r));
        norms.push_back(norm);
    }
    if (norms.empty())
        throw EstimationError("hard problem infeasible on all " + std::to_string(n_samples) +
                              " samples");
    return aggregate_penalty_samples(norms, safety_factor, skipped);
}

}  // namespace cbfmpc

#endif  // CBFMPC_SOLVER_HPP
