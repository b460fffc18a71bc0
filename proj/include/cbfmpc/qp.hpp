#ifndef CBFMPC_QP_HPP
#define CBFMPC_QP_HPP

#include <cmath>
#include <limits>
#include <vector>

#include "cbfmpc/common.hpp"

namespace cbfmpc {

enum class QpStatus { Optimal, Infeasible, IterationLimit };

struct QpResult {
    QpStatus status = QpStatus::IterationLimit;
    VectorXd x;
    VectorXd lambda;          // one multiplier per row, >= 0, zero when inactive
    std::vector<int> active;  // indices of rows active at the solution
    int iterations = 0;
};

/**
 * Dense convex QP solver, dual active-set method of Goldfarb and Idnani.
 *
 *     min  1/2 x' G x + g' x   s.t.  A x >= b
 *
 * G must be symmetric positive definite. Starts from the unconstrained
 * minimizer and adds violated constraints one at a time, maintaining the
 * QR factorization of the active normals in the metric of G via Givens
 * updates. Detects inconsistent constraint sets (dual step unbounded).
 * Fully deterministic: ties in constraint selection and dual blocking are
 * broken by lowest row index.
 */
class QpSolver {
public:
    QpResult solve(const MatrixXd& G, const VectorXd& g, const MatrixXd& A, const VectorXd& b,
                   int max_iterations = 0) {
        const int n = static_cast<int>(G.rows());
        const int m = static_cast<int>(A.rows());
        QpResult res;
        res.lambda = VectorXd::Zero(m);

        if (!G.allFinite()) throw ConfigError("QP Hessian has non-finite entries");
        Eigen::LLT<MatrixXd> llt(G);
        if (llt.info() != Eigen::Success) {
            // Escalating Tikhonov shift for matrices that lost definiteness
            // to roundoff.
            double tau = 1e-12 * (1.0 + G.cwiseAbs().maxCoeff());
            MatrixXd shifted;
            for (int attempt = 0; attempt < 8 && llt.info() != Eigen::Success; ++attempt) {
                shifted = G;
                shifted.diagonal().array() += tau;
                llt.compute(shifted);
                tau *= 100.0;
            }
            if (llt.info() != Eigen::Success)
                throw ConfigError("QP Hessian is not positive definite");
        }

        // J = L^{-T}, rotated in place as constraints enter and leave.
        MatrixXd J = MatrixXd::Identity(n, n);
        llt.matrixU().solveInPlace(J);
        MatrixXd R = MatrixXd::Zero(n, n);

        VectorXd x = -llt.solve(g);
        std::vector<int> active;
        VectorXd u = VectorXd::Zero(n);  // multipliers of active rows
        std::vector<char> in_active(m, 0);

        const int iter_cap = max_iterations > 0 ? max_iterations : 50 * (n + m) + 200;
        int iq = 0;
        VectorXd d(n), z(n), r(n), np(n);

        for (int iter = 0; iter < iter_cap; ++iter) {
            res.iterations = iter + 1;

            // Most violated inactive constraint.
            int ip = -1;
            double worst = 0.0;
            for (int i = 0; i < m; ++i) {
                if (in_active[i]) continue;
                double s = A.row(i).dot(x) - b(i);
                double tol = 1e-11 * (1.0 + std::abs(b(i)));
                if (s < -tol && s < worst) {
                    worst = s;
                    ip = i;
                }
            }
            if (ip < 0) {
                // Degenerate parallel rows (identical normals, e.g. a slack
                // bound and a constant-shifted soft row) can leave the label
                // on the twin that is not at its boundary. Swapping to the
                // tight twin preserves stationarity exactly.
                bool swapped = false;
                for (int k = 0; k < iq; ++k) {
                    int j = active[k];
                    double sj = A.row(j).dot(x) - b(j);
                    if (std::abs(sj) <= 1e-9 * (1.0 + std::abs(b(j)))) continue;
                    for (int j2 = 0; j2 < m; ++j2) {
                        if (in_active[j2] || j2 == j) continue;
                        if ((A.row(j2) - A.row(j)).lpNorm<Eigen::Infinity>() >
                            1e-12 * (1.0 + A.row(j).lpNorm<Eigen::Infinity>()))
                            continue;
                        double s2 = A.row(j2).dot(x) - b(j2);
                        if (std::abs(s2) <= 1e-9 * (1.0 + std::abs(b(j2)))) {
                            in_active[j] = 0;
                            in_active[j2] = 1;
                            active[k] = j2;
                            swapped = true;
                            break;
                        }
                    }
                }
                // A swap may expose the original row as violated; rescan.
                if (swapped) continue;
                res.status = QpStatus::Optimal;
                refine(G, g, A, b, active, x, u, iq);
                res.x = x;
                for (int k = 0; k < iq; ++k) res.lambda(active[k]) = std::max(u(k), 0.0);
                res.active = active;
                return res;
            }

            np = A.row(ip).transpose();
            double u_plus = 0.0;
            double s_ip = worst;

            // Inner loop: take dual/primal steps until ip becomes active or
            // the problem is proven infeasible.
            for (;;) {
                if (++res.iterations > iter_cap) {
                    res.status = QpStatus::IterationLimit;
                    res.x = x;
                    return res;
                }
                d.noalias() = J.transpose() * np;
                z.setZero();
                if (iq < n) z.noalias() = J.rightCols(n - iq) * d.tail(n - iq);
                if (iq > 0)
                    r.head(iq) = R.topLeftCorner(iq, iq).triangularView<Eigen::Upper>().solve(
                        d.head(iq));

                // Largest dual step before an active multiplier hits zero.
                double t1 = std::numeric_limits<double>::infinity();
                int l = -1;
                for (int k = 0; k < iq; ++k) {
                    if (r(k) > 1e-14) {
                        double tk = u(k) / r(k);
                        if (tk < t1) {
                            t1 = tk;
                            l = k;
                        }
                    }
                }

                // Step to the boundary of constraint ip along z.
                double znp = z.dot(np);
                double t2 = std::numeric_limits<double>::infinity();
                bool z_nonzero = znp > 1e-13 * (1.0 + np.squaredNorm());
                if (z_nonzero) t2 = -s_ip / znp;

                double t = std::min(t1, t2);
                if (!std::isfinite(t)) {
                    res.status = QpStatus::Infeasible;
                    res.x = x;
                    return res;
                }

                if (!z_nonzero) {
                    // Pure dual step: constraint ip is dependent on the
                    // active set; relax the blocking constraint l.
                    u.head(iq) -= t * r.head(iq);
                    u_plus += t;
                    drop_constraint(J, R, active, u, in_active, iq, l);
                    continue;
                }

                x += t * z;
                u.head(iq) -= t * r.head(iq);
                u_plus += t;
                s_ip = np.dot(x) - b(ip);

                if (t2 <= t1) {
                    // Full step: ip enters the active set.
                    if (!add_constraint(J, R, d, iq)) {
                        res.status = QpStatus::IterationLimit;
                        res.x = x;
                        return res;
                    }
                    active.push_back(ip);
                    in_active[ip] = 1;
                    u(iq - 1) = u_plus;
                    break;
                }
                drop_constraint(J, R, active, u, in_active, iq, l);
            }
        }
        res.status = QpStatus::IterationLimit;
        res.x = x;
        return res;
    }

private:
    // Re-solve the equality-constrained KKT system on the final active set.
    // The incremental rotations accumulate roundoff over many active-set
    // changes; one direct solve restores near machine-precision stationarity,
    // which downstream SQP descent tests rely on.
    static void refine(const MatrixXd& G, const VectorXd& g, const MatrixXd& A,
                       const VectorXd& b, const std::vector<int>& active, VectorXd& x,
                       VectorXd& u, int iq) {
        if (iq == 0) return;
        const int n = static_cast<int>(G.rows());
        MatrixXd K = MatrixXd::Zero(n + iq, n + iq);
        K.topLeftCorner(n, n) = G;
        VectorXd rhs(n + iq);
        rhs.head(n) = -g;
        for (int k = 0; k < iq; ++k) {
            K.block(0, n + k, n, 1) = -A.row(active[k]).transpose();
            K.block(n + k, 0, 1, n) = A.row(active[k]);
            rhs(n + k) = b(active[k]);
        }
        Eigen::PartialPivLU<MatrixXd> lu(K);
        VectorXd sol = lu.solve(rhs);
        if (!sol.allFinite()) return;
        // Iterative refinement: the KKT system inherits the Hessian's
        // conditioning, and downstream complementarity checks need the
        // active rows satisfied to much better than sqrt(eps).
        for (int round = 0; round < 2; ++round) {
            VectorXd resid = rhs - K * sol;
            VectorXd corr = lu.solve(resid);
            if (!corr.allFinite()) break;
            sol += corr;
        }
        VectorXd lam = sol.tail(iq);
        if ((lam.array() < -1e-9).any()) return;  // active set disagrees; keep GI output
        VectorXd xr = sol.head(n);
        if (((A * xr - b).array() < -1e-9).any()) return;
        x = xr;
        for (int k = 0; k < iq; ++k) u(k) = lam(k);
    }

    // Rotate the trailing components of d into position iq and extend R.
    static bool add_constraint(MatrixXd& J, MatrixXd& R, VectorXd& d, int& iq) {
        const int n = static_cast<int>(J.rows());
        for (int j = n - 1; j > iq; --j) {
            double a = d(j - 1), bb = d(j);
            double h = std::hypot(a, bb);
            if (h == 0.0) continue;
            double c = a / h, s = bb / h;
            d(j - 1) = h;
            d(j) = 0.0;
            for (int row = 0; row < n; ++row) {
                double t1 = J(row, j - 1), t2 = J(row, j);
                J(row, j - 1) = c * t1 + s * t2;
                J(row, j) = -s * t1 + c * t2;
            }
        }
        double scale = 1.0;
        if (iq > 0)
            scale += d.head(iq).cwiseAbs().maxCoeff() +
                     R.topLeftCorner(iq, iq).cwiseAbs().maxCoeff();
        if (std::abs(d(iq)) < 1e-13 * scale) return false;  // numerically dependent normal
        R.col(iq).head(iq + 1) = d.head(iq + 1);
        ++iq;
        return true;
    }

    static void drop_constraint(MatrixXd& J, MatrixXd& R, std::vector<int>& active, VectorXd& u,
                                std::vector<char>& in_active, int& iq, int l) {
        const int n = static_cast<int>(J.rows());
        in_active[active[l]] = 0;
        active.erase(active.begin() + l);
        for (int j = l; j < iq - 1; ++j) {
            R.col(j).head(iq) = R.col(j + 1).head(iq);
            u(j) = u(j + 1);
        }
        R.col(iq - 1).setZero();
        u(iq - 1) = 0.0;
        --iq;
        // Re-triangularize: the shifted columns left a subdiagonal behind.
        for (int j = l; j < iq; ++j) {
            double a = R(j, j), bb = R(j + 1, j);
            double h = std::hypot(a, bb);
            if (h == 0.0) continue;
            double c = a / h, s = bb / h;
            for (int col = j; col < iq; ++col) {
                double t1 = R(j, col), t2 = R(j + 1, col);
                R(j, col) = c * t1 + s * t2;
                R(j + 1, col) = -s * t1 + c * t2;
            }
            for (int row = 0; row < n; ++row) {
                double t1 = J(row, j), t2 = J(row, j + 1);
                J(row, j) = c * t1 + s * t2;
                J(row, j + 1) = -s * t1 + c * t2;
            }
        }
    }
};

inline QpResult solve_qp(const MatrixXd& G, const VectorXd& g, const MatrixXd& A,
                         const VectorXd& b, int max_iterations = 0) {
    QpSolver solver;
    return solver.solve(G, g, A, b, max_iterations);
}

}  // namespace cbfmpc

#endif  // CBFMPC_QP_HPP
