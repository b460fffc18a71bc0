#ifndef CBFMPC_ORCA_HPP
#define CBFMPC_ORCA_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include "cbfmpc/common.hpp"

namespace cbfmpc {

/// Reciprocal-velocity-obstacle policy parameters. Defaults follow the
/// usual crowd-simulation setup: pedestrians react to anyone within 10 m,
/// up to 10 neighbors, with a 5 s reciprocal horizon.
struct OrcaAgentParams {
    double radius = 0.3;
    double max_speed = 1.0;
    double preferred_speed = 1.0;
    double time_horizon = 5.0;
    double neighbor_distance = 10.0;
    int max_neighbors = 10;
};

/// Kinematic snapshot of one agent as seen by the policy.
struct OrcaAgent {
    Vector2d position{0.0, 0.0};
    Vector2d velocity{0.0, 0.0};
    double radius = 0.3;
};

/// Closed half-plane of admissible velocities: {v : (v - point) . normal >= 0}.
struct HalfPlane {
    Vector2d point{0.0, 0.0};
    Vector2d normal{1.0, 0.0};
};

namespace orca_detail {

inline double det2(const Vector2d& a, const Vector2d& b) {
    return a.x() * b.y() - a.y() * b.x();
}

/// Velocity-space line with the feasible side on its left.
struct Line {
    Vector2d point;
    Vector2d direction;
};

inline Line to_line(const HalfPlane& hp) {
    return Line{hp.point, Vector2d(hp.normal.y(), -hp.normal.x())};
}

constexpr double kLpEpsilon = 1e-10;

inline bool linear_program1(const std::vector<Line>& lines, std::size_t line_no, double radius,
                            const Vector2d& opt_velocity, bool direction_opt, Vector2d& result) {
    const double dot = lines[line_no].point.dot(lines[line_no].direction);
    const double discriminant =
        dot * dot + radius * radius - lines[line_no].point.squaredNorm();
    if (discriminant < 0.0) return false;  // max-speed disk misses the line

    const double sqrt_disc = std::sqrt(discriminant);
    double t_left = -dot - sqrt_disc;
    double t_right = -dot + sqrt_disc;

    for (std::size_t i = 0; i < line_no; ++i) {
        const double denominator = det2(lines[line_no].direction, lines[i].direction);
        const double numerator =
            det2(lines[i].direction, lines[line_no].point - lines[i].point);
        if (std::abs(denominator) <= kLpEpsilon) {
            if (numerator < 0.0) return false;  // parallel and fully infeasible
            continue;
        }
        const double t = numerator / denominator;
        if (denominator >= 0.0)
            t_right = std::min(t_right, t);
        else
            t_left = std::max(t_left, t);
        if (t_left > t_right) return false;
    }

    if (direction_opt) {
        if (opt_velocity.dot(lines[line_no].direction) > 0.0)
            result = lines[line_no].point + t_right * lines[line_no].direction;
        else
            result = lines[line_no].point + t_left * lines[line_no].direction;
    } else {
        const double t = lines[line_no].direction.dot(opt_velocity - lines[line_no].point);
        result = lines[line_no].point + std::clamp(t, t_left, t_right) * lines[line_no].direction;
    }
    return true;
}

inline std::size_t linear_program2(const std::vector<Line>& lines, double radius,
                                   const Vector2d& opt_velocity, bool direction_opt,
                                   Vector2d& result) {
    if (direction_opt) {
        result = opt_velocity * radius;  // opt_velocity is a unit direction
    } else if (opt_velocity.squaredNorm() > radius * radius) {
        result = opt_velocity.normalized() * radius;
    } else {
        result = opt_velocity;
    }
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (det2(lines[i].direction, lines[i].point - result) > 0.0) {
            const Vector2d temp = result;
            if (!linear_program1(lines, i, radius, opt_velocity, direction_opt, result)) {
                result = temp;
                return i;
            }
        }
    }
    return lines.size();
}

/// Least-penetration fallback when the half-planes are jointly infeasible.
inline void linear_program3(const std::vector<Line>& lines, std::size_t begin_line, double radius,
                            Vector2d& result) {
    double distance = 0.0;
    for (std::size_t i = begin_line; i < lines.size(); ++i) {
        if (det2(lines[i].direction, lines[i].point - result) > distance) {
            std::vector<Line> proj_lines;
            proj_lines.reserve(i);
            for (std::size_t j = 0; j < i; ++j) {
                Line line;
                const double denominator = det2(lines[i].direction, lines[j].direction);
                if (std::abs(denominator) <= kLpEpsilon) {
                    if (lines[i].direction.dot(lines[j].direction) > 0.0) continue;
                    line.point = 0.5 * (lines[i].point + lines[j].point);
                } else {
                    line.point =
                        lines[i].point +
                        (det2(lines[j].direction, lines[i].point - lines[j].point) / denominator) *
                            lines[i].direction;
                }
                line.direction = (lines[j].direction - lines[i].direction).normalized();
                proj_lines.push_back(line);
            }
            const Vector2d temp = result;
            if (linear_program2(proj_lines, radius,
                                Vector2d(-lines[i].direction.y(), lines[i].direction.x()), true,
                                result) < proj_lines.size()) {
                result = temp;
            }
            distance = det2(lines[i].direction, lines[i].point - result);
        }
    }
}

}  // namespace orca_detail

/**
 * Half-plane of velocities for `self` that avoids `other` for the next tau
 * seconds under reciprocity (each agent takes half the correction). The
 * standard truncated velocity-obstacle construction; already-overlapping
 * agents get a time-step-scaled escape plane pushing them apart.
 */
inline HalfPlane orca_halfplane(const OrcaAgent& self, const OrcaAgent& other, double tau,
                                double dt) {
    Vector2d rel_pos = other.position - self.position;
    if (rel_pos.squaredNorm() < 1e-18) rel_pos = Vector2d(1e-6, 0.0);  // deterministic nudge
    const Vector2d rel_vel = self.velocity - other.velocity;
    const double dist_sq = rel_pos.squaredNorm();
    const double r = self.radius + other.radius;
    const double r_sq = r * r;

    Vector2d direction;
    Vector2d u;

    if (dist_sq > r_sq) {
        // No current collision: project the relative velocity onto the
        // boundary of the truncated cone.
        const Vector2d w = rel_vel - rel_pos / tau;
        const double w_len_sq = w.squaredNorm();
        const double dot1 = w.dot(rel_pos);
        if (dot1 < 0.0 && dot1 * dot1 > r_sq * w_len_sq) {
            // Closest to the cutoff circle.
            const double w_len = std::sqrt(w_len_sq);
            const Vector2d unit_w = w / w_len;
            direction = Vector2d(unit_w.y(), -unit_w.x());
            u = (r / tau - w_len) * unit_w;
        } else {
            // Closest to one of the legs.
            const double leg = std::sqrt(dist_sq - r_sq);
            if (orca_detail::det2(rel_pos, w) > 0.0)
                direction = Vector2d(rel_pos.x() * leg - rel_pos.y() * r,
                                     rel_pos.x() * r + rel_pos.y() * leg) /
                            dist_sq;
            else
                direction = -Vector2d(rel_pos.x() * leg + rel_pos.y() * r,
                                      -rel_pos.x() * r + rel_pos.y() * leg) /
                            dist_sq;
            const double dot2 = rel_vel.dot(direction);
            u = dot2 * direction - rel_vel;
        }
    } else {
        // Already colliding: escape over one time step.
        const double inv_dt = 1.0 / dt;
        const Vector2d w = rel_vel - rel_pos * inv_dt;
        const double w_len = w.norm();
        const Vector2d unit_w =
            w_len > 1e-12 ? Vector2d(w / w_len) : Vector2d(-rel_pos.normalized());
        direction = Vector2d(unit_w.y(), -unit_w.x());
        u = (r * inv_dt - w_len) * unit_w;
    }

    HalfPlane hp;
    hp.point = self.velocity + 0.5 * u;
    hp.normal = Vector2d(-direction.y(), direction.x());
    return hp;
}

/// Goal-seeking velocity: straight toward the goal at the preferred speed,
/// scaled down so the goal is not overshot within one step.
inline Vector2d preferred_velocity(const Vector2d& position, const Vector2d& goal,
                                   double preferred_speed, double dt) {
    const Vector2d diff = goal - position;
    const double dist = diff.norm();
    if (dist < 1e-12) return Vector2d(0.0, 0.0);
    return diff / dist * std::min(preferred_speed, dist / dt);
}

/**
 * New velocity for `self`: the closest point to the preferred velocity in
 * the intersection of all neighbor half-planes and the max-speed disk,
 * via incremental linear programming; falls back to the least-penetration
 * solution when the intersection is empty. Half-planes are processed in
 * the order the neighbors are given, so callers fix determinism by passing
 * neighbors in ascending agent order.
 */
inline Vector2d compute_velocity(const OrcaAgent& self, const std::vector<OrcaAgent>& neighbors,
                                 const OrcaAgentParams& params, const Vector2d& preferred,
                                 double dt) {
    std::vector<orca_detail::Line> lines;
    lines.reserve(neighbors.size());
    for (const OrcaAgent& other : neighbors)
        lines.push_back(orca_detail::to_line(orca_halfplane(self, other, params.time_horizon, dt)));

    Vector2d result;
    const std::size_t fail =
        orca_detail::linear_program2(lines, params.max_speed, preferred, false, result);
    if (fail < lines.size())
        orca_detail::linear_program3(lines, fail, params.max_speed, result);
    return result;
}

/// Indices of the up-to-max_neighbors nearest agents within the neighbor
/// radius, returned in ascending index order.
inline std::vector<int> select_neighbors(const Vector2d& position,
                                         const std::vector<OrcaAgent>& agents, int self_index,
                                         const OrcaAgentParams& params) {
    std::vector<std::pair<double, int>> in_range;
    for (int j = 0; j < static_cast<int>(agents.size()); ++j) {
        if (j == self_index) continue;
        double d2 = (agents[j].position - position).squaredNorm();
        if (d2 <= params.neighbor_distance * params.neighbor_distance)
            in_range.emplace_back(d2, j);
    }
    if (static_cast<int>(in_range.size()) > params.max_neighbors) {
        std::sort(in_range.begin(), in_range.end());
        in_range.resize(params.max_neighbors);
    }
    std::vector<int> idx;
    idx.reserve(in_range.size());
    for (auto& [d2, j] : in_range) idx.push_back(j);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace cbfmpc

#endif  // CBFMPC_ORCA_HPP
