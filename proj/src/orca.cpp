#include "trajkit/orca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "trajkit/error.hpp"

namespace trajkit::sim {

namespace {

constexpr double kEps = 1e-10;

// Half-plane constraint: feasible velocities v satisfy det(direction, v - point) >= 0,
// i.e. v lies on or to the left of the directed line.
struct Line {
    Vec2 point;
    Vec2 direction;
};

// Clamp the optimum onto constraint line `line_no`, respecting all lines
// before it and the speed disc. Returns false when that segment is empty.
bool lp1(const std::vector<Line>& lines, std::size_t line_no, double radius,
         const Vec2& opt, bool direction_opt, Vec2& result) {
    const Line& ln = lines[line_no];
    const double dot = ln.point.dot(ln.direction);
    const double discriminant = dot * dot + radius * radius - ln.point.norm_sq();
    if (discriminant < 0.0) return false;  // line misses the speed disc

    const double sqrt_disc = std::sqrt(discriminant);
    double t_left = -dot - sqrt_disc;
    double t_right = -dot + sqrt_disc;

    for (std::size_t i = 0; i < line_no; ++i) {
        const double denom = ln.direction.det(lines[i].direction);
        const double numer = lines[i].direction.det(ln.point - lines[i].point);
        if (std::abs(denom) <= kEps) {
            if (numer < 0.0) return false;  // parallel and fully infeasible
            continue;
        }
        const double t = numer / denom;
        if (denom >= 0.0) {
            t_right = std::min(t_right, t);
        } else {
            t_left = std::max(t_left, t);
        }
        if (t_left > t_right) return false;
    }

    if (direction_opt) {
        result = opt.dot(ln.direction) > 0.0 ? ln.point + t_right * ln.direction
                                             : ln.point + t_left * ln.direction;
    } else {
        const double t = ln.direction.dot(opt - ln.point);
        if (t < t_left) {
            result = ln.point + t_left * ln.direction;
        } else if (t > t_right) {
            result = ln.point + t_right * ln.direction;
        } else {
            result = ln.point + t * ln.direction;
        }
    }
    return true;
}

// Incremental 2D LP over the half-planes and the speed disc. Returns the index
// of the first unsatisfiable constraint, or lines.size() on success.
std::size_t lp2(const std::vector<Line>& lines, double radius, const Vec2& opt,
                bool direction_opt, Vec2& result) {
    if (direction_opt) {
        result = opt * radius;  // opt is a unit direction
    } else if (opt.norm_sq() > radius * radius) {
        result = opt.normalized() * radius;
    } else {
        result = opt;
    }
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (lines[i].direction.det(lines[i].point - result) > 0.0) {
            const Vec2 keep = result;
            if (!lp1(lines, i, radius, opt, direction_opt, result)) {
                result = keep;
                return i;
            }
        }
    }
    return lines.size();
}

// 3D-lifted fallback: starting from the first violated constraint, move toward
// the velocity that minimizes the largest violation across the remaining
// half-planes.
void lp3(const std::vector<Line>& lines, std::size_t begin, double radius, Vec2& result) {
    double distance = 0.0;
    for (std::size_t i = begin; i < lines.size(); ++i) {
        if (lines[i].direction.det(lines[i].point - result) <= distance) continue;

        std::vector<Line> proj;
        proj.reserve(i);
        for (std::size_t j = 0; j < i; ++j) {
            Line line;
            const double determinant = lines[i].direction.det(lines[j].direction);
            if (std::abs(determinant) <= kEps) {
                if (lines[i].direction.dot(lines[j].direction) > 0.0) continue;
                line.point = 0.5 * (lines[i].point + lines[j].point);
            } else {
                line.point = lines[i].point +
                             (lines[j].direction.det(lines[i].point - lines[j].point) /
                              determinant) *
                                 lines[i].direction;
            }
            line.direction = (lines[j].direction - lines[i].direction).normalized();
            proj.push_back(line);
        }

        const Vec2 keep = result;
        const Vec2 opt_dir{-lines[i].direction.y, lines[i].direction.x};
        if (lp2(proj, radius, opt_dir, true, result) < proj.size()) {
            result = keep;
        }
        distance = lines[i].direction.det(lines[i].point - result);
    }
}

}  // namespace

Vec2 preferred_velocity(const AgentState& agent, double dt) {
    const Vec2 to_goal = agent.goal - agent.position;
    const double dist = to_goal.norm();
    if (dist < 1e-12) return {0.0, 0.0};
    const double speed = std::min(agent.pref_speed, dist / dt);
    return to_goal / dist * speed;
}

std::vector<Vec2> orca_step(const std::vector<AgentState>& agents,
                            const StyleParams& style, Rng& rng) {
    if (agents.empty()) throw ConfigError("orca_step: no agents");
    const double inv_horizon = 1.0 / style.time_horizon;
    const double inv_dt = 1.0 / style.dt;

    std::vector<Vec2> new_velocities(agents.size());
    for (std::size_t self = 0; self < agents.size(); ++self) {
        const AgentState& a = agents[self];

        std::vector<std::size_t> neighbors;
        for (std::size_t other = 0; other < agents.size(); ++other) {
            if (other == self) continue;
            const double d = distance(a.position, agents[other].position);
            if (d < 1e-9) {
                throw DegenerateError("orca_step: agents " + std::to_string(self) + " and " +
                                      std::to_string(other) + " are coincident");
            }
            if (d <= style.neighbor_range) neighbors.push_back(other);
        }
        // Constraint order does not change the 2D optimum; randomizing it keeps
        // the incremental solve at expected linear cost.
        rng.shuffle(neighbors);

        std::vector<Line> lines;
        lines.reserve(neighbors.size());
        for (std::size_t other : neighbors) {
            const AgentState& b = agents[other];
            const Vec2 rel_pos = b.position - a.position;
            const Vec2 rel_vel = a.velocity - b.velocity;
            const double dist_sq = rel_pos.norm_sq();
            const double combined_r =
                a.radius + b.radius + style.separation_d;  // r_eff = r + d/2 each
            const double combined_r_sq = combined_r * combined_r;

            Line line;
            Vec2 u;
            if (dist_sq > combined_r_sq) {
                const Vec2 w = rel_vel - inv_horizon * rel_pos;
                const double w_len_sq = w.norm_sq();
                const double dot1 = w.dot(rel_pos);
                if (dot1 < 0.0 && dot1 * dot1 > combined_r_sq * w_len_sq) {
                    // project on the cut-off circle
                    const double w_len = std::sqrt(w_len_sq);
                    const Vec2 unit_w = w / w_len;
                    line.direction = {unit_w.y, -unit_w.x};
                    u = (combined_r * inv_horizon - w_len) * unit_w;
                } else {
                    // project on a leg of the velocity-obstacle cone
                    const double leg = std::sqrt(dist_sq - combined_r_sq);
                    if (rel_pos.det(w) > 0.0) {
                        line.direction = Vec2{rel_pos.x * leg - rel_pos.y * combined_r,
                                              rel_pos.x * combined_r + rel_pos.y * leg} /
                                         dist_sq;
                    } else {
                        line.direction = -Vec2{rel_pos.x * leg + rel_pos.y * combined_r,
                                               -rel_pos.x * combined_r + rel_pos.y * leg} /
                                         dist_sq;
                    }
                    u = rel_vel.dot(line.direction) * line.direction - rel_vel;
                }
            } else {
                // already overlapping: push apart within one timestep
                const Vec2 w = rel_vel - inv_dt * rel_pos;
                const double w_len = w.norm();
                const Vec2 unit_w = w_len > kEps ? w / w_len : Vec2{1.0, 0.0};
                line.direction = {unit_w.y, -unit_w.x};
                u = (combined_r * inv_dt - w_len) * unit_w;
            }
            line.point = a.velocity + 0.5 * u;  // each agent takes half the correction
            lines.push_back(line);
        }

        const Vec2 pref = preferred_velocity(a, style.dt);
        Vec2 result;
        const std::size_t fail = lp2(lines, a.max_speed, pref, false, result);
        if (fail < lines.size()) {
            lp3(lines, fail, a.max_speed, result);
        }
        new_velocities[self] = result;
    }
    return new_velocities;
}

}  // namespace trajkit::sim
