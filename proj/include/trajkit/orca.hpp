#pragma once

#include <vector>

#include "trajkit/geometry.hpp"
#include "trajkit/rng.hpp"

namespace trajkit::sim {

struct AgentState {
    Vec2 position;
    Vec2 velocity;
    Vec2 goal;
    double radius = 0.3;
    double pref_speed = 1.0;
    double max_speed = 1.5;
};

// Simulation style knobs. The separation distance d inflates each agent's
// effective radius by d/2 inside the reciprocal avoidance constraints, so a
// pair keeps roughly 2r + d between centers.
struct StyleParams {
    double separation_d = 0.0;
    double time_horizon = 2.0;
    double neighbor_range = 10.0;
    double dt = 0.4;
};

// Preferred velocity: straight to the goal at preferred speed, slowed on the
// final step so the agent arrives without overshooting. Zero at the goal.
Vec2 preferred_velocity(const AgentState& agent, double dt);

// One reciprocal-avoidance step: returns the new velocity of every agent, each
// solving a small 2D linear program over its avoidance half-planes (closest
// feasible velocity to the preferred one, norm capped at max speed). When the
// half-planes are jointly infeasible the solver falls back to the 3D-lifted
// program that minimizes the largest constraint violation.
std::vector<Vec2> orca_step(const std::vector<AgentState>& agents,
                            const StyleParams& style, Rng& rng);

}  // namespace trajkit::sim
