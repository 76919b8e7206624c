#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "trajkit/scene.hpp"

namespace trajkit::data {

inline constexpr int kPastSteps = 8;
inline constexpr int kFutureSteps = 12;
inline constexpr int kWindowSteps = kPastSteps + kFutureSteps;
inline constexpr int kMaxNeighbors = 5;

// One training/eval example. Positions are normalized so the primary agent's
// last observed position is the origin; `origin` undoes that for metrics.
// Neighbor tracks are stored relative to the primary agent's concurrent
// position, most-distant slots zero-padded with mask 0.
struct InstanceWindow {
    std::string environment;
    std::string scene_id;
    std::int64_t agent_id = 0;
    Eigen::MatrixXd past;           // kPastSteps x 2, or x 3 with the sigma channel
    Eigen::MatrixXd future;         // kFutureSteps x 2
    Eigen::MatrixXd neighbor_past;  // (kMaxNeighbors * kPastSteps) x 2
    Eigen::VectorXd neighbor_mask;  // kMaxNeighbors
    Vec2 origin;
    // Flattened 20-step primary trajectory plus the 20-step relative track of
    // the nearest neighbor; the view used by the style encoder.
    Eigen::VectorXd style_feature;

    bool has_sigma() const { return past.cols() == 3; }
};

// Local curvature proxy per frame: squared change of the step velocity over a
// forward window of delta_t frames, sigma = alpha * (curvature + 1). Frames
// past the last valid index reuse the nearest valid value.
std::vector<double> curvature_sigma(const std::vector<Vec2>& trajectory, double alpha,
                                    int delta_t = 8);

// All maximal stride-1 sliding windows of kWindowSteps per agent. With alpha
// set, every window carries the sigma channel of its environment.
std::vector<InstanceWindow> window_scenes(const std::vector<TrajectoryScene>& scenes,
                                          std::optional<double> alpha = std::nullopt);

struct EnvironmentDataset {
    std::string id;
    std::string kind;  // "spurious" | "style" | "real"
    double parameter = 0.0;
    std::vector<InstanceWindow> windows;
};

// Tags each named subset with its spurious strength: every window gains the
// sigma channel computed with that alpha, environment ids become
// "<subset>@a<alpha>".
std::vector<EnvironmentDataset> make_spurious_environments(
    const std::map<std::string, std::vector<TrajectoryScene>>& subsets,
    const std::map<std::string, double>& alpha_by_subset);

}  // namespace trajkit::data
