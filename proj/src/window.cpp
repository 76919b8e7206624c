#include "trajkit/window.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "trajkit/error.hpp"

namespace trajkit::data {

std::vector<double> curvature_sigma(const std::vector<Vec2>& trajectory, double alpha,
                                    int delta_t) {
    if (alpha <= 0.0) throw ConfigError("curvature_sigma: alpha must be positive");
    const int len = static_cast<int>(trajectory.size());
    if (len < delta_t + 2) {
        throw ConfigError("curvature_sigma: trajectory of length " + std::to_string(len) +
                          " is shorter than delta_t + 2 = " + std::to_string(delta_t + 2));
    }
    // step velocities v_t = p_{t+1} - p_t, defined for t in [0, len-2]
    std::vector<Vec2> vel(static_cast<std::size_t>(len - 1));
    for (int t = 0; t + 1 < len; ++t) {
        vel[static_cast<std::size_t>(t)] = trajectory[static_cast<std::size_t>(t) + 1] - trajectory[static_cast<std::size_t>(t)];
    }
    const int last_valid = len - 2 - delta_t;  // gamma_t needs v_{t+delta_t}
    std::vector<double> sigma(static_cast<std::size_t>(len));
    for (int t = 0; t < len; ++t) {
        const int tt = std::min(t, last_valid);
        const Vec2 dv = vel[static_cast<std::size_t>(tt + delta_t)] - vel[static_cast<std::size_t>(tt)];
        const double gamma = dv.x * dv.x + dv.y * dv.y;
        sigma[static_cast<std::size_t>(t)] = alpha * (gamma + 1.0);
    }
    return sigma;
}

namespace {

InstanceWindow build_window(const TrajectoryScene& scene, int primary, int start,
                            const std::vector<std::vector<double>>& sigma) {
    const int t_last = start + kPastSteps - 1;  // last observed index
    const auto& primary_track = scene.positions[static_cast<std::size_t>(primary)];
    const Vec2 origin = primary_track[static_cast<std::size_t>(t_last)];

    InstanceWindow w;
    w.environment = scene.environment;
    w.scene_id = scene.scene_id;
    w.agent_id = scene.agent_ids[static_cast<std::size_t>(primary)];
    w.origin = origin;

    const bool with_sigma = !sigma.empty();
    w.past.resize(kPastSteps, with_sigma ? 3 : 2);
    for (int t = 0; t < kPastSteps; ++t) {
        const Vec2 p = primary_track[static_cast<std::size_t>(start + t)] - origin;
        w.past(t, 0) = p.x;
        w.past(t, 1) = p.y;
        if (with_sigma) w.past(t, 2) = sigma[static_cast<std::size_t>(primary)][static_cast<std::size_t>(start + t)];
    }
    w.future.resize(kFutureSteps, 2);
    for (int t = 0; t < kFutureSteps; ++t) {
        const Vec2 p = primary_track[static_cast<std::size_t>(start + kPastSteps + t)] - origin;
        w.future(t, 0) = p.x;
        w.future(t, 1) = p.y;
    }

    // neighbors ranked by distance to the primary at the last observed frame
    std::vector<std::pair<double, int>> ranked;
    for (int a = 0; a < scene.num_agents(); ++a) {
        if (a == primary) continue;
        const double d = distance(scene.positions[static_cast<std::size_t>(a)][static_cast<std::size_t>(t_last)],
                                  primary_track[static_cast<std::size_t>(t_last)]);
        ranked.emplace_back(d, a);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& lhs, const auto& rhs) { return lhs.first < rhs.first; });

    w.neighbor_past = Eigen::MatrixXd::Zero(kMaxNeighbors * kPastSteps, 2);
    w.neighbor_mask = Eigen::VectorXd::Zero(kMaxNeighbors);
    const int n_used = std::min<int>(kMaxNeighbors, static_cast<int>(ranked.size()));
    for (int k = 0; k < n_used; ++k) {
        const auto& track = scene.positions[static_cast<std::size_t>(ranked[static_cast<std::size_t>(k)].second)];
        w.neighbor_mask(k) = 1.0;
        for (int t = 0; t < kPastSteps; ++t) {
            const Vec2 rel = track[static_cast<std::size_t>(start + t)] - primary_track[static_cast<std::size_t>(start + t)];
            w.neighbor_past(k * kPastSteps + t, 0) = rel.x;
            w.neighbor_past(k * kPastSteps + t, 1) = rel.y;
        }
    }

    // style view: normalized 20-step primary track + relative track of the
    // nearest neighbor over the same steps (zeros when alone)
    w.style_feature = Eigen::VectorXd::Zero(2 * kWindowSteps * 2);
    for (int t = 0; t < kWindowSteps; ++t) {
        const Vec2 p = primary_track[static_cast<std::size_t>(start + t)] - origin;
        w.style_feature(2 * t) = p.x;
        w.style_feature(2 * t + 1) = p.y;
    }
    if (n_used > 0) {
        const auto& track = scene.positions[static_cast<std::size_t>(ranked[0].second)];
        for (int t = 0; t < kWindowSteps; ++t) {
            const Vec2 rel = track[static_cast<std::size_t>(start + t)] - primary_track[static_cast<std::size_t>(start + t)];
            w.style_feature(2 * kWindowSteps + 2 * t) = rel.x;
            w.style_feature(2 * kWindowSteps + 2 * t + 1) = rel.y;
        }
    }
    return w;
}

}  // namespace

std::vector<InstanceWindow> window_scenes(const std::vector<TrajectoryScene>& scenes,
                                          std::optional<double> alpha) {
    std::vector<InstanceWindow> windows;
    for (const TrajectoryScene& scene : scenes) {
        const int len = scene.length();
        if (len < kWindowSteps) continue;

        std::vector<std::vector<double>> sigma;
        if (alpha) {
            sigma.reserve(static_cast<std::size_t>(scene.num_agents()));
            for (int a = 0; a < scene.num_agents(); ++a) {
                sigma.push_back(curvature_sigma(scene.positions[static_cast<std::size_t>(a)], *alpha));
            }
        }
        for (int primary = 0; primary < scene.num_agents(); ++primary) {
            for (int start = 0; start + kWindowSteps <= len; ++start) {
                windows.push_back(build_window(scene, primary, start, sigma));
            }
        }
    }
    return windows;
}

std::vector<EnvironmentDataset> make_spurious_environments(
    const std::map<std::string, std::vector<TrajectoryScene>>& subsets,
    const std::map<std::string, double>& alpha_by_subset) {
    std::vector<EnvironmentDataset> out;
    for (const auto& [subset, alpha] : alpha_by_subset) {
        const auto it = subsets.find(subset);
        if (it == subsets.end()) {
            throw ConfigError("make_spurious_environments: unknown subset '" + subset + "'");
        }
        if (alpha <= 0.0) {
            throw ConfigError("make_spurious_environments: alpha must be positive for '" +
                              subset + "'");
        }
        std::ostringstream id;
        id << subset << "@a" << alpha;
        EnvironmentDataset env;
        env.id = id.str();
        env.kind = "spurious";
        env.parameter = alpha;
        env.windows = window_scenes(it->second, alpha);
        for (InstanceWindow& w : env.windows) w.environment = env.id;
        out.push_back(std::move(env));
    }
    return out;
}

}  // namespace trajkit::data
