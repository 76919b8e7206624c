#pragma once

// Shared helpers for trainer/adaptation tests: tiny in-memory datasets.

#include <string>
#include <vector>

#include "trajkit/scenario.hpp"
#include "trajkit/train.hpp"
#include "trajkit/window.hpp"

namespace trajkit::testutil {

// Constant-velocity windows: the future is an exact linear continuation of
// the past, so a small network can drive validation ADE near zero.
inline train::EnvDataset constant_velocity_env(const std::string& name, int n_scenes,
                                               std::uint64_t seed, double max_speed = 0.5) {
    Rng rng(seed);
    std::vector<data::TrajectoryScene> scenes;
    for (int s = 0; s < n_scenes; ++s) {
        data::TrajectoryScene scene;
        scene.scene_id = name + "#" + std::to_string(s);
        scene.environment = name;
        scene.agent_ids = {0};
        std::vector<Vec2> track;
        Vec2 p{rng.uniform(-5, 5), rng.uniform(-5, 5)};
        const Vec2 v{rng.uniform(-max_speed, max_speed), rng.uniform(-max_speed, max_speed)};
        for (int t = 0; t < data::kWindowSteps; ++t) {
            track.push_back(p);
            p += v;
        }
        scene.positions.push_back(std::move(track));
        scenes.push_back(std::move(scene));
    }
    auto windows = data::window_scenes(scenes);
    train::EnvDataset env;
    env.env = name;
    const std::size_t val = windows.size() / 5;
    env.val.assign(windows.end() - static_cast<std::ptrdiff_t>(val), windows.end());
    env.train.assign(windows.begin(), windows.end() - static_cast<std::ptrdiff_t>(val));
    return env;
}

// Small simulated environment of one separation style.
inline train::EnvDataset simulated_style_env(double d, int n_scenes, std::uint64_t seed) {
    sim::ScenarioConfig cfg;
    std::vector<data::TrajectoryScene> scenes;
    Rng base(seed);
    int index = 0;
    while (static_cast<int>(scenes.size()) < n_scenes) {
        Rng rng(base.fork(static_cast<std::uint64_t>(index++)).next());
        const int n = rng.uniform_int(2, 4);
        const auto initial = sim::generate_circle_crossing(n, cfg.circle_radius, rng.next());
        auto rollout = sim::simulate_scene(initial, sim::make_style(d), rng.next(), cfg);
        if (!rollout.accepted) continue;
        rollout.scene.environment = "style-" + std::to_string(d);
        rollout.scene.scene_id = rollout.scene.environment + "#" + std::to_string(index);
        scenes.push_back(std::move(rollout.scene));
    }
    auto windows = data::window_scenes(scenes);
    for (auto& w : windows) w.environment = scenes[0].environment;
    train::EnvDataset env;
    env.env = scenes[0].environment;
    const std::size_t val = windows.size() / 5;
    env.val.assign(windows.end() - static_cast<std::ptrdiff_t>(val), windows.end());
    env.train.assign(windows.begin(), windows.end() - static_cast<std::ptrdiff_t>(val));
    return env;
}

}  // namespace trajkit::testutil
