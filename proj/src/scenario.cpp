#include "trajkit/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "trajkit/error.hpp"

namespace trajkit::sim {

nlohmann::json ScenarioConfig::to_json() const {
    return {
        {"agent_radius", agent_radius},
        {"circle_radius", circle_radius},
        {"pref_speed", {pref_speed_lo, pref_speed_hi}},
        {"max_speed_factor", max_speed_factor},
        {"agents", {min_agents, max_agents}},
        {"arrival_tol", arrival_tol},
        {"step_cap", step_cap},
        {"scene_len", scene_len},
    };
}

StyleParams make_style(double separation_d) {
    if (separation_d < 0.0) throw ConfigError("separation distance must be >= 0");
    StyleParams style;
    style.separation_d = separation_d;
    return style;
}

std::vector<AgentState> generate_circle_crossing(int n_agents, double circle_radius,
                                                 std::uint64_t seed,
                                                 const ScenarioConfig& cfg) {
    if (n_agents < 2) throw ConfigError("circle crossing needs at least 2 agents");
    if (circle_radius <= 0.0) throw ConfigError("circle radius must be positive");

    Rng rng(seed);
    constexpr int kMaxRetries = 200;
    for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
        std::vector<AgentState> agents;
        agents.reserve(static_cast<std::size_t>(n_agents));
        bool ok = true;
        for (int i = 0; i < n_agents; ++i) {
            const double base = 2.0 * std::numbers::pi * i / n_agents;
            const double angle = base + rng.uniform(-0.35, 0.35);
            const double goal_angle = base + std::numbers::pi + rng.uniform(-0.35, 0.35);
            AgentState a;
            a.position = {circle_radius * std::cos(angle), circle_radius * std::sin(angle)};
            a.goal = {circle_radius * std::cos(goal_angle), circle_radius * std::sin(goal_angle)};
            a.radius = cfg.agent_radius;
            a.pref_speed = rng.uniform(cfg.pref_speed_lo, cfg.pref_speed_hi);
            a.max_speed = cfg.max_speed_factor * a.pref_speed;
            a.velocity = {0.0, 0.0};
            for (const AgentState& other : agents) {
                if (distance(a.position, other.position) <= 2.0 * cfg.agent_radius) {
                    ok = false;
                    break;
                }
            }
            if (!ok) break;
            agents.push_back(a);
        }
        if (ok) return agents;
    }
    throw DegenerateError("could not place " + std::to_string(n_agents) +
                          " agents without overlap on radius " +
                          std::to_string(circle_radius));
}

SceneRollout simulate_scene(const std::vector<AgentState>& initial,
                            const StyleParams& style, std::uint64_t seed,
                            const ScenarioConfig& cfg) {
    if (initial.empty()) throw ConfigError("simulate_scene: no agents");
    Rng rng(seed);
    std::vector<AgentState> agents = initial;
    const int n = static_cast<int>(agents.size());

    std::vector<std::vector<Vec2>> track(static_cast<std::size_t>(n));
    auto record = [&] {
        for (int a = 0; a < n; ++a) track[static_cast<std::size_t>(a)].push_back(agents[static_cast<std::size_t>(a)].position);
    };
    auto all_arrived = [&] {
        return std::all_of(agents.begin(), agents.end(), [&](const AgentState& a) {
            return distance(a.position, a.goal) <= cfg.arrival_tol;
        });
    };

    record();
    SceneRollout out;
    int step = 0;
    while (step < cfg.step_cap) {
        if (all_arrived() && static_cast<int>(track[0].size()) >= cfg.scene_len) break;
        const auto velocities = orca_step(agents, style, rng);
        for (int a = 0; a < n; ++a) {
            agents[static_cast<std::size_t>(a)].velocity = velocities[static_cast<std::size_t>(a)];
            agents[static_cast<std::size_t>(a)].position += velocities[static_cast<std::size_t>(a)] * style.dt;
        }
        record();
        ++step;
        if (!out.arrived && all_arrived()) out.arrived = true;
    }
    out.arrived = all_arrived();
    out.steps_simulated = step;

    const int recorded = static_cast<int>(track[0].size());
    // closest approach over the rollout, also the trim anchor
    double min_dist = std::numeric_limits<double>::infinity();
    int min_index = recorded / 2;
    for (int t = 0; t < recorded; ++t) {
        for (int a = 0; a < n; ++a) {
            for (int b = a + 1; b < n; ++b) {
                const double d = distance(track[static_cast<std::size_t>(a)][static_cast<std::size_t>(t)],
                                          track[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)]);
                if (d < min_dist) {
                    min_dist = d;
                    min_index = t;
                }
            }
        }
    }
    out.min_pairwise_distance = n > 1 ? min_dist : 0.0;

    if (recorded < cfg.scene_len || !out.arrived) {
        out.accepted = false;
        return out;
    }

    int begin = min_index - cfg.scene_len / 2;
    begin = std::clamp(begin, 0, recorded - cfg.scene_len);

    data::TrajectoryScene scene;
    scene.dt = style.dt;
    scene.frame0 = 0;
    scene.frame_stride = 10;
    for (int a = 0; a < n; ++a) {
        scene.agent_ids.push_back(a);
        scene.positions.emplace_back(track[static_cast<std::size_t>(a)].begin() + begin,
                                     track[static_cast<std::size_t>(a)].begin() + begin + cfg.scene_len);
    }
    out.scene = std::move(scene);
    out.accepted = true;
    return out;
}

std::string generate_dataset(double separation_d, const DatasetCounts& counts,
                             std::uint64_t seed, const std::filesystem::path& out_dir,
                             const ScenarioConfig& cfg,
                             const std::optional<std::string>& env_name) {
    if (counts.train < 1 || counts.val < 1 || counts.test < 1) {
        throw ConfigError("dataset counts must be >= 1");
    }
    const StyleParams style = make_style(separation_d);

    std::ostringstream id;
    id << "style-" << separation_d;
    const std::string environment = env_name.value_or(id.str());
    const std::filesystem::path env_dir = out_dir / environment;
    std::error_code ec;
    std::filesystem::create_directories(env_dir, ec);
    if (ec) throw IoError("cannot create " + env_dir.string());

    const int total = counts.train + counts.val + counts.test;
    std::vector<data::TrajectoryScene> scenes;
    scenes.reserve(static_cast<std::size_t>(total));
    Rng base(seed);

    int scene_index = 0;
    while (static_cast<int>(scenes.size()) < total) {
        // deterministic per-(scene, attempt) seeds so retries cannot collide
        int attempt = 0;
        for (;; ++attempt) {
            if (attempt > 100) {
                throw DegenerateError("scene generation kept getting rejected for d=" +
                                      std::to_string(separation_d));
            }
            const std::uint64_t scene_seed =
                base.fork(static_cast<std::uint64_t>(scene_index) * 1000 +
                          static_cast<std::uint64_t>(attempt)).next();
            Rng scene_rng(scene_seed);
            const int n_agents = scene_rng.uniform_int(cfg.min_agents, cfg.max_agents);
            const auto initial =
                generate_circle_crossing(n_agents, cfg.circle_radius, scene_rng.next(), cfg);
            SceneRollout rollout = simulate_scene(initial, style, scene_rng.next(), cfg);
            if (!rollout.accepted) continue;
            rollout.scene.scene_id = environment + "#" + std::to_string(scene_index);
            rollout.scene.environment = environment;
            // disjoint frame ranges per scene keep one TSV per split parseable
            rollout.scene.frame0 = static_cast<std::int64_t>(scene_index) * 1000;
            // distinct agent ids per scene
            for (auto& agent_id : rollout.scene.agent_ids) {
                agent_id += static_cast<std::int64_t>(scene_index) * 100;
            }
            scenes.push_back(std::move(rollout.scene));
            break;
        }
        ++scene_index;
    }

    const auto split_write = [&](const char* name, int from, int count) {
        std::vector<data::TrajectoryScene> part(scenes.begin() + from,
                                                scenes.begin() + from + count);
        data::write_tsv(env_dir / name, part);
    };
    split_write("train.tsv", 0, counts.train);
    split_write("val.tsv", counts.train, counts.val);
    split_write("test.tsv", counts.train + counts.val, counts.test);

    nlohmann::json manifest = {
        {"id", environment},
        {"kind", "style"},
        {"separation_d", separation_d},
        {"seed", seed},
        {"counts", {{"train", counts.train}, {"val", counts.val}, {"test", counts.test}}},
        {"style",
         {{"time_horizon", style.time_horizon},
          {"neighbor_range", style.neighbor_range},
          {"dt", style.dt}}},
        {"scenario", cfg.to_json()},
        {"source_files", {"train.tsv", "val.tsv", "test.tsv"}},
    };
    std::ofstream mf(env_dir / "manifest.json");
    if (!mf) throw IoError("cannot write manifest for " + environment);
    mf << manifest.dump(2) << "\n";
    return environment;
}

}  // namespace trajkit::sim
