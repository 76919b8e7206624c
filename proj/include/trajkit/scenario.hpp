#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "trajkit/orca.hpp"
#include "trajkit/scene.hpp"

namespace trajkit::sim {

// Circle-crossing scenario defaults (CrowdNav-style conventions).
struct ScenarioConfig {
    double agent_radius = 0.3;
    double circle_radius = 4.0;
    double pref_speed_lo = 0.8;
    double pref_speed_hi = 1.2;
    double max_speed_factor = 1.5;
    int min_agents = 2;
    int max_agents = 6;
    double arrival_tol = 0.1;
    int step_cap = 400;
    int scene_len = 20;  // recorded steps per scene after trimming

    nlohmann::json to_json() const;
};

StyleParams make_style(double separation_d);

// Agents on the circle at perturbed angles with goals near the antipode.
// Throws after bounded retries if no overlap-free placement exists.
std::vector<AgentState> generate_circle_crossing(int n_agents, double circle_radius,
                                                 std::uint64_t seed,
                                                 const ScenarioConfig& cfg = {});

struct SceneRollout {
    data::TrajectoryScene scene;  // trimmed to cfg.scene_len steps
    bool accepted = false;
    bool arrived = false;
    int steps_simulated = 0;
    double min_pairwise_distance = 0.0;
};

// Rolls the avoidance simulation until every agent is within arrival_tol of
// its goal (agents then hold position until scene_len steps are on record) or
// the step cap is hit. The recorded track is trimmed to exactly scene_len
// steps centred on the closest inter-agent approach. A rollout that hits the
// cap before arriving, or that records fewer than scene_len steps, is flagged
// rejected so the caller can retry with a fresh seed.
SceneRollout simulate_scene(const std::vector<AgentState>& initial,
                            const StyleParams& style, std::uint64_t seed,
                            const ScenarioConfig& cfg = {});

struct DatasetCounts {
    int train = 0;
    int val = 0;
    int test = 0;
};

// Generates `train+val+test` accepted scenes of one separation style and
// writes train.tsv / val.tsv / test.tsv plus manifest.json under
// out_dir/<environment>. Returns the environment id ("style-<d>").
std::string generate_dataset(double separation_d, const DatasetCounts& counts,
                             std::uint64_t seed, const std::filesystem::path& out_dir,
                             const ScenarioConfig& cfg = {},
                             const std::optional<std::string>& env_name = std::nullopt);

}  // namespace trajkit::sim
