#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "trajkit/geometry.hpp"

namespace trajkit::data {

// One contiguous multi-agent recording: every agent covers the same gap-free
// frame range. Positions are meters.
struct TrajectoryScene {
    std::string scene_id;
    std::string environment;
    double dt = 0.4;
    std::int64_t frame0 = 0;
    std::int64_t frame_stride = 10;
    std::vector<std::int64_t> agent_ids;
    std::vector<std::vector<Vec2>> positions;  // per agent, length == length()

    int num_agents() const { return static_cast<int>(agent_ids.size()); }
    int length() const { return positions.empty() ? 0 : static_cast<int>(positions[0].size()); }
};

// Reads `frame_id agent_id x y` rows (whitespace separated, constant frame
// stride). Rows are grouped into scenes over maximal frame ranges with a
// constant set of co-present agents, so every scene is gap-free per agent.
std::vector<TrajectoryScene> load_tsv(const std::filesystem::path& file);

// Writes scenes in the same row format, positions with 6 decimal places.
void write_tsv(const std::filesystem::path& file,
               const std::vector<TrajectoryScene>& scenes);

}  // namespace trajkit::data
