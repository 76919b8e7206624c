#include "trajkit/scene.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "trajkit/error.hpp"

namespace trajkit::data {

namespace {

struct Row {
    std::int64_t frame;
    std::int64_t agent;
    double x;
    double y;
};

}  // namespace

std::vector<TrajectoryScene> load_tsv(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw MissingArtifactError("cannot open " + file.string());

    std::vector<Row> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        double frame_raw, agent_raw;
        Row r;
        if (!(ss >> frame_raw >> agent_raw >> r.x >> r.y)) {
            throw ParseError(file.string() + ":" + std::to_string(line_no) +
                             ": expected 'frame agent x y'");
        }
        r.frame = static_cast<std::int64_t>(frame_raw);
        r.agent = static_cast<std::int64_t>(agent_raw);
        rows.push_back(r);
    }
    if (rows.empty()) return {};

    // Per-agent frame sequences must be strictly increasing and gap-free at
    // the global stride.
    std::map<std::int64_t, std::vector<Row>> by_agent;
    for (const Row& r : rows) by_agent[r.agent].push_back(r);

    std::int64_t stride = 0;
    for (auto& [agent, seq] : by_agent) {
        for (std::size_t i = 1; i < seq.size(); ++i) {
            const std::int64_t diff = seq[i].frame - seq[i - 1].frame;
            if (diff <= 0) {
                throw ParseError(file.string() + ": agent " + std::to_string(agent) +
                                 " has non-monotone frames near frame " +
                                 std::to_string(seq[i].frame));
            }
            if (stride == 0 || diff < stride) stride = diff;
        }
    }
    if (stride == 0) stride = 1;  // only single-frame tracks
    for (auto& [agent, seq] : by_agent) {
        for (std::size_t i = 1; i < seq.size(); ++i) {
            if (seq[i].frame - seq[i - 1].frame != stride) {
                throw ParseError(file.string() + ": agent " + std::to_string(agent) +
                                 " has a frame gap at frame " + std::to_string(seq[i].frame));
            }
        }
    }

    // Scene segmentation: split the timeline wherever the set of present
    // agents changes; inside a segment every agent covers every frame.
    std::set<std::int64_t> frame_set;
    for (const Row& r : rows) frame_set.insert(r.frame);
    std::vector<std::int64_t> frames(frame_set.begin(), frame_set.end());

    std::map<std::int64_t, std::pair<std::int64_t, std::int64_t>> span;  // agent -> [first, last]
    for (auto& [agent, seq] : by_agent) {
        span[agent] = {seq.front().frame, seq.back().frame};
    }
    auto present_at = [&](std::int64_t frame) {
        std::vector<std::int64_t> out;
        for (const auto& [agent, fr] : span) {
            if (frame >= fr.first && frame <= fr.second) out.push_back(agent);
        }
        return out;
    };

    std::vector<TrajectoryScene> scenes;
    std::size_t start = 0;
    const std::string stem = file.stem().string();
    while (start < frames.size()) {
        const auto agents = present_at(frames[start]);
        std::size_t end = start + 1;
        while (end < frames.size() && frames[end] - frames[end - 1] == stride &&
               present_at(frames[end]) == agents) {
            ++end;
        }
        if (!agents.empty()) {
            TrajectoryScene scene;
            scene.scene_id = stem + "#" + std::to_string(scenes.size());
            scene.frame0 = frames[start];
            scene.frame_stride = stride;
            scene.agent_ids = agents;
            scene.positions.assign(agents.size(), {});
            for (std::size_t a = 0; a < agents.size(); ++a) {
                const auto& seq = by_agent[agents[a]];
                const std::size_t offset =
                    static_cast<std::size_t>((frames[start] - seq.front().frame) / stride);
                for (std::size_t t = 0; t < end - start; ++t) {
                    const Row& r = seq[offset + t];
                    if (!std::isfinite(r.x) || !std::isfinite(r.y)) {
                        throw ParseError(file.string() + ": non-finite position for agent " +
                                         std::to_string(agents[a]));
                    }
                    scene.positions[a].push_back({r.x, r.y});
                }
            }
            scenes.push_back(std::move(scene));
        }
        start = end;
    }
    return scenes;
}

void write_tsv(const std::filesystem::path& file,
               const std::vector<TrajectoryScene>& scenes) {
    std::ofstream out(file);
    if (!out) throw IoError("cannot write " + file.string());
    char buf[128];
    for (const TrajectoryScene& scene : scenes) {
        for (int t = 0; t < scene.length(); ++t) {
            const std::int64_t frame = scene.frame0 + t * scene.frame_stride;
            for (int a = 0; a < scene.num_agents(); ++a) {
                std::snprintf(buf, sizeof(buf), "%" PRId64 "\t%" PRId64 "\t%.6f\t%.6f\n",
                              frame, scene.agent_ids[a], scene.positions[a][t].x,
                              scene.positions[a][t].y);
                out << buf;
            }
        }
    }
    if (!out) throw IoError("failed writing " + file.string());
}

}  // namespace trajkit::data
