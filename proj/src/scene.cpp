#include "flowchain/scene.hpp"

#include <algorithm>
#include <string>

namespace flowchain {

std::optional<Vec2> position_at(const Track& track, int frame)
{
    const auto it = std::lower_bound(track.frames.begin(), track.frames.end(), frame);
    if (it == track.frames.end() || *it != frame) return std::nullopt;
    const auto i = static_cast<Index>(it - track.frames.begin());
    return Vec2(track.positions(i, 0), track.positions(i, 1));
}

namespace {

Index index_of(const Track& track, int frame)
{
    const auto it = std::lower_bound(track.frames.begin(), track.frames.end(), frame);
    if (it == track.frames.end() || *it != frame) return -1;
    return static_cast<Index>(it - track.frames.begin());
}

void check_consecutive(const Track& track, Index begin, Index count, int step)
{
    for (Index i = begin + 1; i < begin + count; ++i) {
        if (track.frames[static_cast<std::size_t>(i)] - track.frames[static_cast<std::size_t>(i - 1)] != step) {
            throw ShapeError("target track has a gap at frame " + std::to_string(track.frames[static_cast<std::size_t>(i)]));
        }
    }
}

}  // namespace

Matrix observed_positions(const Scene& scene, int obs_len)
{
    const Track& track = scene.target_track();
    const Index now = index_of(track, scene.current_frame);
    if (now < 0) throw ShapeError("target is not observed at the current frame");
    if (now + 1 < obs_len) {
        throw ShapeError("target history has " + std::to_string(now + 1) + " positions, need " +
                         std::to_string(obs_len));
    }
    const Index begin = now + 1 - obs_len;
    check_consecutive(track, begin, obs_len, scene.frame_step);
    Matrix out = track.positions.middleRows(begin, obs_len);
    if (!out.allFinite()) throw ShapeError("target history contains non-finite positions");
    return out;
}

Matrix future_positions(const Scene& scene, int horizon)
{
    const Track& track = scene.target_track();
    const Index now = index_of(track, scene.current_frame);
    if (now < 0) throw ShapeError("target is not observed at the current frame");
    if (now + horizon >= static_cast<Index>(track.frames.size())) {
        throw ShapeError("target track has fewer than " + std::to_string(horizon) + " future positions");
    }
    check_consecutive(track, now, horizon + 1, scene.frame_step);
    return track.positions.middleRows(now + 1, horizon);
}

Vec2 current_position(const Scene& scene)
{
    const auto p = position_at(scene.target_track(), scene.current_frame);
    if (!p) throw ShapeError("target is not observed at the current frame");
    return *p;
}

Scene single_agent_scene(const Matrix& trajectory, int obs_len, int agent_id)
{
    Track track;
    track.agent_id = agent_id;
    track.positions = trajectory;
    track.frames.resize(static_cast<std::size_t>(trajectory.rows()));
    for (std::size_t i = 0; i < track.frames.size(); ++i) track.frames[i] = static_cast<int>(i);
    Scene scene;
    scene.agents.push_back(std::move(track));
    scene.current_frame = obs_len - 1;
    return scene;
}

std::pair<Scene, Vec2> relative_normalize(const Scene& scene)
{
    const Vec2 anchor = current_position(scene);
    Scene out = scene;
    for (Track& t : out.agents) t.positions.rowwise() -= anchor.transpose();
    return {std::move(out), anchor};
}

Scene denormalize(const Scene& scene, const Vec2& anchor)
{
    Scene out = scene;
    for (Track& t : out.agents) t.positions.rowwise() += anchor.transpose();
    return out;
}

}  // namespace flowchain
