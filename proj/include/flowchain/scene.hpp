#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "flowchain/numcore.hpp"

namespace flowchain {

/// Gap-free track of one agent: frames[i] is sampled at positions.row(i).
struct Track {
    int agent_id = 0;
    std::vector<int> frames;
    Matrix positions;  // frames.size() x 2
};

/// Observed (and optionally future) motion around one target agent.
struct Scene {
    std::vector<Track> agents;
    std::size_t target = 0;
    int current_frame = 0;
    /// Frame-id increment between consecutive samples (0.4 s apart).
    int frame_step = 1;
    double frame_interval = 0.4;

    const Track& target_track() const { return agents.at(target); }
};

std::optional<Vec2> position_at(const Track& track, int frame);

/// The `obs_len` target positions ending at the current frame (oldest first).
/// Throws ShapeError when the history is too short or not finite.
Matrix observed_positions(const Scene& scene, int obs_len);

/// The `horizon` target positions after the current frame. Throws ShapeError when missing.
Matrix future_positions(const Scene& scene, int horizon);

/// Newest observed target position x_t.
Vec2 current_position(const Scene& scene);

/// One-agent scene over a whole trajectory, frames 0..L-1, current frame obs_len-1.
Scene single_agent_scene(const Matrix& trajectory, int obs_len, int agent_id = 0);

/// Subtracts the target's current position from every position. Returns the
/// normalized scene and the anchor needed to undo it.
std::pair<Scene, Vec2> relative_normalize(const Scene& scene);
Scene denormalize(const Scene& scene, const Vec2& anchor);

}  // namespace flowchain
