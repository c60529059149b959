#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "flowchain/scene.hpp"

namespace flowchain {

// ---------------------------------------------------------------------------
// Simfork

struct SimforkConfig {
    int trajectories = 1000;
    int obs_len = 8;
    int horizon = 12;
    /// Distance travelled per step.
    double step = 1.0;
    /// Std of the independent Gaussian noise on every position.
    double noise = 0.1;
    double fork_angle_deg = 45.0;
    /// Probability of the left (+angle) branch.
    double branch_prob = 0.5;

    void validate() const;
};

/// Isotropic Gaussian mixture in the plane.
struct GaussianMixture {
    std::vector<Vec2> means;
    std::vector<double> weights;
    double stddev = 1.0;

    double log_pdf(const Vec2& p) const;
};

/// Analytic per-step density of the future positions, step n at index n - 1.
struct GroundTruthDensity {
    std::vector<GaussianMixture> steps;
};

struct SimforkData {
    std::vector<Matrix> trajectories;  // (obs_len + horizon) x 2 each
    std::vector<int> branch;           // +1 left, -1 right
    GroundTruthDensity density;
};

/// Noise-free position of index i (0-based over obs_len + horizon) on a branch.
Vec2 simfork_skeleton(const SimforkConfig& cfg, int index, int branch);
GroundTruthDensity simfork_density(const SimforkConfig& cfg);
SimforkData gen_simfork(const SimforkConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Unicycle

struct UnicycleConfig {
    int trajectories = 1000;
    int length = 20;
    double speed = 1.0;
    double heading = 0.0;
    double yaw_rate = 0.0;
    /// Stds of the per-step perturbations of the commanded speed and yaw rate.
    double speed_noise = 0.05;
    double yaw_noise = 0.3;
    double dt = 0.4;

    void validate() const;
};

/// Exact arc integration of x' = v cos(theta), y' = v sin(theta), theta' = omega,
/// with v and omega perturbed independently at every step. Starts at the origin.
std::vector<Matrix> gen_unicycle(const UnicycleConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// TrajNet text format: one "frame agent x y" row per line.

struct TrajnetRow {
    int frame = 0;
    int agent = 0;
    double x = 0.0;
    double y = 0.0;
};

/// Throws FormatError naming the line on malformed input.
std::vector<TrajnetRow> read_trajnet_rows(const std::filesystem::path& path);
void write_trajnet_rows(const std::filesystem::path& path, const std::vector<TrajnetRow>& rows);

/// Rows for independent trajectories; trajectory i is agent i on its own disjoint
/// frame range, `frame_stride` apart.
std::vector<TrajnetRow> trajectories_to_rows(const std::vector<Matrix>& trajectories, int frame_stride = 10);

/// Groups rows into gap-free tracks and slides windows of obs_len + horizon
/// positions over every track. Neighbors are the agents present at the window's
/// current frame. Throws FormatError on non-monotone frames within an agent.
std::vector<Scene> scenes_from_rows(const std::vector<TrajnetRow>& rows, int obs_len = 8, int horizon = 12);
std::vector<Scene> load_trajnet(const std::filesystem::path& path, int obs_len = 8, int horizon = 12);

/// Files whose stem equals `held_out` form the test set. Throws
/// std::invalid_argument when no file matches.
std::pair<std::vector<std::filesystem::path>, std::vector<std::filesystem::path>> leave_one_out_split(
    const std::vector<std::filesystem::path>& files, const std::string& held_out);

/// Median observed step length over the scenes (1 when degenerate).
double estimate_data_scale(const std::vector<Scene>& scenes, int obs_len);

// ---------------------------------------------------------------------------
// Generated datasets: TrajNet file plus a JSON sidecar at "<path>.json".

std::filesystem::path sidecar_path(const std::filesystem::path& data_path);
void write_simfork(const std::filesystem::path& path, const SimforkConfig& cfg, std::uint64_t seed,
                   const SimforkData& data);
void write_unicycle(const std::filesystem::path& path, const UnicycleConfig& cfg, std::uint64_t seed,
                    const std::vector<Matrix>& trajectories);

struct SimforkSidecar {
    SimforkConfig config;
    std::uint64_t seed = 0;
    GroundTruthDensity density;
};

/// Reads the sidecar if it describes a Simfork dataset.
std::optional<SimforkSidecar> read_simfork_sidecar(const std::filesystem::path& data_path);

}  // namespace flowchain
