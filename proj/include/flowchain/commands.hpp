#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowchain/chain.hpp"
#include "flowchain/data.hpp"

namespace flowchain {

/// Invalid command configuration (unknown key, wrong type, bad value).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Commands: gen, train, predict, eval, bench-update, export-figure-data.
const std::vector<std::string>& command_names();

/// Every key a command accepts, with its default value.
nlohmann::json default_config(const std::string& command);

/// defaults <- file <- overrides. Rejects unknown keys and type mismatches.
nlohmann::json resolve_config(const std::string& command, const nlohmann::json& file,
                              const nlohmann::json& overrides);

/// Where a command writes its resolved configuration.
std::filesystem::path resolved_config_path(const std::string& command, const nlohmann::json& config);
void write_resolved_config(const std::string& command, const nlohmann::json& config);

// Each command takes a resolved configuration and returns a JSON summary.
nlohmann::json cmd_gen(const nlohmann::json& config);
nlohmann::json cmd_train(const nlohmann::json& config);
nlohmann::json cmd_predict(const nlohmann::json& config);
nlohmann::json cmd_eval(const nlohmann::json& config);
nlohmann::json cmd_bench_update(const nlohmann::json& config);
nlohmann::json cmd_export_figure_data(const nlohmann::json& config);

nlohmann::json run_command(const std::string& command, const nlohmann::json& config);

// ---------------------------------------------------------------------------
// Shared evaluation pieces.

/// Data files named by a config entry: a file, a directory of *.txt files, or a list.
std::vector<std::filesystem::path> data_files(const nlohmann::json& data);

/// Windows of the given files, in file order.
std::vector<Scene> load_scenes(const std::vector<std::filesystem::path>& files, int obs_len, int horizon);

/// One prediction in world coordinates.
struct WorldPrediction {
    Prediction prediction;
    Vec2 anchor = Vec2::Zero();
    RowVector cond;
};

WorldPrediction predict_scene(const FlowChainModel& model, const Scene& scene, Index samples, Rng& rng);

/// Step-n sample positions in world coordinates.
Matrix world_points(const FlowChainModel& model, const WorldPrediction& p, int step);

/// World-frame log density of world points at step n (exact inversion / CIF bound).
Vector world_log_density(const FlowChainModel& model, const WorldPrediction& p, const Matrix& points, int step,
                         int updates = 0, const Vec2* center = nullptr);

struct StepEmd {
    double model = 0.0;
    double gaussian = 0.0;
};

/// EMD of the sample cloud (uniform weights) and of its single-Gaussian fit
/// against the analytic density, on a grid x grid raster of the union 4-sigma extent.
StepEmd step_emd(const Matrix& samples, const GaussianMixture& truth, int grid = 32);

struct Timing {
    double median_ms = 0.0;
    std::vector<double> runs_ms;
};

/// Runs fn `warmups` times untimed, then `reps` timed runs (steady clock).
Timing time_runs(int warmups, int reps, const std::function<void()>& fn);

}  // namespace flowchain
