#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "flowchain/chain.hpp"
#include "flowchain/tape.hpp"

namespace flowchain {

struct TrainConfig {
    int batch_size = 128;
    double learning_rate = 1e-4;
    int epochs = 20;
    std::uint64_t seed = 0;
    /// Epochs without validation improvement before stopping (0 disables).
    int patience = 5;
    double validation_fraction = 0.1;
    /// Abort when a batch NLL exceeds this.
    double divergence_threshold = 1e6;
    /// Stop after this many seconds of training (0 = no limit).
    double time_limit = 0.0;
    std::filesystem::path log_path;
    bool verbose = false;

    void validate() const;
};

/// Encoder inputs plus per-step targets for a set of scenes, in model units
/// (relative to each scene's x_t, divided by data_scale).
struct Batch {
    EncoderBatch encoder;
    /// targets[n - 1] is N x 2: the step-n ground truth.
    std::vector<Matrix> targets;

    Index size() const { return encoder.size(); }
};

Batch make_batch(const FlowChainModel& model, std::span<const Scene> scenes);

/// Index noise for the CIF bound of every stage loss: noise[n - 1][m - 1] feeds
/// stage m while evaluating the step-n loss (empty for non-CIF stages).
using LossNoise = std::vector<std::vector<Matrix>>;
LossNoise draw_loss_noise(const FlowChainModel& model, Index batch_size, Rng& rng);

struct StageLosses {
    /// -mean log p(step-n target), one entry per stage.
    std::vector<double> per_stage;
    double total = 0.0;
};

StageLosses nll_loss(const FlowChainModel& model, const Batch& batch, const LossNoise& noise);

/// Loss and gradients. Stage n's loss reaches stage n's flow parameters, the
/// encoder and sigma; parameters of the other stages are held fixed for it.
/// Optional `stage_weights` scale each stage's gradient contribution (the
/// reported losses stay unweighted).
StageLosses nll_loss_and_grad(const FlowChainModel& model, const Batch& batch, const LossNoise& noise,
                              Gradients& grads, std::span<const double> stage_weights = {});

struct EpochRecord {
    int epoch = 0;
    double train_nll = 0.0;
    double validation_nll = 0.0;
    double wall_time = 0.0;
    std::size_t batches = 0;
};

struct TrainReport {
    double initial_validation_nll = 0.0;
    double best_validation_nll = 0.0;
    int best_epoch = 0;
    std::vector<EpochRecord> epochs;
    std::size_t train_items = 0;
    std::size_t validation_items = 0;
};

/// Trains a fresh model (make_model(model_config)) with Adam on shuffled
/// mini-batches and returns the best-validation parameters. Throws NumericError
/// when the loss diverges.
FlowChainModel train(const std::vector<Scene>& scenes, const ModelConfig& model_config, const TrainConfig& config,
                     TrainReport* report = nullptr);

/// Mean total NLL over scenes with fixed-seed noise (deterministic).
double validation_nll(const FlowChainModel& model, std::span<const Scene> scenes, int batch_size,
                      std::uint64_t seed);

inline constexpr int kCheckpointVersion = 1;

/// Writes `dir/params.bin` and `dir/manifest.json`.
void save_checkpoint(const FlowChainModel& model, const std::filesystem::path& dir);
FlowChainModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace flowchain
