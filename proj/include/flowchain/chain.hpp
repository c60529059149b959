#pragma once

#include <memory>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "flowchain/encoder.hpp"
#include "flowchain/flows.hpp"

namespace flowchain {

enum class FlowMode { cif, bijective, maf };

std::string to_string(FlowMode mode);
/// Throws ShapeError on an unknown name.
FlowMode parse_mode(const std::string& name);

struct ModelConfig {
    FlowMode mode = FlowMode::cif;
    int obs_len = 8;
    int horizon = 12;
    Index cond_dim = 64;
    Index hidden = 128;
    int depth = 3;
    int flow_layers = 3;
    bool social_pooling = false;
    /// Positions are divided by this before entering the model.
    double data_scale = 1.0;
    double init_sigma = 0.1;
    std::uint64_t seed = 0;
};

/// One link of the chain. MAF mode uses CIF layers whose inner flow is MAF.
using Stage = std::variant<BijectiveFlow, CifLayer>;

struct ParamRange {
    ParamId begin = 0;
    ParamId end = 0;
    bool contains(ParamId id) const { return id >= begin && id < end; }
};

struct FlowChainModel {
    ModelConfig config;
    ParameterSet params;
    Encoder encoder;
    std::vector<Stage> stages;
    /// 1 x 2 per-coordinate log sigma of the base Gaussian (normalized units).
    ParamId log_sigma = 0;
    ParamRange encoder_params;
    std::vector<ParamRange> stage_params;

    int horizon() const { return static_cast<int>(stages.size()); }
    Vec2 sigma() const;
};

/// Builds a model whose flows start as the identity (zero output layers).
FlowChainModel make_model(const ModelConfig& config);

/// Re-initializes every flow network with a nonzero output layer, giving a
/// random non-trivial chain (used for tests and diagnostics).
void randomize_flows(FlowChainModel& model, Rng& rng, double output_gain);

// ---------------------------------------------------------------------------
// Stage application, templated on the evaluation context.

/// `eps` is the index-variable noise (N x 2) for CIF stages; ignored otherwise.
template <class Ctx, class V>
Flowed<V> stage_forward(Ctx& ctx, const Stage& stage, const V& x, const V& cond, const V& eps)
{
    if (const auto* cif = std::get_if<CifLayer>(&stage)) return cif_forward(ctx, *cif, x, cond, eps);
    return flow_forward(ctx, std::get<BijectiveFlow>(stage), x, std::span<const V>(&cond, 1));
}

template <class Ctx, class V>
Flowed<V> stage_inverse(Ctx& ctx, const Stage& stage, const V& y, const V& cond, const V& eps)
{
    if (const auto* cif = std::get_if<CifLayer>(&stage)) return cif_inverse(ctx, *cif, y, cond, eps);
    return flow_inverse(ctx, std::get<BijectiveFlow>(stage), y, std::span<const V>(&cond, 1));
}

inline bool uses_index(const Stage& stage) { return std::holds_alternative<CifLayer>(stage); }

/// Log density of `points` (N x 2, normalized) at step `step` after `updates`
/// fast updates: inverts stages step..updates+1, then scores the result under
/// N(center, sigma). `eps[n-1]` feeds stage n. With updates = 0 and center x_t
/// this is the plain chain density.
template <class Ctx, class V>
V chain_log_density(Ctx& ctx, const FlowChainModel& model, const V& cond, const V& points, const V& center,
                    int step, int updates, std::span<const V> eps)
{
    if (step < 1 || step > model.horizon()) throw ShapeError("step " + std::to_string(step) + " out of range");
    if (updates < 0 || updates >= step) throw ShapeError("updates must be in [0, step)");
    V y = points;
    V acc{};
    bool any = false;
    for (int n = step; n > updates; --n) {
        const std::size_t i = static_cast<std::size_t>(n - 1);
        Flowed<V> r = stage_inverse(ctx, model.stages[i], y, cond, eps[i]);
        acc = any ? add(acc, r.log_det) : r.log_det;
        any = true;
        y = r.points;
    }
    const V base = diag_gaussian_logpdf(y, center, ctx.param(model.log_sigma));
    return any ? add(base, acc) : base;
}

// ---------------------------------------------------------------------------
// Prediction and the fast update. All positions are in normalized model units;
// callers translate and scale (see normalize_point / to_world_log_density).

/// Per-step sample positions and log densities. Step n lives at index n - 1 of
/// `positions`; log densities exist only for steps >= first_step.
struct DensityEstimate {
    int first_step = 1;
    std::shared_ptr<const std::vector<Matrix>> positions;
    std::vector<Vector> log_density;
    Vec2 anchor = Vec2::Zero();
    RowVector cond;

    Index samples() const { return positions->front().rows(); }
    int horizon() const { return static_cast<int>(positions->size()); }
    const Matrix& points(int step) const;
    const Vector& log_density_at(int step) const;
};

/// Cached motion trend of one prediction.
struct MotionTrendCache {
    std::shared_ptr<const std::vector<Matrix>> positions;
    /// log|det grad f_n^{-1}| at each sample, step n at index n - 1 (S entries each).
    std::shared_ptr<const std::vector<Vector>> density_change;
    Matrix base_draws;
    Vec2 sigma = Vec2::Ones();
    Vec2 anchor = Vec2::Zero();
    int updates = 0;
};

struct Prediction {
    DensityEstimate estimate;
    MotionTrendCache cache;
};

/// Samples S base points around x_t and pushes them through every stage.
Prediction predict(const FlowChainModel& model, const RowVector& cond, const Vec2& x_t, Index samples, Rng& rng);

/// Replaces the base term with N(pos_{k+1}; x_new, sigma) and re-accumulates the
/// cached terms. Evaluates no network. Throws ShapeError when no step remains.
Prediction update(const FlowChainModel& model, const MotionTrendCache& cache, const Vec2& x_new);

/// Exact (bijective) or single-sample bound (CIF) log density of each row of
/// `points`. The CIF noise is a deterministic function of (model seed, step, point).
Vector evaluate_log_density(const FlowChainModel& model, const RowVector& cond, const Vec2& x_t,
                            const Matrix& points, int step, int updates = 0);
double evaluate_log_density(const FlowChainModel& model, const RowVector& cond, const Vec2& x_t, const Vec2& point,
                            int step, int updates = 0);

struct DensityPoint {
    Vec2 position;
    double density = 0.0;
};

/// The S (position, density) pairs of one step.
std::vector<DensityPoint> density_map(const DensityEstimate& estimate, int step);

/// The first N sample trajectories, each horizon x 2.
std::vector<Matrix> best_trajectories(const DensityEstimate& estimate, Index count);

// ---------------------------------------------------------------------------
// World-frame helpers.

Vec2 normalize_point(const Vec2& world, const Vec2& anchor, double data_scale);
Vec2 world_point(const Vec2& model, const Vec2& anchor, double data_scale);
/// Converts a log density over normalized units to world units.
double to_world_log_density(double model_log_density, double data_scale);

/// Condition vector of a (world-frame) scene under the model's encoder.
RowVector encode(const FlowChainModel& model, const Scene& scene);

}  // namespace flowchain
