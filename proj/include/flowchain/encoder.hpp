#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowchain/mlp.hpp"
#include "flowchain/scene.hpp"

namespace flowchain {

/// Single-layer GRU over normalized displacements; gates ordered (reset, update, candidate).
struct Gru {
    Index input = 2;
    Index hidden = 0;
    ParamId w_input[3]{};
    ParamId w_hidden[3]{};
    ParamId b_input[3]{};
    ParamId b_hidden[3]{};
};

/// History encoder. With social pooling, each neighbor's (relative position,
/// velocity) at the current frame is embedded and the mean embedding is added
/// to the final GRU state.
struct Encoder {
    Gru gru;
    std::optional<Mlp> social;
    Index dim() const { return gru.hidden; }
};

inline constexpr Index kNeighborFeatures = 4;

Encoder make_encoder(ParameterSet& params, Index cond_dim, bool social_pooling);
void init_encoder(ParameterSet& params, const Encoder& encoder, Rng& rng);

/// Encoder inputs for N scenes, already normalized and divided by the data scale.
struct EncoderBatch {
    /// One N x 2 matrix per displacement step, oldest first.
    std::vector<Matrix> steps;
    /// M x 4 rows [relative position, velocity] of every neighbor in the batch.
    Matrix neighbors;
    /// N x M averaging matrix: row i holds 1/m_i on scene i's neighbors.
    Matrix pooling;

    Index size() const { return steps.empty() ? 0 : steps.front().rows(); }
};

/// Builds the batch from raw scenes. Throws ShapeError when a history is shorter
/// than `obs_len` or non-finite.
EncoderBatch make_encoder_batch(std::span<const Scene> scenes, int obs_len, double data_scale,
                                bool social_pooling);

template <class Ctx>
typename Ctx::Value gru_step(Ctx& ctx, const Gru& g, const typename Ctx::Value& x, const typename Ctx::Value& h)
{
    using V = typename Ctx::Value;
    auto gate_in = [&](int k) { return add(matmul(x, ctx.param(g.w_input[k])), ctx.param(g.b_input[k])); };
    auto gate_h = [&](int k) { return add(matmul(h, ctx.param(g.w_hidden[k])), ctx.param(g.b_hidden[k])); };
    const V r = sigmoid(add(gate_in(0), gate_h(0)));
    const V z = sigmoid(add(gate_in(1), gate_h(1)));
    const V n = tanh(add(gate_in(2), mul(r, gate_h(2))));
    // h' = (1 - z) n + z h = n + z (h - n)
    return add(n, mul(z, sub(h, n)));
}

/// N x dim condition matrix for a batch.
template <class Ctx>
typename Ctx::Value encode_batch(Ctx& ctx, const Encoder& encoder, const EncoderBatch& batch)
{
    using V = typename Ctx::Value;
    const Index n = batch.size();
    if (n == 0) throw ShapeError("encode_batch: empty batch");
    V h = ctx.constant(Matrix::Zero(n, encoder.dim()));
    for (const Matrix& step : batch.steps) h = gru_step(ctx, encoder.gru, ctx.constant(step), h);
    if (encoder.social && batch.neighbors.rows() > 0) {
        const V embedded = tanh(mlp_forward(ctx, *encoder.social, {ctx.constant(batch.neighbors)}));
        h = add(h, matmul(ctx.constant(batch.pooling), embedded));
    }
    return h;
}

/// Condition vector for one scene (plain evaluation).
RowVector encode(const ParameterSet& params, const Encoder& encoder, const Scene& scene, int obs_len,
                 double data_scale);

}  // namespace flowchain
