#include "flowchain/encoder.hpp"

#include <cmath>

namespace flowchain {

Encoder make_encoder(ParameterSet& params, Index cond_dim, bool social_pooling)
{
    Encoder enc;
    enc.gru.hidden = cond_dim;
    const char* gates[3] = {"r", "z", "n"};
    for (int k = 0; k < 3; ++k) {
        const std::string p = std::string("encoder.gru.") + gates[k];
        enc.gru.w_input[k] = params.add(p + ".wx", Matrix::Zero(enc.gru.input, cond_dim));
        enc.gru.w_hidden[k] = params.add(p + ".wh", Matrix::Zero(cond_dim, cond_dim));
        enc.gru.b_input[k] = params.add(p + ".bx", Matrix::Zero(1, cond_dim));
        enc.gru.b_hidden[k] = params.add(p + ".bh", Matrix::Zero(1, cond_dim));
    }
    if (social_pooling) enc.social = make_mlp(params, "encoder.social", {kNeighborFeatures}, cond_dim, 1, cond_dim);
    return enc;
}

void init_encoder(ParameterSet& params, const Encoder& encoder, Rng& rng)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(encoder.gru.hidden));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (int k = 0; k < 3; ++k) {
        for (ParamId id : {encoder.gru.w_input[k], encoder.gru.w_hidden[k]}) {
            Matrix& w = params[id];
            for (Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
        }
    }
    if (encoder.social) init_mlp(params, *encoder.social, rng, 1.0);
}

EncoderBatch make_encoder_batch(std::span<const Scene> scenes, int obs_len, double data_scale,
                                bool social_pooling)
{
    if (obs_len < 2) throw ShapeError("encoder needs at least two observed positions");
    if (!(data_scale > 0.0)) throw ShapeError("data_scale must be positive");
    const auto n = static_cast<Index>(scenes.size());
    EncoderBatch batch;
    batch.steps.assign(static_cast<std::size_t>(obs_len - 1), Matrix(n, 2));
    std::vector<RowVector> rows;
    std::vector<Index> owner;
    for (Index i = 0; i < n; ++i) {
        const Scene& scene = scenes[static_cast<std::size_t>(i)];
        const Matrix obs = observed_positions(scene, obs_len);
        for (int s = 0; s + 1 < obs_len; ++s) {
            batch.steps[static_cast<std::size_t>(s)].row(i) = (obs.row(s + 1) - obs.row(s)) / data_scale;
        }
        if (!social_pooling) continue;
        const Vec2 x_t = obs.row(obs_len - 1).transpose();
        for (std::size_t a = 0; a < scene.agents.size(); ++a) {
            if (a == scene.target) continue;
            const auto p = position_at(scene.agents[a], scene.current_frame);
            if (!p || !p->allFinite()) continue;
            const auto prev = position_at(scene.agents[a], scene.current_frame - scene.frame_step);
            const Vec2 vel = (prev && prev->allFinite()) ? Vec2(*p - *prev) : Vec2::Zero();
            RowVector f(kNeighborFeatures);
            f << (p->x() - x_t.x()) / data_scale, (p->y() - x_t.y()) / data_scale, vel.x() / data_scale,
                vel.y() / data_scale;
            rows.push_back(f);
            owner.push_back(i);
        }
    }
    const auto m = static_cast<Index>(rows.size());
    batch.neighbors.resize(m, kNeighborFeatures);
    batch.pooling = Matrix::Zero(n, m);
    std::vector<Index> counts(static_cast<std::size_t>(n), 0);
    for (Index j = 0; j < m; ++j) {
        batch.neighbors.row(j) = rows[static_cast<std::size_t>(j)];
        ++counts[static_cast<std::size_t>(owner[static_cast<std::size_t>(j)])];
    }
    for (Index j = 0; j < m; ++j) {
        const Index i = owner[static_cast<std::size_t>(j)];
        batch.pooling(i, j) = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(i)]);
    }
    return batch;
}

RowVector encode(const ParameterSet& params, const Encoder& encoder, const Scene& scene, int obs_len,
                 double data_scale)
{
    Eval ctx(params);
    const EncoderBatch batch =
        make_encoder_batch(std::span<const Scene>(&scene, 1), obs_len, data_scale, encoder.social.has_value());
    const Matrix c = encode_batch(ctx, encoder, batch);
    return c.row(0);
}

}  // namespace flowchain
