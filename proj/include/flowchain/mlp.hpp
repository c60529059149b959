#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "flowchain/numcore.hpp"

namespace flowchain {

/// Multilayer perceptron: tanh hidden layers, identity output.
///
/// The input is supplied as a list of blocks that are conceptually concatenated
/// column-wise. The first weight matrix is split by block, so a block with a
/// single row (a condition shared by every sample) is multiplied once and
/// broadcast instead of being replicated.
struct Mlp {
    std::vector<Index> input_blocks;
    std::vector<ParamId> weights;
    std::vector<ParamId> biases;

    Index input_size() const;
    Index output_size(const ParameterSet& params) const;
};

/// Registers the parameters of an MLP with `depth` hidden layers of width `hidden`.
/// All weights start at zero; see init_mlp.
Mlp make_mlp(ParameterSet& params, const std::string& prefix, std::vector<Index> input_blocks,
             Index hidden, int depth, Index output);

/// Uniform Glorot init for hidden layers; the output layer is scaled by `output_gain`
/// (0 gives an all-zero output, the identity init used for flow networks).
void init_mlp(ParameterSet& params, const Mlp& mlp, Rng& rng, double output_gain);

/// Total number of mlp_forward calls since process start (instrumentation).
std::uint64_t mlp_call_count();

namespace detail {
void count_mlp_call();
}

template <class Ctx>
typename Ctx::Value mlp_forward(Ctx& ctx, const Mlp& mlp, std::span<const typename Ctx::Value> inputs)
{
    using V = typename Ctx::Value;
    detail::count_mlp_call();
    if (inputs.size() != mlp.input_blocks.size()) {
        throw ShapeError("mlp_forward: expected " + std::to_string(mlp.input_blocks.size()) +
                         " input blocks, got " + std::to_string(inputs.size()));
    }
    Index offset = 0;
    std::optional<V> pre;
    for (std::size_t b = 0; b < inputs.size(); ++b) {
        const Index width = mlp.input_blocks[b];
        if (inputs[b].cols() != width) {
            throw ShapeError("mlp_forward: layer 0 input block " + std::to_string(b) + " has " +
                             std::to_string(inputs[b].cols()) + " columns, expected " +
                             std::to_string(width));
        }
        V part = inputs.size() == 1 ? matmul(inputs[b], ctx.param(mlp.weights[0]))
                                    : matmul(inputs[b], row_block(ctx.param(mlp.weights[0]), offset, width));
        pre = pre ? add(*pre, part) : part;
        offset += width;
    }
    V h = add(*pre, ctx.param(mlp.biases[0]));
    for (std::size_t l = 1; l < mlp.weights.size(); ++l) {
        h = tanh(h);
        h = add(matmul(h, ctx.param(mlp.weights[l])), ctx.param(mlp.biases[l]));
    }
    return h;
}

template <class Ctx>
typename Ctx::Value mlp_forward(Ctx& ctx, const Mlp& mlp, std::initializer_list<typename Ctx::Value> inputs)
{
    return mlp_forward(ctx, mlp, std::span<const typename Ctx::Value>(inputs.begin(), inputs.size()));
}

}  // namespace flowchain
