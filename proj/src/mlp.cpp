#include "flowchain/mlp.hpp"

#include <atomic>
#include <cmath>
#include <numeric>

namespace flowchain {

namespace {
std::atomic<std::uint64_t> g_mlp_calls{0};
}

namespace detail {
void count_mlp_call() { g_mlp_calls.fetch_add(1, std::memory_order_relaxed); }
}  // namespace detail

std::uint64_t mlp_call_count() { return g_mlp_calls.load(std::memory_order_relaxed); }

Index Mlp::input_size() const { return std::accumulate(input_blocks.begin(), input_blocks.end(), Index{0}); }

Index Mlp::output_size(const ParameterSet& params) const { return params[weights.back()].cols(); }

Mlp make_mlp(ParameterSet& params, const std::string& prefix, std::vector<Index> input_blocks,
             Index hidden, int depth, Index output)
{
    if (depth < 1) throw ShapeError("make_mlp: depth must be >= 1");
    Mlp mlp;
    mlp.input_blocks = std::move(input_blocks);
    Index in = mlp.input_size();
    for (int l = 0; l <= depth; ++l) {
        const Index out = l == depth ? output : hidden;
        const std::string tag = prefix + ".l" + std::to_string(l);
        mlp.weights.push_back(params.add(tag + ".w", Matrix::Zero(in, out)));
        mlp.biases.push_back(params.add(tag + ".b", Matrix::Zero(1, out)));
        in = out;
    }
    return mlp;
}

void init_mlp(ParameterSet& params, const Mlp& mlp, Rng& rng, double output_gain)
{
    for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
        Matrix& w = params[mlp.weights[l]];
        const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        const double gain = l + 1 == mlp.weights.size() ? output_gain : 1.0;
        std::uniform_real_distribution<double> uniform(-limit, limit);
        for (Index i = 0; i < w.size(); ++i) w.data()[i] = gain * uniform(rng);
        params[mlp.biases[l]].setZero();
    }
}

}  // namespace flowchain
