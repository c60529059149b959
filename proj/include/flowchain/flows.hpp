#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "flowchain/mlp.hpp"
#include "flowchain/numcore.hpp"

namespace flowchain {

/// Bound applied (smoothly) to coupling scale outputs before exponentiation.
inline constexpr double kScaleClamp = 5.0;
/// Bound applied (smoothly) to index-variable log standard deviations.
inline constexpr double kLogStdClamp = 7.0;
/// Dimension of the continuous index variable of a CIF layer.
inline constexpr Index kIndexDim = 2;

/// Affine coupling on 2D points: coordinate `pass` is copied, the other one is
/// scaled and shifted by networks that read (passed coordinate, condition blocks).
struct CouplingLayer {
    int pass = 0;
    Mlp scale;
    Mlp shift;
};

/// Two-coordinate masked autoregressive layer. Coordinate `first` is transformed
/// from the condition alone, the other one from (input of `first`, condition).
/// The forward map is parallel; the inverse solves the coordinates in order.
struct MafLayer {
    int first = 0;
    Mlp scale_first;
    Mlp shift_first;
    Mlp scale_second;
    Mlp shift_second;
};

using FlowLayer = std::variant<CouplingLayer, MafLayer>;

enum class LayerKind { coupling, maf };

struct BijectiveFlow {
    std::vector<FlowLayer> layers;
};

/// Continuously-indexed flow: an inner bijection additionally conditioned on an
/// index u, with a Gaussian prior p(u | z, c) and a Gaussian posterior q(u | y, c).
struct CifLayer {
    BijectiveFlow inner;
    Mlp prior;
    Mlp posterior;
};

/// Batched transform output. `log_det` is N x 1: the log absolute jacobian
/// determinant of the applied map, so that log p(out) = log p(in) - log_det.
/// For CIF layers it is the single-sample variational counterpart.
template <class V>
struct Flowed {
    V points;
    V log_det;
};

/// Single-point result of a layer application.
struct TransformResult {
    Vec2 point;
    double log_det = 0.0;
};

// ---------------------------------------------------------------------------
// Construction

CouplingLayer make_coupling(ParameterSet& params, const std::string& prefix, int pass,
                            const std::vector<Index>& cond_blocks, Index hidden, int depth);
MafLayer make_maf(ParameterSet& params, const std::string& prefix, int first,
                  const std::vector<Index>& cond_blocks, Index hidden, int depth);
/// `count` layers with alternating masks / orderings (0, 1, 0, ...).
BijectiveFlow make_bijective_flow(ParameterSet& params, const std::string& prefix, LayerKind kind, int count,
                                  const std::vector<Index>& cond_blocks, Index hidden, int depth);
/// Inner flow conditioned on (cond, u); prior and posterior nets read (point, cond).
CifLayer make_cif(ParameterSet& params, const std::string& prefix, LayerKind kind, int count, Index cond_dim,
                  Index hidden, int depth);

void init_flow(ParameterSet& params, const BijectiveFlow& flow, Rng& rng, double output_gain);
void init_cif(ParameterSet& params, const CifLayer& layer, Rng& rng, double output_gain);

// ---------------------------------------------------------------------------
// Batched transforms, templated on the evaluation context (Eval or Tape).

/// Diagonal Gaussian log density per row, N x 1. `mean` and `log_std` may have one row.
template <class V>
V diag_gaussian_logpdf(const V& x, const V& mean, const V& log_std)
{
    const V d = mul(sub(x, mean), exp(neg(log_std)));
    const double norm = -0.5 * static_cast<double>(x.cols()) * std::log(2.0 * std::numbers::pi);
    return shift(neg(row_sum(add(scale(square(d), 0.5), log_std))), norm);
}

namespace detail {

template <class V>
std::vector<V> with_leading(const V& first, std::span<const V> rest)
{
    std::vector<V> blocks;
    blocks.reserve(rest.size() + 1);
    blocks.push_back(first);
    blocks.insert(blocks.end(), rest.begin(), rest.end());
    return blocks;
}

template <class V>
V place(const V& kept, const V& moved, int kept_index)
{
    return kept_index == 0 ? hcat(kept, moved) : hcat(moved, kept);
}

}  // namespace detail

template <class Ctx, class V = typename Ctx::Value>
Flowed<V> coupling_forward(Ctx& ctx, const CouplingLayer& layer, const V& x, std::span<const V> cond)
{
    const V kept = col(x, layer.pass);
    const V moved = col(x, 1 - layer.pass);
    const auto inputs = detail::with_leading(kept, cond);
    const V s = soft_clamp(mlp_forward(ctx, layer.scale, std::span<const V>(inputs)), kScaleClamp);
    const V t = mlp_forward(ctx, layer.shift, std::span<const V>(inputs));
    const V out = add(mul(moved, exp(s)), t);
    return {detail::place(kept, out, layer.pass), s};
}

template <class Ctx, class V = typename Ctx::Value>
Flowed<V> coupling_inverse(Ctx& ctx, const CouplingLayer& layer, const V& y, std::span<const V> cond)
{
    const V kept = col(y, layer.pass);
    const V moved = col(y, 1 - layer.pass);
    const auto inputs = detail::with_leading(kept, cond);
    const V s = soft_clamp(mlp_forward(ctx, layer.scale, std::span<const V>(inputs)), kScaleClamp);
    const V t = mlp_forward(ctx, layer.shift, std::span<const V>(inputs));
    const V out = mul(sub(moved, t), exp(neg(s)));
    return {detail::place(kept, out, layer.pass), neg(s)};
}

template <class Ctx, class V = typename Ctx::Value>
Flowed<V> maf_forward(Ctx& ctx, const MafLayer& layer, const V& x, std::span<const V> cond)
{
    const int a = layer.first;
    const V xa = col(x, a);
    const V xb = col(x, 1 - a);
    const V sa = soft_clamp(mlp_forward(ctx, layer.scale_first, cond), kScaleClamp);
    const V ta = mlp_forward(ctx, layer.shift_first, cond);
    const auto inputs = detail::with_leading(xa, cond);
    const V sb = soft_clamp(mlp_forward(ctx, layer.scale_second, std::span<const V>(inputs)), kScaleClamp);
    const V tb = mlp_forward(ctx, layer.shift_second, std::span<const V>(inputs));
    const V ya = add(mul(xa, exp(sa)), ta);
    const V yb = add(mul(xb, exp(sb)), tb);
    return {detail::place(ya, yb, a), add(sb, sa)};
}

template <class Ctx, class V = typename Ctx::Value>
Flowed<V> maf_inverse(Ctx& ctx, const MafLayer& layer, const V& y, std::span<const V> cond)
{
    const int a = layer.first;
    const V ya = col(y, a);
    const V yb = col(y, 1 - a);
    const V sa = soft_clamp(mlp_forward(ctx, layer.scale_first, cond), kScaleClamp);
    const V ta = mlp_forward(ctx, layer.shift_first, cond);
    const V xa = mul(sub(ya, ta), exp(neg(sa)));
    const auto inputs = detail::with_leading(xa, cond);
    const V sb = soft_clamp(mlp_forward(ctx, layer.scale_second, std::span<const V>(inputs)), kScaleClamp);
    const V tb = mlp_forward(ctx, layer.shift_second, std::span<const V>(inputs));
    const V xb = mul(sub(yb, tb), exp(neg(sb)));
    return {detail::place(xa, xb, a), neg(add(sb, sa))};
}

template <class Ctx, class V = typename Ctx::Value>
Flowed<V> flow_forward(Ctx& ctx, const BijectiveFlow& flow, const V& x, std::span<const V> cond)
{
    Flowed<V> acc{x, V{}};
    bool first = true;
    for (const FlowLayer& layer : flow.layers) {
        Flowed<V> r = std::visit(
            [&](const auto& l) {
                if constexpr (std::is_same_v<std::decay_t<decltype(l)>, CouplingLayer>)
                    return coupling_forward(ctx, l, acc.points, cond);
                else
                    return maf_forward(ctx, l, acc.points, cond);
            },
            layer);
        acc.log_det = first ? r.log_det : add(acc.log_det, r.log_det);
        acc.points = r.points;
        first = false;
    }
    return acc;
}

template <class Ctx, class V = typename Ctx::Value>
Flowed<V> flow_inverse(Ctx& ctx, const BijectiveFlow& flow, const V& y, std::span<const V> cond)
{
    Flowed<V> acc{y, V{}};
    bool first = true;
    for (auto it = flow.layers.rbegin(); it != flow.layers.rend(); ++it) {
        Flowed<V> r = std::visit(
            [&](const auto& l) {
                if constexpr (std::is_same_v<std::decay_t<decltype(l)>, CouplingLayer>)
                    return coupling_inverse(ctx, l, acc.points, cond);
                else
                    return maf_inverse(ctx, l, acc.points, cond);
            },
            *it);
        acc.log_det = first ? r.log_det : add(acc.log_det, r.log_det);
        acc.points = r.points;
        first = false;
    }
    return acc;
}

/// Mean and clamped log-std of a Gaussian over the index variable.
template <class V>
struct IndexGaussian {
    V mean;
    V log_std;
};

template <class Ctx, class V = typename Ctx::Value>
IndexGaussian<V> index_gaussian(Ctx& ctx, const Mlp& net, const V& point, const V& cond)
{
    const V out = mlp_forward(ctx, net, {point, cond});
    return {cols(out, 0, kIndexDim), soft_clamp(cols(out, kIndexDim, kIndexDim), kLogStdClamp)};
}

namespace detail {

template <class Ctx, class V>
Flowed<V> cif_forward_from_prior(Ctx& ctx, const CifLayer& layer, const V& z, const V& cond,
                                 const IndexGaussian<V>& prior, const V& u)
{
    const V inner_cond[2] = {cond, u};
    Flowed<V> inner = flow_forward(ctx, layer.inner, z, std::span<const V>(inner_cond));
    const IndexGaussian<V> post = index_gaussian(ctx, layer.posterior, inner.points, cond);
    const V correction = sub(diag_gaussian_logpdf(u, prior.mean, prior.log_std),
                             diag_gaussian_logpdf(u, post.mean, post.log_std));
    return {inner.points, sub(inner.log_det, correction)};
}

template <class Ctx, class V>
Flowed<V> cif_inverse_from_posterior(Ctx& ctx, const CifLayer& layer, const V& y, const V& cond,
                                     const IndexGaussian<V>& post, const V& u)
{
    const V inner_cond[2] = {cond, u};
    Flowed<V> inner = flow_inverse(ctx, layer.inner, y, std::span<const V>(inner_cond));
    const IndexGaussian<V> prior = index_gaussian(ctx, layer.prior, inner.points, cond);
    const V correction = sub(diag_gaussian_logpdf(u, prior.mean, prior.log_std),
                             diag_gaussian_logpdf(u, post.mean, post.log_std));
    return {inner.points, add(inner.log_det, correction)};
}

}  // namespace detail

/// Sampling direction: u = mean_p + std_p * eps with (mean_p, std_p) = prior(z, c);
/// log_det = inner log-det - log p(u|z) + log q(u|y).
template <class Ctx, class V = typename Ctx::Value>
Flowed<V> cif_forward(Ctx& ctx, const CifLayer& layer, const V& z, const V& cond, const V& eps)
{
    const IndexGaussian<V> prior = index_gaussian(ctx, layer.prior, z, cond);
    const V u = add(prior.mean, mul(exp(prior.log_std), eps));
    return detail::cif_forward_from_prior(ctx, layer, z, cond, prior, u);
}

/// Density direction: u = mean_q + std_q * eps with (mean_q, std_q) = posterior(y, c);
/// log_det = inner inverse log-det + log p(u|z) - log q(u|y), whose expectation
/// over u lower-bounds the exact log-density increment.
template <class Ctx, class V = typename Ctx::Value>
Flowed<V> cif_inverse(Ctx& ctx, const CifLayer& layer, const V& y, const V& cond, const V& eps)
{
    const IndexGaussian<V> post = index_gaussian(ctx, layer.posterior, y, cond);
    const V u = add(post.mean, mul(exp(post.log_std), eps));
    return detail::cif_inverse_from_posterior(ctx, layer, y, cond, post, u);
}

template <class Ctx, class V = typename Ctx::Value>
Flowed<V> cif_forward_with_index(Ctx& ctx, const CifLayer& layer, const V& z, const V& cond, const V& u)
{
    return detail::cif_forward_from_prior(ctx, layer, z, cond, index_gaussian(ctx, layer.prior, z, cond), u);
}

template <class Ctx, class V = typename Ctx::Value>
Flowed<V> cif_inverse_with_index(Ctx& ctx, const CifLayer& layer, const V& y, const V& cond, const V& u)
{
    return detail::cif_inverse_from_posterior(ctx, layer, y, cond, index_gaussian(ctx, layer.posterior, y, cond),
                                              u);
}

// ---------------------------------------------------------------------------
// Single-point conveniences (plain evaluation).

TransformResult coupling_forward(const ParameterSet& params, const CouplingLayer& layer, const Vec2& x,
                                 const RowVector& cond);
TransformResult coupling_inverse(const ParameterSet& params, const CouplingLayer& layer, const Vec2& y,
                                 const RowVector& cond);
TransformResult maf_forward(const ParameterSet& params, const MafLayer& layer, const Vec2& x,
                            const RowVector& cond);
TransformResult maf_inverse(const ParameterSet& params, const MafLayer& layer, const Vec2& y,
                            const RowVector& cond);
TransformResult flow_forward(const ParameterSet& params, const BijectiveFlow& flow, const Vec2& x,
                             const RowVector& cond);
TransformResult flow_inverse(const ParameterSet& params, const BijectiveFlow& flow, const Vec2& y,
                             const RowVector& cond);
/// Draws u ~ p(u|z, c) and applies the indexed inner flow.
TransformResult cif_sample(const ParameterSet& params, const CifLayer& layer, const Vec2& z, const RowVector& cond,
                           Rng& rng);
/// Draws u ~ q(u|x, c), inverts the inner flow, returns z and the single-sample bound increment.
TransformResult cif_inverse_logdensity(const ParameterSet& params, const CifLayer& layer, const Vec2& x,
                                       const RowVector& cond, Rng& rng);

/// Importance-weighted estimate of log p(x) for a CIF layer over a base density:
/// log (1/K) sum_k exp(base_logpdf(z_k) + log_det_k), u_k ~ q(u|x, c). Diagnostic only;
/// K = 1 is the single-sample bound.
double cif_log_density_iw(const ParameterSet& params, const CifLayer& layer, const Vec2& x, const RowVector& cond,
                          const std::function<Vector(const Matrix&)>& base_logpdf, int samples, Rng& rng);

Matrix to_row(const Vec2& p);

}  // namespace flowchain
