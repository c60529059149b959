#include "flowchain/flows.hpp"

#include <algorithm>

namespace flowchain {

namespace {

std::vector<Index> prepend(Index first, const std::vector<Index>& rest)
{
    std::vector<Index> blocks{first};
    blocks.insert(blocks.end(), rest.begin(), rest.end());
    return blocks;
}

Vec2 to_point(const Matrix& row) { return {row(0, 0), row(0, 1)}; }

TransformResult to_result(const Flowed<Matrix>& r)
{
    if (!r.points.allFinite() || !r.log_det.allFinite()) throw NumericError("flow layer produced a non-finite value");
    return {to_point(r.points), r.log_det(0, 0)};
}

}  // namespace

Matrix to_row(const Vec2& p)
{
    Matrix m(1, 2);
    m << p.x(), p.y();
    return m;
}

CouplingLayer make_coupling(ParameterSet& params, const std::string& prefix, int pass,
                            const std::vector<Index>& cond_blocks, Index hidden, int depth)
{
    if (pass != 0 && pass != 1) throw ShapeError("make_coupling: pass must be 0 or 1");
    const auto blocks = prepend(1, cond_blocks);
    return {pass, make_mlp(params, prefix + ".scale", blocks, hidden, depth, 1),
            make_mlp(params, prefix + ".shift", blocks, hidden, depth, 1)};
}

MafLayer make_maf(ParameterSet& params, const std::string& prefix, int first, const std::vector<Index>& cond_blocks,
                  Index hidden, int depth)
{
    if (first != 0 && first != 1) throw ShapeError("make_maf: first must be 0 or 1");
    if (cond_blocks.empty()) throw ShapeError("make_maf: the first coordinate needs a condition");
    const auto second = prepend(1, cond_blocks);
    return {first,
            make_mlp(params, prefix + ".scale_a", cond_blocks, hidden, depth, 1),
            make_mlp(params, prefix + ".shift_a", cond_blocks, hidden, depth, 1),
            make_mlp(params, prefix + ".scale_b", second, hidden, depth, 1),
            make_mlp(params, prefix + ".shift_b", second, hidden, depth, 1)};
}

BijectiveFlow make_bijective_flow(ParameterSet& params, const std::string& prefix, LayerKind kind, int count,
                                  const std::vector<Index>& cond_blocks, Index hidden, int depth)
{
    BijectiveFlow flow;
    for (int i = 0; i < count; ++i) {
        const std::string name = prefix + ".layer" + std::to_string(i);
        if (kind == LayerKind::coupling)
            flow.layers.emplace_back(make_coupling(params, name, i % 2, cond_blocks, hidden, depth));
        else
            flow.layers.emplace_back(make_maf(params, name, i % 2, cond_blocks, hidden, depth));
    }
    return flow;
}

CifLayer make_cif(ParameterSet& params, const std::string& prefix, LayerKind kind, int count, Index cond_dim,
                  Index hidden, int depth)
{
    CifLayer layer;
    layer.inner = make_bijective_flow(params, prefix + ".inner", kind, count, {cond_dim, kIndexDim}, hidden, depth);
    layer.prior = make_mlp(params, prefix + ".prior", {2, cond_dim}, hidden, depth, 2 * kIndexDim);
    layer.posterior = make_mlp(params, prefix + ".posterior", {2, cond_dim}, hidden, depth, 2 * kIndexDim);
    return layer;
}

void init_flow(ParameterSet& params, const BijectiveFlow& flow, Rng& rng, double output_gain)
{
    for (const FlowLayer& layer : flow.layers) {
        std::visit(
            [&](const auto& l) {
                if constexpr (std::is_same_v<std::decay_t<decltype(l)>, CouplingLayer>) {
                    init_mlp(params, l.scale, rng, output_gain);
                    init_mlp(params, l.shift, rng, output_gain);
                } else {
                    init_mlp(params, l.scale_first, rng, output_gain);
                    init_mlp(params, l.shift_first, rng, output_gain);
                    init_mlp(params, l.scale_second, rng, output_gain);
                    init_mlp(params, l.shift_second, rng, output_gain);
                }
            },
            layer);
    }
}

void init_cif(ParameterSet& params, const CifLayer& layer, Rng& rng, double output_gain)
{
    init_flow(params, layer.inner, rng, output_gain);
    init_mlp(params, layer.prior, rng, output_gain);
    init_mlp(params, layer.posterior, rng, output_gain);
}

TransformResult coupling_forward(const ParameterSet& params, const CouplingLayer& layer, const Vec2& x,
                                 const RowVector& cond)
{
    Eval ctx(params);
    const Matrix c = cond;
    return to_result(coupling_forward(ctx, layer, to_row(x), std::span<const Matrix>(&c, 1)));
}

TransformResult coupling_inverse(const ParameterSet& params, const CouplingLayer& layer, const Vec2& y,
                                 const RowVector& cond)
{
    Eval ctx(params);
    const Matrix c = cond;
    return to_result(coupling_inverse(ctx, layer, to_row(y), std::span<const Matrix>(&c, 1)));
}

TransformResult maf_forward(const ParameterSet& params, const MafLayer& layer, const Vec2& x, const RowVector& cond)
{
    Eval ctx(params);
    const Matrix c = cond;
    return to_result(maf_forward(ctx, layer, to_row(x), std::span<const Matrix>(&c, 1)));
}

TransformResult maf_inverse(const ParameterSet& params, const MafLayer& layer, const Vec2& y, const RowVector& cond)
{
    Eval ctx(params);
    const Matrix c = cond;
    return to_result(maf_inverse(ctx, layer, to_row(y), std::span<const Matrix>(&c, 1)));
}

TransformResult flow_forward(const ParameterSet& params, const BijectiveFlow& flow, const Vec2& x,
                             const RowVector& cond)
{
    Eval ctx(params);
    const Matrix c = cond;
    return to_result(flow_forward(ctx, flow, to_row(x), std::span<const Matrix>(&c, 1)));
}

TransformResult flow_inverse(const ParameterSet& params, const BijectiveFlow& flow, const Vec2& y,
                             const RowVector& cond)
{
    Eval ctx(params);
    const Matrix c = cond;
    return to_result(flow_inverse(ctx, flow, to_row(y), std::span<const Matrix>(&c, 1)));
}

TransformResult cif_sample(const ParameterSet& params, const CifLayer& layer, const Vec2& z, const RowVector& cond,
                           Rng& rng)
{
    Eval ctx(params);
    const Matrix eps = standard_normal(rng, 1, kIndexDim);
    return to_result(cif_forward(ctx, layer, to_row(z), Matrix(cond), eps));
}

TransformResult cif_inverse_logdensity(const ParameterSet& params, const CifLayer& layer, const Vec2& x,
                                       const RowVector& cond, Rng& rng)
{
    Eval ctx(params);
    const Matrix eps = standard_normal(rng, 1, kIndexDim);
    return to_result(cif_inverse(ctx, layer, to_row(x), Matrix(cond), eps));
}

double cif_log_density_iw(const ParameterSet& params, const CifLayer& layer, const Vec2& x, const RowVector& cond,
                          const std::function<Vector(const Matrix&)>& base_logpdf, int samples, Rng& rng)
{
    if (samples < 1) throw ShapeError("cif_log_density_iw: need at least one sample");
    Eval ctx(params);
    const Matrix eps = standard_normal(rng, samples, kIndexDim);
    const Matrix xs = to_row(x).replicate(samples, 1);
    const Flowed<Matrix> r = cif_inverse(ctx, layer, xs, Matrix(cond), eps);
    const Vector terms = base_logpdf(r.points) + r.log_det.col(0);
    const double peak = terms.maxCoeff();
    return peak + std::log((terms.array() - peak).exp().mean());
}

}  // namespace flowchain
